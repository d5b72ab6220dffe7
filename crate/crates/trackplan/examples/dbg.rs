use trackplan::synth::InstanceConfig;
use trackplan::unroll::{grad_check, GradCheckConfig};

fn main() {
    let mut errs = Vec::new();
    let t0 = std::time::Instant::now();
    for seed in 0..100u64 {
        let report = grad_check(&GradCheckConfig {
            instance: InstanceConfig { seed, n_obs: 1 + (seed as usize * 3) % 8, ..Default::default() },
            h: 1e-5,
            k_train: 10,
        }).unwrap();
        errs.push((report.max_rel_err(), seed, report.total_excluded()));
    }
    errs.sort_by(|a, b| b.0.total_cmp(&a.0));
    println!("elapsed {:?}", t0.elapsed());
    println!("worst 10 (err, seed, excluded):");
    for e in errs.iter().take(10) { println!("  {:.3e} seed {} excl {}", e.0, e.1, e.2); }
    let over = errs.iter().filter(|e| e.0 > 1e-4).count();
    println!("over 1e-4: {over}/100");
}
