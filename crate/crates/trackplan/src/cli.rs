//! Command implementations behind the binary. Each returns a process exit
//! code: 0 success, 1 configuration/scenario error, 2 planner hard failure.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::learner::{generate_demonstrations, train, TrainConfig};
use crate::policy::TrainedDecoder;
use crate::scenario::{
    dataset_from_string, dataset_to_string, load_decoder, load_scenario, log_to_csv,
    loss_curve_to_csv, metrics_to_csv, save_decoder, table_row, write_atomic, Scenario,
    TABLE_HEADER,
};
use crate::sim::{run_episode, PolicyArm, RunMetrics};
use crate::synth::InstanceConfig;
use crate::unroll::{grad_check, GradCheckConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_PLANNER: i32 = 2;

/// Planner arm selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ArmKind {
    Base,
    Trained,
    AblationFixedQ,
    RawUnprojected,
}

impl ArmKind {
    pub fn name(self) -> &'static str {
        match self {
            ArmKind::Base => "base",
            ArmKind::Trained => "trained",
            ArmKind::AblationFixedQ => "ablation-fixed-q",
            ArmKind::RawUnprojected => "raw-unprojected",
        }
    }

    fn build(self, decoder: Option<&TrainedDecoder>) -> Result<PolicyArm> {
        Ok(match self {
            ArmKind::Base => PolicyArm::Base,
            ArmKind::RawUnprojected => PolicyArm::RawUnprojected,
            ArmKind::Trained => PolicyArm::Trained(required_decoder(decoder)?),
            ArmKind::AblationFixedQ => PolicyArm::AblationFixedQ(required_decoder(decoder)?),
        })
    }
}

fn required_decoder(decoder: Option<&TrainedDecoder>) -> Result<TrainedDecoder> {
    decoder.cloned().ok_or_else(|| {
        Error::Scenario("this policy arm needs --decoder <weights file>".into())
    })
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Scenario(_)
        | Error::MalformedFile(_)
        | Error::MalformedLog(_)
        | Error::Io(_)
        | Error::EmptyDataset
        | Error::InvalidArgument(_) => EXIT_CONFIG,
        _ => EXIT_PLANNER,
    }
}

/// Run one scenario with one policy arm; write `log.csv` and `metrics.csv`
/// into the output directory.
pub fn cmd_simulate(
    scenario_path: &Path,
    out_dir: &Path,
    arm: ArmKind,
    seed: Option<u64>,
    decoder_path: Option<&Path>,
) -> i32 {
    match simulate_inner(scenario_path, out_dir, arm, seed, decoder_path) {
        Ok(metrics) => {
            println!(
                "{}: occlusion {:.3} s, collisions {}, success {}",
                arm.name(),
                metrics.occlusion_time_s,
                metrics.collision_count,
                metrics.success
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("simulate failed: {e}");
            exit_code_for(&e)
        }
    }
}

fn simulate_inner(
    scenario_path: &Path,
    out_dir: &Path,
    arm: ArmKind,
    seed: Option<u64>,
    decoder_path: Option<&Path>,
) -> Result<RunMetrics> {
    let scenario = load_scenario(scenario_path)?;
    let decoder = decoder_path.map(load_decoder).transpose()?;
    let seed = seed.unwrap_or(scenario.planner.seed);
    let policy = arm.build(decoder.as_ref())?;
    let (metrics, log) = run_episode(&scenario, policy, seed)?;
    std::fs::create_dir_all(out_dir)?;
    write_atomic(&out_dir.join("log.csv"), log_to_csv(&log).as_bytes())?;
    write_atomic(&out_dir.join("metrics.csv"), metrics_to_csv(&metrics).as_bytes())?;
    Ok(metrics)
}

/// Gradient check over seeded random instances; prints one row per decoder
/// output group and exits 0 iff every checked coordinate is within 1e-4.
pub fn cmd_gradcheck(k_train: usize, instances: usize, h: f64) -> i32 {
    match gradcheck_inner(k_train, instances, h) {
        Ok(pass) => {
            if pass {
                EXIT_OK
            } else {
                EXIT_CONFIG
            }
        }
        Err(e) => {
            eprintln!("gradcheck failed: {e}");
            exit_code_for(&e)
        }
    }
}

fn gradcheck_inner(k_train: usize, instances: usize, h: f64) -> Result<bool> {
    const THRESHOLD: f64 = 1e-4;
    struct GroupAgg {
        name: &'static str,
        checked: usize,
        excluded: usize,
        max_err: f64,
        worst_seed: u64,
    }
    let mut agg: Vec<GroupAgg> = ["xi_bar", "q", "xi0", "lambda0"]
        .iter()
        .map(|name| GroupAgg {
            name,
            checked: 0,
            excluded: 0,
            max_err: 0.0,
            worst_seed: 0,
        })
        .collect();
    for seed in 0..instances as u64 {
        let report = grad_check(&GradCheckConfig {
            instance: InstanceConfig {
                seed,
                n_obs: 1 + (seed as usize * 3) % 8,
                ..Default::default()
            },
            h,
            k_train,
        })?;
        for (slot, group) in report.groups.iter().enumerate() {
            let a = &mut agg[slot];
            a.checked += group.checked;
            a.excluded += group.excluded;
            if group.max_rel_err > a.max_err {
                a.max_err = group.max_rel_err;
                a.worst_seed = seed;
            }
        }
    }
    println!("gradient check: {instances} instances, k={k_train}, h={h:.0e}");
    println!("{:<10} {:>8} {:>9} {:>13} {:>11}", "group", "checked", "excluded", "max_rel_err", "worst_seed");
    let mut pass = true;
    for a in &agg {
        println!(
            "{:<10} {:>8} {:>9} {:>13.3e} {:>11}",
            a.name, a.checked, a.excluded, a.max_err, a.worst_seed
        );
        if a.max_err > THRESHOLD {
            pass = false;
        }
    }
    println!(
        "result: {}",
        if pass { "PASS (<= 1e-4)" } else { "FAIL (> 1e-4)" }
    );
    Ok(pass)
}

/// Train a decoder from a dataset file or by generating demonstrations from
/// a scenario suite first.
#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    dataset_path: Option<&Path>,
    generate_suite: Option<&Path>,
    oracle_n: usize,
    config_path: Option<&Path>,
    out_path: &Path,
    curve_path: Option<&Path>,
    dataset_out: Option<&Path>,
) -> i32 {
    match train_inner(
        dataset_path,
        generate_suite,
        oracle_n,
        config_path,
        out_path,
        curve_path,
        dataset_out,
    ) {
        Ok((initial, last)) => {
            println!("training done: first epoch loss {initial:.4}, last {last:.4}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("train failed: {e}");
            exit_code_for(&e)
        }
    }
}

fn train_inner(
    dataset_path: Option<&Path>,
    generate_suite: Option<&Path>,
    oracle_n: usize,
    config_path: Option<&Path>,
    out_path: &Path,
    curve_path: Option<&Path>,
    dataset_out: Option<&Path>,
) -> Result<(f64, f64)> {
    let dataset = match (dataset_path, generate_suite) {
        (Some(path), None) => dataset_from_string(&std::fs::read_to_string(path)?)?,
        (None, Some(dir)) => {
            let suite = load_suite(dir)?;
            let ds = generate_demonstrations(&suite, oracle_n, 0)?;
            if let Some(out) = dataset_out {
                write_atomic(out, dataset_to_string(&ds).as_bytes())?;
            }
            ds
        }
        _ => {
            return Err(Error::Scenario(
                "provide exactly one of --dataset or --generate".into(),
            ))
        }
    };
    if dataset.demos.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cfg = match config_path {
        Some(p) => toml::from_str::<TrainConfig>(&std::fs::read_to_string(p)?)
            .map_err(|e| Error::MalformedFile(format!("train config: {e}")))?,
        None => TrainConfig::default(),
    };
    let mut decoder = TrainedDecoder::zeros(dataset.degree + 1);
    let curve = train(&mut decoder, &dataset, &cfg)?;
    save_decoder(&decoder, out_path)?;
    if let Some(p) = curve_path {
        write_atomic(p, loss_curve_to_csv(&curve).as_bytes())?;
    }
    Ok((curve[0], *curve.last().unwrap()))
}

/// All `.toml` scenarios in a directory, sorted by file name.
pub fn load_suite(dir: &Path) -> Result<Vec<Scenario>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_scenario(p)).collect()
}

/// Run every scenario of a suite against every policy arm and emit one
/// comparison table plus per-run metrics files.
pub fn cmd_benchmark(
    suite_dir: &Path,
    out_dir: &Path,
    seeds: usize,
    decoder_path: Option<&Path>,
) -> i32 {
    match benchmark_inner(suite_dir, out_dir, seeds, decoder_path) {
        Ok((rows, failures)) => {
            if failures > 0 {
                eprintln!("benchmark: {failures} run(s) failed, see stderr above");
            }
            if rows == 0 {
                eprintln!("benchmark: all runs failed");
                EXIT_PLANNER
            } else {
                println!("benchmark: {rows} rows written");
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("benchmark failed: {e}");
            exit_code_for(&e)
        }
    }
}

fn benchmark_inner(
    suite_dir: &Path,
    out_dir: &Path,
    seeds: usize,
    decoder_path: Option<&Path>,
) -> Result<(usize, usize)> {
    let suite = load_suite(suite_dir)?;
    if suite.is_empty() {
        return Err(Error::Scenario(format!(
            "no scenarios found in {}",
            suite_dir.display()
        )));
    }
    let decoder = decoder_path.map(load_decoder).transpose()?;
    let mut arms = vec![ArmKind::Base, ArmKind::RawUnprojected];
    if decoder.is_some() {
        arms.push(ArmKind::Trained);
        arms.push(ArmKind::AblationFixedQ);
    }
    std::fs::create_dir_all(out_dir)?;

    let mut jobs = Vec::new();
    for scenario in &suite {
        for &arm in &arms {
            for seed in 0..seeds as u64 {
                jobs.push((scenario, arm, seed));
            }
        }
    }
    let results: Vec<(String, &'static str, u64, Result<RunMetrics>)> = jobs
        .par_iter()
        .map(|(scenario, arm, seed)| {
            let outcome = arm
                .build(decoder.as_ref())
                .and_then(|policy| run_episode(scenario, policy, *seed))
                .map(|(metrics, _)| metrics);
            (scenario.name.clone(), arm.name(), *seed, outcome)
        })
        .collect();

    let mut table = String::from(TABLE_HEADER);
    table.push('\n');
    let mut rows = 0;
    let mut failures = 0;
    for (name, arm, seed, outcome) in results {
        match outcome {
            Ok(metrics) => {
                table.push_str(&table_row(&name, arm, seed, &metrics));
                let file = out_dir.join(format!("{name}_{arm}_s{seed}_metrics.csv"));
                write_atomic(&file, metrics_to_csv(&metrics).as_bytes())?;
                rows += 1;
            }
            Err(e) => {
                eprintln!("benchmark: {name}/{arm}/seed {seed}: {e}");
                failures += 1;
            }
        }
    }
    write_atomic(&out_dir.join("table.csv"), table.as_bytes())?;
    Ok((rows, failures))
}

/// Debug view of a single projection: plan once at the scenario's initial
/// state and print the residual trace of the selected candidate.
pub fn cmd_project(scenario_path: &Path, seed: Option<u64>) -> i32 {
    match project_inner(scenario_path, seed) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("project failed: {e}");
            exit_code_for(&e)
        }
    }
}

fn project_inner(scenario_path: &Path, seed: Option<u64>) -> Result<()> {
    use crate::basis::build_basis;
    use crate::constraints::KinematicLimits;
    use crate::policy::{nominal_mean, nominal_q};
    use crate::projection::{project, ProjectionWorkspace};
    use crate::sim::{Episode, PolicyArm as Arm};
    use std::sync::Arc;

    let scenario = load_scenario(scenario_path)?;
    let seed = seed.unwrap_or(scenario.planner.seed);
    let ep = Episode::new(&scenario, Arm::Base, seed)?;
    let scene = ep.observe();
    let p = &scenario.planner;
    let basis = Arc::new(build_basis(p.horizon_s, p.m, p.degree)?);
    let limits = KinematicLimits {
        v_max: scenario.limits.v_max,
        a_max: scenario.limits.a_max,
    };
    let ws =
        ProjectionWorkspace::prefactorize(basis.clone(), p.n_obs, limits, p.rho, p.k_iters)?;
    let (xi_bar, _) = nominal_mean(&scene, &basis)?;
    let q = nominal_q(&scene, p.horizon_s);
    let res = project(&ws, &xi_bar, &q, &scene, None)?;
    println!(
        "projection of the nominal sample ({} iterations, rho {}):",
        res.iterations_run, p.rho
    );
    println!("{:>6} {:>14} {:>14}", "iter", "polar_residual", "max_violation");
    let h = &res.residual_history;
    for (k, r) in h.iter().enumerate() {
        if k < 3 || k + 3 >= h.len() || k % 20 == 0 {
            println!("{:>6} {:>14.4e} {:>14.4e}", k, r.polar_residual, r.max_violation);
        }
    }
    Ok(())
}
