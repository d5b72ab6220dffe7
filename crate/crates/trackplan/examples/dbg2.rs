use std::path::Path;
use trackplan::scenario::{load_decoder, load_scenario};
use trackplan::sim::{Episode, PolicyArm};
use trackplan::basis::build_basis;

fn main() {
    let dec = load_decoder(Path::new("/tmp/decoder.txt")).unwrap();
    for name in ["scenarios/heldout/h03_scatter.toml", "scenarios/heldout/h02_dynamic_cross_fast.toml"] {
        let sc = load_scenario(Path::new(name)).unwrap();
        let ep = Episode::new(&sc, PolicyArm::Base, 0).unwrap();
        let scene = ep.observe();
        let basis = build_basis(sc.planner.horizon_s, sc.planner.m, sc.planner.degree).unwrap();
        let out = dec.forward(&scene, &basis).unwrap();
        let nom = trackplan::policy::nominal_q(&scene, 5.0);
        println!("{name}:");
        println!("  learned q: band [{:.2}, {:.2}] pf ({:.2},{:.2}) vf ({:.2},{:.2})",
            out.q.s_los_min, out.q.s_los_max, out.q.pf.x, out.q.pf.y, out.q.vf.x, out.q.vf.y);
        println!("  nominal q: band [{:.2}, {:.2}] pf ({:.2},{:.2}) vf ({:.2},{:.2})",
            nom.s_los_min, nom.s_los_max, nom.pf.x, nom.pf.y, nom.vf.x, nom.vf.y);
        println!("  warm lambda0 norm {:.3}, xi0 offset {:.3}", out.lambda0.norm(), (out.xi0.stacked() - out.xi_bar.stacked()).norm());
    }
}
