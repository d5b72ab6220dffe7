//! Seeded synthetic problem instances.
//!
//! The gradient-check harness and the randomized solver suites both need
//! reproducible scenes with a plausible feasible region: the robot starts
//! inside the tracking band, the terminal state is reachable under the speed
//! limit, and obstacles keep clear of the pinned boundary states. Everything
//! is derived from a single seed.

use std::sync::Arc;

use nalgebra::{DMatrix, Vector2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::basis::{build_basis, fit_polynomial, BasisSet, TrajCoeffs};
use crate::constraints::{ConstraintParams, KinematicLimits, Obstacle, Scene};
use crate::error::Result;


/// Shape of a synthetic projection instance.
#[derive(Debug, Clone, Copy)]
pub struct InstanceConfig {
    pub seed: u64,
    pub n_obs: usize,
    pub m: usize,
    pub degree: usize,
    pub horizon_s: f64,
    /// Coefficient noise added to the straight-line base sample.
    pub sample_noise: f64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_obs: 5,
            m: 50,
            degree: 10,
            horizon_s: 5.0,
            sample_noise: 0.4,
        }
    }
}

/// A complete randomized projection problem.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub basis: Arc<BasisSet>,
    pub limits: KinematicLimits,
    pub scene: Scene,
    pub q: ConstraintParams,
    pub xi_bar: TrajCoeffs,
}

fn unit(rng: &mut ChaCha8Rng) -> Vector2<f64> {
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    Vector2::new(a.cos(), a.sin())
}

/// Generate a reproducible, feasibility-leaning instance.
pub fn random_instance(cfg: &InstanceConfig) -> Result<ProblemInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let basis = Arc::new(build_basis(cfg.horizon_s, cfg.m, cfg.degree)?);
    let horizon = cfg.horizon_s;

    let limits = KinematicLimits {
        v_max: rng.gen_range(1.5..2.2),
        a_max: rng.gen_range(2.5..4.5),
    };

    let robot_p = Vector2::zeros();
    let robot_v = unit(&mut rng) * rng.gen_range(0.0..0.2 * limits.v_max);
    let robot_a = unit(&mut rng) * rng.gen_range(0.0..0.1 * limits.a_max);

    let r0 = rng.gen_range(1.2..3.5);
    let target_p = unit(&mut rng) * r0;
    let target_v = unit(&mut rng) * rng.gen_range(0.0..0.3 * limits.v_max);

    let mut s_los_min = r0 * rng.gen_range(0.25..0.5);
    let mut s_los_max = r0 + rng.gen_range(1.0..3.0);

    let target_terminal = target_p + target_v * horizon;
    let band = s_los_max - s_los_min;
    let sep = rng.gen_range(s_los_min + 0.2 * band..s_los_max - 0.2 * band);
    // Standoff point on the robot's side of the target, the way a tracking
    // plan actually ends, rather than an arbitrary point of the annulus.
    let back = (robot_p - target_terminal).normalize();
    let tilt = rng.gen_range(-1.2..1.2f64);
    let dir = Vector2::new(
        back.x * tilt.cos() - back.y * tilt.sin(),
        back.x * tilt.sin() + back.y * tilt.cos(),
    );
    let mut pf = target_terminal + dir * sep;
    let reach = 0.4 * limits.v_max * horizon;
    if (pf - robot_p).norm() > reach {
        pf = robot_p + (pf - robot_p).normalize() * reach;
        // Re-fit the band around the adjusted terminal separation so the
        // pinned endpoint never sits outside it.
        let sep_after = (pf - target_terminal).norm();
        s_los_min = s_los_min.min((sep_after - 0.3).max(0.1));
        s_los_max = s_los_max.max(sep_after + 0.3);
    }
    let mut vf = target_v;
    if vf.norm() > 0.5 * limits.v_max {
        vf = vf.normalize() * 0.5 * limits.v_max;
    }
    let q = ConstraintParams {
        s_los_min,
        s_los_max,
        pf,
        vf,
    };

    // Constraint points mirror what the planner actually receives: LiDAR
    // returns on the boundaries of a few underlying disks, padded with
    // far-away virtual points up to the requested count. Independent disks
    // scattered at random would mostly wall off the workspace.
    let obstacle_radius = rng.gen_range(0.2..0.4);
    let clear_of_endpoints = |center: Vector2<f64>, velocity: Vector2<f64>| {
        // The pinned boundary points must stay outside the swept disk, with
        // extra margin because scan points inflate the disk by one radius.
        let swept_end = center + velocity * horizon;
        let margin = 2.0 * obstacle_radius + 0.3;
        crate::geom::point_segment_distance(robot_p, center, swept_end) > margin
            && crate::geom::point_segment_distance(pf, center, swept_end) > margin
    };
    let n_sources = 1 + (cfg.n_obs.saturating_sub(1) / 8).min(2);
    let mut sources = Vec::with_capacity(n_sources);
    // Sources sit inside the tracking annulus so avoidance maneuvers do not
    // squeeze the trajectory against a band edge; that is also where
    // occlusion-relevant obstacles live.
    let r_lo = s_los_min + 2.0 * obstacle_radius + 0.3;
    let r_hi = (s_los_max - 2.0 * obstacle_radius - 0.3).max(r_lo + 0.1);
    for _ in 0..n_sources {
        let draw = |rng: &mut ChaCha8Rng| {
            let radius = rng.gen_range(r_lo..r_hi);
            let center = target_p + unit(rng) * radius;
            let velocity = if rng.gen_bool(0.5) {
                Vector2::zeros()
            } else {
                unit(rng) * rng.gen_range(0.0..0.15)
            };
            (center, velocity)
        };
        let (mut center, mut velocity) = draw(&mut rng);
        let mut tries = 0;
        while !clear_of_endpoints(center, velocity) && tries < 30 {
            let (c, v) = draw(&mut rng);
            center = c;
            velocity = v;
            tries += 1;
        }
        if tries == 30 {
            center = Vector2::new(9.0, 9.0);
            velocity = Vector2::zeros();
        }
        sources.push(Obstacle { center, velocity });
    }
    let mut obstacles = Vec::with_capacity(cfg.n_obs);
    for i in 0..cfg.n_obs {
        let src = sources[i % n_sources];
        // Boundary return biased toward the robot-facing side.
        let facing = (robot_p - src.center).y.atan2((robot_p - src.center).x);
        let angle = facing + rng.gen_range(-0.9..0.9);
        let point = src.center + Vector2::new(angle.cos(), angle.sin()) * obstacle_radius;
        obstacles.push(Obstacle {
            center: point,
            velocity: src.velocity,
        });
    }

    let scene = Scene {
        robot_p,
        robot_v,
        robot_a,
        target_p,
        target_v,
        obstacles,
        obstacle_radius,
    };

    // Base sample: straight line toward the terminal point plus coefficient
    // noise, like the planner's base distribution.
    let pts = DMatrix::from_fn(basis.m, 2, |i, axis| {
        let s = basis.times[i] / horizon;
        let p = robot_p + (pf - robot_p) * s;
        if axis == 0 {
            p.x
        } else {
            p.y
        }
    });
    let mut xi_bar = fit_polynomial(&pts, &basis)?;
    if cfg.sample_noise > 0.0 {
        // Noise shrinks with coefficient degree: high powers carry huge
        // second-derivative gains, and uniform noise there swamps the sample
        // with sustained acceleration saturation no real sampler produces.
        for k in 0..xi_bar.n_coeffs() {
            let amp = cfg.sample_noise / (1.0 + k as f64);
            xi_bar.cx[k] += rng.gen_range(-amp..amp);
            xi_bar.cy[k] += rng.gen_range(-amp..amp);
        }
    }

    Ok(ProblemInstance {
        basis,
        limits,
        scene,
        q,
        xi_bar,
    })
}

/// An arbitrary parameter vector that satisfies only the type invariants
/// (positive ordered band, finite terminal state). Used to probe that the
/// solver iterates stay finite no matter what a decoder predicts.
pub fn random_q(rng: &mut ChaCha8Rng) -> ConstraintParams {
    let s_los_min = rng.gen_range(0.01..5.0);
    ConstraintParams {
        s_los_min,
        s_los_max: s_los_min + rng.gen_range(0.01..10.0),
        pf: Vector2::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)),
        vf: Vector2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
    }
}
