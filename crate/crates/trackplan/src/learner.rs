//! Demonstration generation and decoder training.
//!
//! Demonstrations come from a high-sample oracle run of the same planner:
//! every planning cycle of a scripted episode records the robot-centered
//! scene and the selected trajectory. The decoder is then fit by gradient
//! descent on a reconstruction loss against the expert positions plus a
//! squared hinge penalty on raw constraint violations, with exact gradients
//! flowing through the unrolled projection.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;

use crate::basis::{build_basis, eval_trajectory, BasisSet};
use crate::constraints::{penalty_gradient, KinematicLimits, Scene};
use crate::error::{Error, Result};
use crate::policy::{predict_target, TrainedDecoder};
use crate::projection::ProjectionWorkspace;
use crate::scenario::Scenario;
use crate::sim::{Episode, PolicyArm};
use crate::unroll::{backward, project_with_tape};

/// Expert demonstrations must satisfy kinematic and clearance constraints to
/// at most this violation (m, m/s, m/s^2 per group).
pub const DEMO_MAX_VIOLATION: f64 = 0.05;

/// One planning cycle worth of expert data, in the robot-centered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub scene: Scene,
    pub limits: KinematicLimits,
    /// Expert trajectory positions, `m x 2`.
    pub tau: DMatrix<f64>,
    pub expert_cost: f64,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Unroll length inside the loss.
    pub k_train: usize,
    /// Weight of the squared violation penalty.
    pub penalty_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            epochs: 300,
            batch_size: 8,
            k_train: 15,
            penalty_weight: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) && self.learning_rate != 0.0 {
            return Err(Error::InvalidArgument("learning rate must be >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.k_train == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch size and unroll length must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A demonstration dataset together with the planner shape it was collected
/// under; training must reuse the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub horizon_s: f64,
    pub m: usize,
    pub degree: usize,
    pub n_obs: usize,
    pub demos: Vec<Demonstration>,
}

/// Run the oracle planner (the base sampler with a large candidate budget and
/// hand-fixed nominal parameters) over every scripted scenario and record one
/// demonstration per planning cycle. Cycles whose selected trajectory breaks
/// the kinematic or clearance constraints are discarded. All scenarios must
/// share one planner shape.
pub fn generate_demonstrations(
    suite: &[Scenario],
    oracle_n: usize,
    seed: u64,
) -> Result<Dataset> {
    if oracle_n == 0 {
        return Err(Error::InvalidArgument("oracle needs at least one sample".into()));
    }
    let shape = suite.first().map(|sc| {
        (
            sc.planner.horizon_s,
            sc.planner.m,
            sc.planner.degree,
            sc.planner.n_obs,
        )
    });
    let (horizon_s, m, degree, n_obs) = shape.unwrap_or_else(|| {
        let d = crate::scenario::PlannerConfig::default();
        (d.horizon_s, d.m, d.degree, d.n_obs)
    });
    let mut demos = Vec::new();
    for (idx, scenario) in suite.iter().enumerate() {
        let p = &scenario.planner;
        if (p.horizon_s, p.m, p.degree, p.n_obs) != (horizon_s, m, degree, n_obs) {
            return Err(Error::Scenario(format!(
                "scenario {} uses a different planner shape than the first",
                scenario.name
            )));
        }
        let mut oracle_scenario = scenario.clone();
        oracle_scenario.planner.samples = oracle_n;
        let mut ep = Episode::new(&oracle_scenario, PolicyArm::Base, seed + idx as u64)?;
        let basis = build_basis(horizon_s, m, degree)?;
        let limits = KinematicLimits {
            v_max: scenario.limits.v_max,
            a_max: scenario.limits.a_max,
        };
        let mut recorded = 0usize;
        while !ep.done() {
            ep.step()?;
            if let Some(cycle) = ep.last_cycle() {
                if cycle.cycle_index < recorded {
                    continue; // a new cycle has not happened yet
                }
                recorded = cycle.cycle_index + 1;
                if cycle.max_violation > DEMO_MAX_VIOLATION {
                    continue;
                }
                let sampled = eval_trajectory(&cycle.xi, &basis)?;
                demos.push(Demonstration {
                    scene: cycle.scene.clone(),
                    limits,
                    tau: sampled.pos.clone(),
                    expert_cost: cycle.cost,
                });
            }
        }
    }
    Ok(Dataset {
        horizon_s,
        m,
        degree,
        n_obs,
        demos,
    })
}

/// Loss of one demonstration through the decoder and the unrolled
/// projection, with the gradient w.r.t. the decoder weights.
///
/// `loss = || sampled positions - tau ||^2 + c_pen * sum(max(0, g)^2)`.
pub fn training_loss(
    decoder: &TrainedDecoder,
    demo: &Demonstration,
    ws: &ProjectionWorkspace,
    k_train: usize,
    penalty_weight: f64,
) -> Result<(f64, DMatrix<f64>)> {
    let basis = &ws.basis;
    let out = decoder.forward(&demo.scene, basis)?;
    let (res, tape) = project_with_tape(
        ws,
        &out.xi_bar,
        &out.q,
        &demo.scene,
        Some((&out.xi0, &out.lambda0)),
        k_train,
    )?;
    let sampled = eval_trajectory(&res.xi, basis)?;
    let target = predict_target(demo.scene.target_p, demo.scene.target_v, basis);

    // Reconstruction term and its seed.
    let rx = sampled.pos.column(0) - demo.tau.column(0);
    let ry = sampled.pos.column(1) - demo.tau.column(1);
    let rec_loss = rx.norm_squared() + ry.norm_squared();
    let n_c = basis.n_coeffs();
    let mut dl_dxi = DVector::zeros(2 * n_c);
    dl_dxi
        .rows_mut(0, n_c)
        .gemv_tr(2.0, &basis.w, &rx.into_owned(), 0.0);
    dl_dxi
        .rows_mut(n_c, n_c)
        .gemv_tr(2.0, &basis.w, &ry.into_owned(), 0.0);

    // Penalty term: gradient w.r.t. the projected coefficients plus the
    // direct dependence on the band bounds.
    let (penalty, pen_grad, pen_d_smin, pen_d_smax) = penalty_gradient(
        &res.xi,
        &demo.scene,
        &out.q,
        &demo.limits,
        basis,
        &target,
    )?;
    dl_dxi += penalty_weight * pen_grad;

    let loss = rec_loss + penalty_weight * penalty;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            iteration: k_train,
            stage: "training loss",
        });
    }

    let mut grads = backward(&tape, &dl_dxi)?;
    grads.d_q.s_los_min += penalty_weight * pen_d_smin;
    grads.d_q.s_los_max += penalty_weight * pen_d_smax;
    let d_weights = decoder.backward(&out, &grads.d_xi_bar, &grads.d_q, &grads.d_xi0, &grads.d_lambda0);
    Ok((loss, d_weights))
}

/// Workspaces keyed by kinematic limits; the factorization itself does not
/// depend on the limits, but the workspace carries them for instance bounds.
struct WsCache {
    basis: Arc<BasisSet>,
    n_obs: usize,
    rho: f64,
    k_train: usize,
    entries: Vec<(KinematicLimits, Arc<ProjectionWorkspace>)>,
}

impl WsCache {
    fn get(&mut self, limits: KinematicLimits) -> Result<Arc<ProjectionWorkspace>> {
        if let Some((_, ws)) = self
            .entries
            .iter()
            .find(|(l, _)| l.v_max.to_bits() == limits.v_max.to_bits() && l.a_max.to_bits() == limits.a_max.to_bits())
        {
            return Ok(ws.clone());
        }
        let ws = Arc::new(ProjectionWorkspace::prefactorize(
            self.basis.clone(),
            self.n_obs,
            limits,
            self.rho,
            self.k_train,
        )?);
        self.entries.push((limits, ws.clone()));
        Ok(ws)
    }
}

/// Plain gradient descent over the decoder weights. Returns the per-epoch
/// mean loss; deterministic under a fixed seed. Aborts when the mean loss
/// exceeds ten times the first epoch's.
pub fn train(
    decoder: &mut TrainedDecoder,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let demos = &dataset.demos;
    if demos.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if decoder.n_c != dataset.degree + 1 {
        return Err(Error::Dimension(format!(
            "decoder has {} coefficients, dataset was collected with degree {}",
            decoder.n_c, dataset.degree
        )));
    }
    for (i, d) in demos.iter().enumerate() {
        if d.scene.obstacles.len() != dataset.n_obs {
            return Err(Error::Dimension(format!(
                "demonstration {i} has {} obstacles, expected {}",
                d.scene.obstacles.len(),
                dataset.n_obs
            )));
        }
    }
    let basis = Arc::new(build_basis(dataset.horizon_s, dataset.m, dataset.degree)?);
    let mut cache = WsCache {
        basis,
        n_obs: dataset.n_obs,
        rho: crate::projection::DEFAULT_RHO,
        k_train: cfg.k_train,
        entries: Vec::new(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut initial_mean: Option<f64> = None;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..demos.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            // Per-demo losses evaluate independently; the reduction happens
            // afterwards in index order so the result is deterministic.
            let ws_by_demo: Vec<Arc<ProjectionWorkspace>> = chunk
                .iter()
                .map(|&i| cache.get(demos[i].limits))
                .collect::<Result<_>>()?;
            let results: Vec<Result<(f64, DMatrix<f64>)>> = chunk
                .par_iter()
                .zip(ws_by_demo.par_iter())
                .map(|(&i, ws)| {
                    training_loss(decoder, &demos[i], ws, cfg.k_train, cfg.penalty_weight)
                })
                .collect();
            let mut grad = DMatrix::zeros(decoder.weights.nrows(), decoder.weights.ncols());
            for r in results {
                let (loss, g) = r?;
                epoch_loss += loss;
                grad += g;
            }
            grad /= chunk.len() as f64;
            decoder.weights -= cfg.learning_rate * grad;
        }
        let mean = epoch_loss / demos.len() as f64;
        curve.push(mean);
        let initial = *initial_mean.get_or_insert(mean);
        if mean > 10.0 * initial && initial > 0.0 {
            return Err(Error::TrainingDiverged {
                epoch,
                loss: mean,
                initial,
            });
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::nominal_q;
    use crate::projection::{project, DEFAULT_RHO};
    use crate::scenario::{
        LimitsConfig, PlannerConfig, Scenario, ScriptConfig, SimConfig, WorldConfig,
    };
    use approx::assert_relative_eq;
    use nalgebra::Vector2;

    fn tiny_scenario(with_obstacle: bool) -> Scenario {
        Scenario {
            name: "tiny".into(),
            sim: SimConfig {
                dt: 0.1,
                replan_dt: 0.4,
                duration_s: 2.0,
            },
            world: WorldConfig {
                robot_start: [-2.5, 0.0],
                obstacle_radius: 0.4,
                target: ScriptConfig {
                    speed: 0.5,
                    waypoints: vec![[0.0, 0.0], [3.0, 0.0]],
                },
                obstacles: if with_obstacle {
                    vec![ScriptConfig {
                        speed: 0.0,
                        waypoints: vec![[-0.8, 0.9]],
                    }]
                } else {
                    vec![]
                },
            },
            limits: LimitsConfig {
                v_max: 2.0,
                a_max: 4.0,
            },
            planner: PlannerConfig {
                samples: 8,
                seed: 5,
                k_iters: 40,
                n_obs: 6,
                m: 30,
                degree: 8,
                ..Default::default()
            },
        }
    }

    #[test]
    fn empty_suite_gives_empty_dataset() {
        let ds = generate_demonstrations(&[], 8, 0).unwrap();
        assert!(ds.demos.is_empty());
    }

    #[test]
    fn obstacle_free_demos_have_zero_occlusion_cost() {
        let demos = generate_demonstrations(&[tiny_scenario(false)], 8, 0).unwrap().demos;
        assert!(!demos.is_empty());
        for d in &demos {
            // No real obstacles: the expert cost is pure smoothness, and the
            // occlusion share is zero by construction.
            let real: Vec<_> = d.scene.obstacles.iter().filter(|o| !o.is_virtual()).collect();
            assert!(real.is_empty());
        }
    }

    #[test]
    fn bigger_oracle_budget_never_costs_more_on_average() {
        let suite = [tiny_scenario(true)];
        let small = generate_demonstrations(&suite, 4, 0).unwrap().demos;
        let large = generate_demonstrations(&suite, 64, 0).unwrap().demos;
        let mean = |d: &[Demonstration]| {
            d.iter().map(|x| x.expert_cost).sum::<f64>() / d.len() as f64
        };
        assert!(
            mean(&large) <= mean(&small) + 1e-9,
            "large {} small {}",
            mean(&large),
            mean(&small)
        );
    }

    fn demo_fixture() -> (Demonstration, Arc<ProjectionWorkspace>) {
        // A feasible expert: project a mild sample and use its positions.
        let basis = Arc::new(build_basis(5.0, 30, 8).unwrap());
        let limits = KinematicLimits {
            v_max: 2.0,
            a_max: 4.0,
        };
        let scene = Scene {
            robot_p: Vector2::zeros(),
            robot_v: Vector2::new(0.2, 0.0),
            robot_a: Vector2::zeros(),
            target_p: Vector2::new(2.2, 0.3),
            target_v: Vector2::new(0.2, 0.0),
            obstacles: vec![
                Obstacle {
                    center: Vector2::new(1.2, 1.1),
                    velocity: Vector2::zeros(),
                },
                Obstacle {
                    center: Vector2::new(1.4, 1.2),
                    velocity: Vector2::zeros(),
                },
            ],
            obstacle_radius: 0.3,
        };
        let ws = Arc::new(
            ProjectionWorkspace::prefactorize(basis.clone(), 2, limits, DEFAULT_RHO, 60).unwrap(),
        );
        let q = nominal_q(&scene, basis.horizon_s);
        let (xi_bar, _) = crate::policy::nominal_mean(&scene, &basis).unwrap();
        let res = project(&ws, &xi_bar, &q, &scene, None).unwrap();
        let tau = eval_trajectory(&res.xi, &basis).unwrap().pos;
        (
            Demonstration {
                scene,
                limits,
                tau,
                expert_cost: 0.0,
            },
            ws,
        )
    }

    use crate::constraints::Obstacle;

    #[test]
    fn zero_penalty_reduces_to_reconstruction() {
        let (demo, ws) = demo_fixture();
        let dec = TrainedDecoder::zeros(9);
        let (loss, _) = training_loss(&dec, &demo, &ws, 15, 0.0).unwrap();
        // Reconstruction only: recompute it directly.
        let out = dec.forward(&demo.scene, &ws.basis).unwrap();
        let (res, _) = project_with_tape(
            &ws,
            &out.xi_bar,
            &out.q,
            &demo.scene,
            Some((&out.xi0, &out.lambda0)),
            15,
        )
        .unwrap();
        let sampled = eval_trajectory(&res.xi, &ws.basis).unwrap();
        let expect = (sampled.pos.column(0) - demo.tau.column(0)).norm_squared()
            + (sampled.pos.column(1) - demo.tau.column(1)).norm_squared();
        assert_relative_eq!(loss, expect, max_relative = 1e-12);
    }

    #[test]
    fn near_fixed_point_expert_has_tiny_loss() {
        // Decoder biases tuned to output the expert's own coefficients with a
        // roomy band: the projection barely perturbs them.
        let (demo, ws) = demo_fixture();
        let basis = &ws.basis;
        let expert_fit = crate::basis::fit_polynomial(&demo.tau, basis).unwrap();
        let (nominal_xi, nominal) = crate::policy::nominal_mean(&demo.scene, basis).unwrap();
        let mut dec = TrainedDecoder::zeros(9);
        let n_c = 9;
        let bias_col = crate::policy::FEATURE_DIM;
        for k in 0..n_c {
            dec.weights[(k, bias_col)] = expert_fit.cx[k] - nominal_xi.cx[k];
            dec.weights[(n_c + k, bias_col)] = expert_fit.cy[k] - nominal_xi.cy[k];
        }
        // Wide band via the softplus preimages; terminal matched to the
        // expert's endpoint.
        dec.weights[(2 * n_c, bias_col)] = 0.1; // s_min ~ 0.84
        dec.weights[(2 * n_c + 1, bias_col)] = 8.0; // s_max ~ 9
        let end = demo.tau.nrows() - 1;
        dec.weights[(2 * n_c + 2, bias_col)] = demo.tau[(end, 0)] - nominal.pf.x;
        dec.weights[(2 * n_c + 3, bias_col)] = demo.tau[(end, 1)] - nominal.pf.y;
        let (loss, _) = training_loss(&dec, &demo, &ws, 15, 10.0).unwrap();
        assert!(loss <= 1e-3, "loss {loss}");
    }

    #[test]
    fn training_gradient_matches_finite_differences() {
        let (demo, ws) = demo_fixture();
        let mut dec = TrainedDecoder::zeros(9);
        // A nonzero starting point exercises every path.
        for (i, v) in dec.weights.iter_mut().enumerate() {
            *v = 0.01 * ((i as f64) * 0.61).sin();
        }
        let (_, grad) = training_loss(&dec, &demo, &ws, 10, 10.0).unwrap();
        let h = 1e-6;
        let mut worst = 0.0f64;
        // Spot-check a spread of weight coordinates (full FD over all ~1000
        // weights runs in the acceptance suite).
        for idx in (0..dec.weights.len()).step_by(37) {
            let r = idx % dec.weights.nrows();
            let c = idx / dec.weights.nrows();
            let mut dp = dec.clone();
            dp.weights[(r, c)] += h;
            let (lp, _) = training_loss(&dp, &demo, &ws, 10, 10.0).unwrap();
            let mut dm = dec.clone();
            dm.weights[(r, c)] -= h;
            let (lm, _) = training_loss(&dm, &demo, &ws, 10, 10.0).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let err = (grad[(r, c)] - fd).abs() / grad[(r, c)].abs().max(fd.abs()).max(1e-3);
            worst = worst.max(err);
        }
        assert!(worst <= 1e-3, "worst rel err {worst:.3e}");
    }

    #[test]
    fn zero_learning_rate_keeps_the_loss_flat() {
        let (demo, ws) = demo_fixture();
        let _ = ws;
        let mut dec = TrainedDecoder::zeros(9);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 5,
            batch_size: 2,
            k_train: 8,
            penalty_weight: 10.0,
            seed: 1,
        };
        let ds = Dataset {
            horizon_s: 5.0,
            m: 30,
            degree: 8,
            n_obs: 2,
            demos: vec![demo.clone(), demo.clone()],
        };
        let curve = train(&mut dec, &ds, &cfg).unwrap();
        for w in curve.windows(2) {
            assert_eq!(w[0], w[1]);
        }
    }

    #[test]
    fn single_demo_overfits() {
        let (demo, _) = demo_fixture();
        let mut dec = TrainedDecoder::zeros(9);
        let cfg = TrainConfig {
            learning_rate: 2e-4,
            epochs: 200,
            batch_size: 1,
            k_train: 10,
            penalty_weight: 10.0,
            seed: 2,
        };
        let ds = Dataset {
            horizon_s: 5.0,
            m: 30,
            degree: 8,
            n_obs: 2,
            demos: vec![demo],
        };
        let curve = train(&mut dec, &ds, &cfg).unwrap();
        assert!(
            curve.last().unwrap() <= &(0.5 * curve[0]),
            "first {} last {}",
            curve[0],
            curve.last().unwrap()
        );
    }

    #[test]
    fn training_is_deterministic_under_a_seed() {
        let (demo, _) = demo_fixture();
        let cfg = TrainConfig {
            learning_rate: 1e-4,
            epochs: 10,
            batch_size: 1,
            k_train: 8,
            penalty_weight: 10.0,
            seed: 7,
        };
        let ds = Dataset {
            horizon_s: 5.0,
            m: 30,
            degree: 8,
            n_obs: 2,
            demos: vec![demo],
        };
        let mut d1 = TrainedDecoder::zeros(9);
        let mut d2 = TrainedDecoder::zeros(9);
        let c1 = train(&mut d1, &ds, &cfg).unwrap();
        let c2 = train(&mut d2, &ds, &cfg).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(d1.weights, d2.weights);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let mut dec = TrainedDecoder::zeros(9);
        let ds = Dataset {
            horizon_s: 5.0,
            m: 30,
            degree: 8,
            n_obs: 2,
            demos: vec![],
        };
        match train(&mut dec, &ds, &TrainConfig::default()) {
            Err(Error::EmptyDataset) => {}
            other => panic!("expected EmptyDataset, got {other:?}"),
        }
    }
}
