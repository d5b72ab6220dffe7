//! Sampling-and-ranking planner.
//!
//! One planning cycle draws a batch of candidate coefficient samples with
//! per-sample constraint parameters, projects every candidate onto its
//! feasible set, scores the projected trajectories by smoothness plus
//! line-of-sight occlusion, and executes the cheapest one. Feasibility comes
//! from the projection; the ranking never re-orders on constraint violations
//! (they are reported as diagnostics only).

use nalgebra::{DMatrix, DVector, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::basis::{fit_polynomial, smoothness_cost, BasisSet, TrajCoeffs};
use crate::constraints::{
    constraint_violations, extrapolate_target, ConstraintParams, Obstacle, Scene,
};
use crate::error::{Error, Result};
use crate::geom::point_segment_distance;
use crate::projection::{project_batch, ProjectionRequest, ProjectionWorkspace};

/// Tracking band of the hand-fixed nominal parameters (m).
pub const NOMINAL_S_LOS_MIN: f64 = 1.0;
pub const NOMINAL_S_LOS_MAX: f64 = 4.0;
/// Standoff behind the predicted target terminal, against its heading (m).
pub const NOMINAL_STANDOFF: f64 = 2.5;
/// Extra clearance demanded by the occlusion cost beyond the disk radius (m).
pub const OCCLUSION_MARGIN: f64 = 0.2;

/// Cost weights for candidate ranking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    /// Smoothness (sum of squared acceleration) weight.
    pub w1: f64,
    /// Occlusion weight.
    pub w2: f64,
    /// Inverse-clearance weight (default 0, off).
    pub w3: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w1: 0.05,
            w2: 1.0,
            w3: 0.0,
        }
    }
}

/// Predicted target positions over the horizon: constant-velocity
/// extrapolation from the instantaneous state.
pub fn predict_target(
    target_p: Vector2<f64>,
    target_v: Vector2<f64>,
    basis: &BasisSet,
) -> DMatrix<f64> {
    extrapolate_target(target_p, target_v, &basis.times)
}

/// Line-of-sight occlusion cost: for every sample instant, every obstacle
/// closer than `l + margin` to the robot-target segment contributes the
/// squared shortfall. Zero exactly when every sight line clears every disk
/// by more than the margin (up to the sample discretization).
pub fn occlusion_cost(
    robot_traj: &DMatrix<f64>,
    target_traj: &DMatrix<f64>,
    obstacles: &[Obstacle],
    l: f64,
    times: &[f64],
) -> f64 {
    debug_assert_eq!(robot_traj.nrows(), target_traj.nrows());
    debug_assert_eq!(robot_traj.nrows(), times.len());
    let mut cost = 0.0;
    for (i, &t) in times.iter().enumerate() {
        let robot = Vector2::new(robot_traj[(i, 0)], robot_traj[(i, 1)]);
        let target = Vector2::new(target_traj[(i, 0)], target_traj[(i, 1)]);
        for obs in obstacles {
            let center = obs.center + obs.velocity * t;
            let dist = point_segment_distance(center, robot, target);
            let shortfall = (l + OCCLUSION_MARGIN - dist).max(0.0);
            cost += shortfall * shortfall;
        }
    }
    cost
}

/// Inverse-clearance term: grows as the trajectory shaves obstacles. Off by
/// default (`w3 = 0`).
fn inverse_clearance(
    robot_traj: &DMatrix<f64>,
    obstacles: &[Obstacle],
    l: f64,
    times: &[f64],
) -> f64 {
    let mut cost = 0.0;
    for (i, &t) in times.iter().enumerate() {
        let robot = Vector2::new(robot_traj[(i, 0)], robot_traj[(i, 1)]);
        let mut min_clear = f64::INFINITY;
        for obs in obstacles {
            let center = obs.center + obs.velocity * t;
            min_clear = min_clear.min((robot - center).norm() - l);
        }
        if min_clear.is_finite() {
            cost += 1.0 / min_clear.max(1e-3);
        }
    }
    cost
}

/// Hand-fixed nominal constraint parameters: a fixed tracking band, the
/// terminal position offset by the standoff distance against the target's
/// heading (or along the robot-target line when the target is stationary),
/// and the target velocity as terminal velocity.
pub fn nominal_q(scene: &Scene, horizon_s: f64) -> ConstraintParams {
    let terminal = scene.target_p + scene.target_v * horizon_s;
    let heading = if scene.target_v.norm() > 1e-6 {
        scene.target_v.normalize()
    } else {
        let to_target = scene.target_p - scene.robot_p;
        if to_target.norm() > 1e-6 {
            to_target.normalize()
        } else {
            Vector2::new(1.0, 0.0)
        }
    };
    ConstraintParams {
        s_los_min: NOMINAL_S_LOS_MIN,
        s_los_max: NOMINAL_S_LOS_MAX,
        pf: terminal - heading * NOMINAL_STANDOFF,
        vf: scene.target_v,
    }
}

/// Nominal mean sample: least-squares fit of a straight line from the robot
/// position toward the nominal standoff point.
pub fn nominal_mean(scene: &Scene, basis: &BasisSet) -> Result<(TrajCoeffs, ConstraintParams)> {
    let q = nominal_q(scene, basis.horizon_s);
    let pts = DMatrix::from_fn(basis.m, 2, |i, axis| {
        let s = basis.times[i] / basis.horizon_s;
        let p = scene.robot_p + (q.pf - scene.robot_p) * s;
        if axis == 0 {
            p.x
        } else {
            p.y
        }
    });
    let xi = fit_polynomial(&pts, basis)?;
    Ok((xi, q))
}

/// One drawn candidate: a base sample, its constraint parameters and an
/// optional solver warm start.
#[derive(Debug, Clone)]
pub struct PlanSample {
    pub xi_bar: TrajCoeffs,
    pub q: ConstraintParams,
    pub warm: Option<(TrajCoeffs, DVector<f64>)>,
}

/// Anything that can produce a batch of candidate samples for a scene.
/// Implementations own their RNG state; a planner instance is never shared.
pub trait SamplePolicy {
    fn draw(&mut self, scene: &Scene, basis: &BasisSet) -> Result<Vec<PlanSample>>;
}

/// Gaussian base sampler around a nominal mean generator.
pub struct BaseSampler {
    /// Number of candidates per cycle.
    pub n: usize,
    /// Per-coefficient standard deviation (m), shrunk with coefficient
    /// degree to keep the drawn trajectories physically plausible.
    pub coeff_std: f64,
    /// Band-bound noise (applied to both bounds, order preserved).
    pub q_band_std: f64,
    /// Terminal position / velocity noise.
    pub q_pos_std: f64,
    pub q_vel_std: f64,
    /// Maps a scene to the mean sample and nominal parameters.
    pub mean: fn(&Scene, &BasisSet) -> Result<(TrajCoeffs, ConstraintParams)>,
    rng: ChaCha8Rng,
}

impl BaseSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            coeff_std: 0.4,
            q_band_std: 0.0,
            q_pos_std: 0.0,
            q_vel_std: 0.0,
            mean: nominal_mean,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn sample_around(
        &mut self,
        mean_xi: &TrajCoeffs,
        mean_q: &ConstraintParams,
    ) -> Result<PlanSample> {
        let normal = Normal::new(0.0, 1.0)
            .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
        let n_c = mean_xi.n_coeffs();
        let mut xi = mean_xi.clone();
        for k in 0..n_c {
            let std = self.coeff_std / (1.0 + k as f64);
            xi.cx[k] += std * normal.sample(&mut self.rng);
            xi.cy[k] += std * normal.sample(&mut self.rng);
        }
        let mut q = mean_q.clone();
        // Draws happen unconditionally so the stream layout does not depend
        // on which stds are zero.
        let band_lo = self.q_band_std * normal.sample(&mut self.rng);
        let band_hi = self.q_band_std * normal.sample(&mut self.rng);
        let pfx = self.q_pos_std * normal.sample(&mut self.rng);
        let pfy = self.q_pos_std * normal.sample(&mut self.rng);
        let vfx = self.q_vel_std * normal.sample(&mut self.rng);
        let vfy = self.q_vel_std * normal.sample(&mut self.rng);
        q.s_los_min = (q.s_los_min + band_lo).max(0.05);
        q.s_los_max = (q.s_los_max + band_hi).max(q.s_los_min + 0.05);
        q.pf += Vector2::new(pfx, pfy);
        q.vf += Vector2::new(vfx, vfy);
        Ok(PlanSample {
            xi_bar: xi,
            q,
            warm: None,
        })
    }
}

impl SamplePolicy for BaseSampler {
    fn draw(&mut self, scene: &Scene, basis: &BasisSet) -> Result<Vec<PlanSample>> {
        let (mean_xi, mean_q) = (self.mean)(scene, basis)?;
        (0..self.n)
            .map(|_| self.sample_around(&mean_xi, &mean_q))
            .collect()
    }
}

/// Decoder feature dimension: robot velocity and acceleration, target
/// relative position and velocity, and the two nearest obstacle offsets.
pub const FEATURE_DIM: usize = 12;
/// Reparameterization floor for the predicted tracking band (m).
pub const BAND_EPS: f64 = 0.1;
/// Relative obstacle features are capped at this radius (m).
const FEATURE_RANGE: f64 = 20.0;

/// A small affine decoder standing in for a learned sampling head: maps a
/// 12-dimensional scene feature vector to a mean sample offset, constraint
/// parameters (band through a softplus reparameterization that keeps them
/// valid for any weights) and a solver warm start.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDecoder {
    /// `out_dim x (FEATURE_DIM + 1)`; the last column is the bias.
    pub weights: DMatrix<f64>,
    pub n_c: usize,
}

/// Decoder forward products kept for the weight-gradient chain rule.
#[derive(Debug, Clone)]
pub struct DecoderOutput {
    pub xi_bar: TrajCoeffs,
    pub q: ConstraintParams,
    pub xi0: TrajCoeffs,
    pub lambda0: DVector<f64>,
    /// Features with the bias entry appended.
    pub phi: DVector<f64>,
    /// Raw affine outputs before reparameterization.
    pub raw: DVector<f64>,
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

impl TrainedDecoder {
    pub fn out_dim(n_c: usize) -> usize {
        6 * n_c + 6
    }

    /// Zero-initialized decoder: predicts the nominal mean with a softplus
    /// band of roughly [0.79, 1.59] and a zero warm start.
    pub fn zeros(n_c: usize) -> Self {
        Self {
            weights: DMatrix::zeros(Self::out_dim(n_c), FEATURE_DIM + 1),
            n_c,
        }
    }

    /// Scene features, all relative to the robot so the decoder is
    /// translation invariant, with fixed scale factors keeping every entry
    /// near unit magnitude (plain gradient descent is sensitive to column
    /// imbalance). Missing obstacles pad with a fixed far point.
    pub fn features(scene: &Scene) -> DVector<f64> {
        let mut phi = DVector::zeros(FEATURE_DIM);
        phi[0] = scene.robot_v.x;
        phi[1] = scene.robot_v.y;
        phi[2] = scene.robot_a.x / 2.0;
        phi[3] = scene.robot_a.y / 2.0;
        phi[4] = (scene.target_p.x - scene.robot_p.x) / 5.0;
        phi[5] = (scene.target_p.y - scene.robot_p.y) / 5.0;
        phi[6] = scene.target_v.x - scene.robot_v.x;
        phi[7] = scene.target_v.y - scene.robot_v.y;
        let mut rel: Vec<Vector2<f64>> = scene
            .obstacles
            .iter()
            .filter(|o| !o.is_virtual())
            .map(|o| o.center - scene.robot_p)
            .collect();
        rel.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        for slot in 0..2 {
            let v = rel
                .get(slot)
                .map(|v| {
                    if v.norm() > FEATURE_RANGE {
                        v.normalize() * FEATURE_RANGE
                    } else {
                        *v
                    }
                })
                .unwrap_or(Vector2::new(FEATURE_RANGE, 0.0));
            phi[8 + 2 * slot] = v.x / 5.0;
            phi[9 + 2 * slot] = v.y / 5.0;
        }
        phi
    }

    pub fn forward(&self, scene: &Scene, basis: &BasisSet) -> Result<DecoderOutput> {
        let n_c = self.n_c;
        if basis.n_coeffs() != n_c {
            return Err(Error::Dimension(format!(
                "decoder built for {} coefficients, basis has {}",
                n_c,
                basis.n_coeffs()
            )));
        }
        let feats = Self::features(scene);
        let mut phi = DVector::zeros(FEATURE_DIM + 1);
        phi.rows_mut(0, FEATURE_DIM).copy_from(&feats);
        phi[FEATURE_DIM] = 1.0;
        let raw = &self.weights * &phi;

        let (nominal_xi, nominal) = nominal_mean(scene, basis)?;
        let mut xi_bar = nominal_xi;
        for k in 0..n_c {
            xi_bar.cx[k] += raw[k];
            xi_bar.cy[k] += raw[n_c + k];
        }
        let u1 = raw[2 * n_c];
        let u2 = raw[2 * n_c + 1];
        let s_los_min = BAND_EPS + softplus(u1);
        let s_los_max = s_los_min + BAND_EPS + softplus(u2);
        let q = ConstraintParams {
            s_los_min,
            s_los_max,
            pf: nominal.pf + Vector2::new(raw[2 * n_c + 2], raw[2 * n_c + 3]),
            vf: nominal.vf + Vector2::new(raw[2 * n_c + 4], raw[2 * n_c + 5]),
        };
        let mut xi0 = xi_bar.clone();
        for k in 0..n_c {
            xi0.cx[k] += raw[2 * n_c + 6 + k];
            xi0.cy[k] += raw[3 * n_c + 6 + k];
        }
        let lambda0 = raw.rows(4 * n_c + 6, 2 * n_c).into_owned();
        Ok(DecoderOutput {
            xi_bar,
            q,
            xi0,
            lambda0,
            phi,
            raw,
        })
    }

    /// Chain the projection-layer gradients (plus any direct gradient on `q`)
    /// back to the affine weights.
    pub fn backward(
        &self,
        out: &DecoderOutput,
        d_xi_bar: &DVector<f64>,
        d_q: &crate::unroll::QGrads,
        d_xi0: &DVector<f64>,
        d_lambda0: &DVector<f64>,
    ) -> DMatrix<f64> {
        let n_c = self.n_c;
        let mut d_raw = DVector::zeros(Self::out_dim(n_c));
        // xi0 = xi_bar + delta0, so the sample offset collects both paths.
        for k in 0..n_c {
            d_raw[k] = d_xi_bar[k] + d_xi0[k];
            d_raw[n_c + k] = d_xi_bar[n_c + k] + d_xi0[n_c + k];
            d_raw[2 * n_c + 6 + k] = d_xi0[k];
            d_raw[3 * n_c + 6 + k] = d_xi0[n_c + k];
            d_raw[4 * n_c + 6 + k] = d_lambda0[k];
            d_raw[5 * n_c + 6 + k] = d_lambda0[n_c + k];
        }
        let u1 = out.raw[2 * n_c];
        let u2 = out.raw[2 * n_c + 1];
        // s_max = s_min + eps + softplus(u2) makes u1 feed both bounds.
        d_raw[2 * n_c] = sigmoid(u1) * (d_q.s_los_min + d_q.s_los_max);
        d_raw[2 * n_c + 1] = sigmoid(u2) * d_q.s_los_max;
        d_raw[2 * n_c + 2] = d_q.pf.x;
        d_raw[2 * n_c + 3] = d_q.pf.y;
        d_raw[2 * n_c + 4] = d_q.vf.x;
        d_raw[2 * n_c + 5] = d_q.vf.y;
        &d_raw * out.phi.transpose()
    }
}

/// Sampler wrapping a trained decoder: candidates are drawn around the
/// decoder's mean sample with the decoder's constraint parameters and warm
/// start attached per sample. With `use_nominal_q` the predicted parameters
/// are replaced by the hand-fixed nominal ones (the no-prediction arm).
pub struct DecoderSampler {
    pub decoder: TrainedDecoder,
    pub n: usize,
    pub coeff_std: f64,
    pub use_nominal_q: bool,
    rng: ChaCha8Rng,
}

impl DecoderSampler {
    pub fn new(decoder: TrainedDecoder, n: usize, seed: u64) -> Self {
        Self {
            decoder,
            n,
            coeff_std: 0.4,
            use_nominal_q: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl SamplePolicy for DecoderSampler {
    fn draw(&mut self, scene: &Scene, basis: &BasisSet) -> Result<Vec<PlanSample>> {
        let out = self.decoder.forward(scene, basis)?;
        let normal = Normal::new(0.0, 1.0)
            .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
        let q = if self.use_nominal_q {
            nominal_q(scene, basis.horizon_s)
        } else {
            out.q.clone()
        };
        let mut samples = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let mut xi = out.xi_bar.clone();
            for k in 0..xi.n_coeffs() {
                let std = self.coeff_std / (1.0 + k as f64);
                xi.cx[k] += std * normal.sample(&mut self.rng);
                xi.cy[k] += std * normal.sample(&mut self.rng);
            }
            samples.push(PlanSample {
                xi_bar: xi,
                q: q.clone(),
                warm: Some((out.xi0.clone(), out.lambda0.clone())),
            });
        }
        Ok(samples)
    }
}

/// The selected plan of one cycle.
#[derive(Debug, Clone)]
pub struct Plan {
    pub xi: TrajCoeffs,
    pub q: ConstraintParams,
    pub cost: f64,
    pub sample_index: usize,
    pub max_violation: f64,
}

/// Costs and violations of every candidate, selection included.
#[derive(Debug, Clone, Default)]
pub struct PlanDiagnostics {
    pub costs: Vec<f64>,
    pub smoothness: Vec<f64>,
    pub occlusion: Vec<f64>,
    pub max_violation: Vec<f64>,
    pub selected: usize,
}

fn rank_candidates(
    candidates: Vec<(TrajCoeffs, ConstraintParams, f64)>,
    scene: &Scene,
    basis: &BasisSet,
    weights: &CostWeights,
    target_traj: &DMatrix<f64>,
) -> Result<(Plan, PlanDiagnostics)> {
    let n = candidates.len();
    let mut diag = PlanDiagnostics {
        costs: Vec::with_capacity(n),
        smoothness: Vec::with_capacity(n),
        occlusion: Vec::with_capacity(n),
        max_violation: Vec::with_capacity(n),
        selected: 0,
    };
    let mut best: Option<(f64, usize)> = None;
    let mut kept: Vec<Option<(TrajCoeffs, ConstraintParams)>> = Vec::with_capacity(n);
    for (idx, (xi, q, max_violation)) in candidates.into_iter().enumerate() {
        let smooth = smoothness_cost(&xi, basis)?;
        let sampled = crate::basis::eval_trajectory(&xi, basis)?;
        let occ = occlusion_cost(
            &sampled.pos,
            target_traj,
            &scene.obstacles,
            scene.obstacle_radius,
            &basis.times,
        );
        let mut cost = weights.w1 * smooth + weights.w2 * occ;
        if weights.w3 > 0.0 {
            cost += weights.w3
                * inverse_clearance(
                    &sampled.pos,
                    &scene.obstacles,
                    scene.obstacle_radius,
                    &basis.times,
                );
        }
        diag.smoothness.push(smooth);
        diag.occlusion.push(occ);
        diag.costs.push(cost);
        diag.max_violation.push(max_violation);
        if cost.is_finite() {
            // Strict comparison keeps the lowest index on ties.
            if best.map_or(true, |(c, _)| cost < c) {
                best = Some((cost, idx));
            }
            kept.push(Some((xi, q)));
        } else {
            kept.push(None);
        }
    }
    let (cost, selected) = best.ok_or(Error::NoViableCandidate { candidates: n })?;
    diag.selected = selected;
    let (xi, q) = kept[selected].take().expect("selected candidate is finite");
    Ok((
        Plan {
            xi,
            q,
            cost,
            sample_index: selected,
            max_violation: diag.max_violation[selected],
        },
        diag,
    ))
}

/// Draw, project, rank, select. Candidate projections run as a batch; the
/// returned plan is the finite-cost argmin with ties broken toward the
/// lowest sample index.
pub fn plan(
    scene: &Scene,
    sampler: &mut dyn SamplePolicy,
    ws: &ProjectionWorkspace,
    weights: &CostWeights,
) -> Result<(Plan, PlanDiagnostics)> {
    let basis = &ws.basis;
    let samples = sampler.draw(scene, basis)?;
    if samples.is_empty() {
        return Err(Error::NoViableCandidate { candidates: 0 });
    }
    let requests: Vec<ProjectionRequest> = samples
        .iter()
        .map(|s| ProjectionRequest {
            xi_bar: s.xi_bar.clone(),
            q: s.q.clone(),
            warm: s.warm.clone(),
        })
        .collect();
    let results = project_batch(ws, &requests, scene);
    let target_traj = predict_target(scene.target_p, scene.target_v, basis);
    let mut candidates = Vec::with_capacity(samples.len());
    for (sample, res) in samples.into_iter().zip(results) {
        match res {
            Ok(r) => {
                let viol = r
                    .residual_history
                    .last()
                    .map(|h| h.max_violation)
                    .unwrap_or(f64::INFINITY);
                candidates.push((r.xi, sample.q, viol));
            }
            Err(_) => {
                // A failed projection keeps its diagnostics row but can never
                // be selected.
                candidates.push((
                    TrajCoeffs {
                        cx: DVector::from_element(sample.xi_bar.cx.len(), f64::NAN),
                        cy: DVector::from_element(sample.xi_bar.cy.len(), f64::NAN),
                    },
                    sample.q,
                    f64::INFINITY,
                ));
            }
        }
    }
    rank_candidates(candidates, scene, basis, weights, &target_traj)
}

/// Rank raw samples without projecting them (the safety layer removed,
/// everything else identical).
pub fn plan_unprojected(
    scene: &Scene,
    sampler: &mut dyn SamplePolicy,
    basis: &BasisSet,
    limits: &crate::constraints::KinematicLimits,
    weights: &CostWeights,
) -> Result<(Plan, PlanDiagnostics)> {
    let samples = sampler.draw(scene, basis)?;
    if samples.is_empty() {
        return Err(Error::NoViableCandidate { candidates: 0 });
    }
    let target_traj = predict_target(scene.target_p, scene.target_v, basis);
    let mut candidates = Vec::with_capacity(samples.len());
    for sample in samples {
        let viol = constraint_violations(
            &sample.xi_bar,
            scene,
            &sample.q,
            limits,
            basis,
            &target_traj,
        )?
        .overall_max();
        candidates.push((sample.xi_bar, sample.q, viol));
    }
    rank_candidates(candidates, scene, basis, weights, &target_traj)
}
