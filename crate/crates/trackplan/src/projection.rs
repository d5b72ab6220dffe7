//! Trajectory projection by alternating minimization.
//!
//! Given an arbitrary coefficient sample `xi_bar`, the projection finds the
//! nearest coefficient vector satisfying the boundary conditions exactly and
//! the polar-reformulated norm bounds approximately:
//!
//! ```text
//! min 0.5 ||xi - xi_bar||^2   s.t.  A xi = b(q),  F xi = e(alpha, d),
//!                                   d_lo(q) <= d <= d_hi(q)
//! ```
//!
//! The non-convex coupling `F xi = e(alpha, d)` is relaxed with an augmented
//! Lagrangian (multiplier `lambda` kept in the coefficient dimension, penalty
//! weight `rho`) and minimized block by block: closed-form `(alpha, d)`
//! updates, a multiplier step, then an equality-constrained QP in `xi` solved
//! through one prefactorized symmetric KKT system
//!
//! ```text
//! M = [ I + rho FᵀF   Aᵀ ]
//!     [ A              0 ]
//! ```
//!
//! `M` depends only on `(F, A, rho)` — never on `q`, the sample, or anything
//! learned — so one factorization serves every projection of a planning cycle
//! and every unrolled training step.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::{BasisSet, TrajCoeffs};
use crate::constraints::{
    alpha_d_from_samples, assemble_a, assemble_b, assemble_f, e_from_aux, extrapolate_target,
    AuxVars, ClampState, ConstraintLayout, ConstraintParams, InstanceData, KinematicLimits, Scene,
};
use crate::error::{Error, Result};

/// Default penalty weight. Large enough that the multiplier transient
/// settles well inside a 100-iteration budget at this problem scale.
pub const DEFAULT_RHO: f64 = 200.0;

static FACTORIZATIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of KKT factorizations performed by the process so far. The backward
/// pass must not add any; tests pin that with this counter.
pub fn factorization_count() -> usize {
    FACTORIZATIONS.load(Ordering::Relaxed)
}

/// One LU factorization of the KKT matrix `[[I + rho FᵀF, Aᵀ], [A, 0]]`.
///
/// The matrix is symmetric, so the same factorization also solves the
/// transposed (adjoint) system.
pub struct KktFactor {
    lu: nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n_primal: usize,
    n_eq: usize,
}

impl KktFactor {
    /// Factorize. Requires `rho > 0` and `A` of full row rank; a singular
    /// system reports the rank deficiency of `A`.
    pub fn new(f: &DMatrix<f64>, a: &DMatrix<f64>, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "penalty weight must be positive, got {rho}"
            )));
        }
        if f.ncols() != a.ncols() {
            return Err(Error::Dimension(format!(
                "F has {} columns but A has {}",
                f.ncols(),
                a.ncols()
            )));
        }
        let n = f.ncols();
        let me = a.nrows();
        let mut kkt = DMatrix::zeros(n + me, n + me);
        let ftf = f.transpose() * f;
        for i in 0..n {
            for j in 0..n {
                kkt[(i, j)] = rho * ftf[(i, j)];
            }
            kkt[(i, i)] += 1.0;
        }
        for r in 0..me {
            for c in 0..n {
                kkt[(n + r, c)] = a[(r, c)];
                kkt[(c, n + r)] = a[(r, c)];
            }
        }
        FACTORIZATIONS.fetch_add(1, Ordering::Relaxed);
        let lu = nalgebra::linalg::LU::new(kkt);
        if !lu.is_invertible() {
            let rank = if me == 0 {
                0
            } else {
                a.clone().svd(false, false).rank(1e-10 * a.amax().max(1.0))
            };
            return Err(Error::SingularKkt { rank, rows: me });
        }
        Ok(Self {
            lu,
            n_primal: n,
            n_eq: me,
        })
    }

    /// Solve `M [xi; nu] = [top; bottom]`, returning the full solution.
    pub fn solve(&self, top: &DVector<f64>, bottom: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(top.len(), self.n_primal);
        debug_assert_eq!(bottom.len(), self.n_eq);
        let mut rhs = DVector::zeros(self.n_primal + self.n_eq);
        rhs.rows_mut(0, self.n_primal).copy_from(top);
        rhs.rows_mut(self.n_primal, self.n_eq).copy_from(bottom);
        self.lu
            .solve(&rhs)
            .expect("KKT invertibility is checked at construction")
    }

    pub fn n_primal(&self) -> usize {
        self.n_primal
    }

    pub fn n_eq(&self) -> usize {
        self.n_eq
    }
}

/// Prebuilt projection problem for a fixed constraint shape: matrices,
/// penalty, factorization and iteration budget. Immutable and cheap to share
/// across threads; every `q`, sample and scene reuses the same factorization.
pub struct ProjectionWorkspace {
    pub basis: Arc<BasisSet>,
    pub limits: KinematicLimits,
    pub rho: f64,
    /// Iteration budget for plain projection calls.
    pub k_iters: usize,
    /// `None` for a workspace without inequality/equality structure
    /// (projection degenerates to the identity).
    pub layout: Option<ConstraintLayout>,
    f: DMatrix<f64>,
    a: DMatrix<f64>,
    /// Cached Gram matrix FᵀF.
    ftf: DMatrix<f64>,
    kkt: KktFactor,
}

impl ProjectionWorkspace {
    /// Assemble `F` and `A` for the basis and obstacle count and factorize
    /// the KKT system once.
    pub fn prefactorize(
        basis: Arc<BasisSet>,
        n_obs: usize,
        limits: KinematicLimits,
        rho: f64,
        k_iters: usize,
    ) -> Result<Self> {
        if k_iters == 0 {
            return Err(Error::InvalidArgument("iteration budget must be >= 1".into()));
        }
        let f = assemble_f(&basis, n_obs);
        let a = assemble_a(&basis);
        let ftf = f.transpose() * &f;
        let kkt = KktFactor::new(&f, &a, rho)?;
        Ok(Self {
            basis: basis.clone(),
            limits,
            rho,
            k_iters,
            layout: Some(ConstraintLayout {
                n_obs,
                m: basis.m,
            }),
            f,
            a,
            ftf,
            kkt,
        })
    }

    /// A workspace with no constraints at all; the projection reduces to the
    /// identity map. Useful for isolating the solver plumbing.
    pub fn unconstrained(
        basis: Arc<BasisSet>,
        limits: KinematicLimits,
        rho: f64,
        k_iters: usize,
    ) -> Result<Self> {
        let n = 2 * basis.n_coeffs();
        let f = DMatrix::zeros(0, n);
        let a = DMatrix::zeros(0, n);
        let ftf = DMatrix::zeros(n, n);
        let kkt = KktFactor::new(&f, &a, rho)?;
        Ok(Self {
            basis,
            limits,
            rho,
            k_iters,
            layout: None,
            f,
            a,
            ftf,
            kkt,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.layout.map_or(0, |l| l.n_obs)
    }

    pub fn n_primal(&self) -> usize {
        2 * self.basis.n_coeffs()
    }

    pub fn f_matrix(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub(crate) fn gram(&self) -> &DMatrix<f64> {
        &self.ftf
    }

    pub(crate) fn kkt(&self) -> &KktFactor {
        &self.kkt
    }

    /// Per-call constraint data for a scene/parameter pair.
    pub(crate) fn instance_data(
        &self,
        scene: &Scene,
        q: &ConstraintParams,
    ) -> Result<InstanceData> {
        match self.layout {
            Some(layout) => {
                if scene.obstacles.len() != layout.n_obs {
                    return Err(Error::Dimension(format!(
                        "workspace expects {} obstacles, scene has {}",
                        layout.n_obs,
                        scene.obstacles.len()
                    )));
                }
                let target =
                    extrapolate_target(scene.target_p, scene.target_v, &self.basis.times);
                InstanceData::build(scene, q, &self.limits, &self.basis, &target)
            }
            None => Ok(empty_instances()),
        }
    }

    pub(crate) fn equality_rhs(&self, scene: &Scene, q: &ConstraintParams) -> DVector<f64> {
        if self.kkt.n_eq() == 0 {
            DVector::zeros(0)
        } else {
            assemble_b(&scene.boundary_state(q), q)
        }
    }
}

fn empty_instances() -> InstanceData {
    InstanceData {
        layout: ConstraintLayout { n_obs: 0, m: 0 },
        offset_x: DVector::zeros(0),
        offset_y: DVector::zeros(0),
        scale: DVector::zeros(0),
        d_lo: DVector::zeros(0),
        d_hi: DVector::zeros(0),
    }
}

/// Residual pair recorded after each iteration: the polar equality gap
/// `||F xi - e||` and the largest raw bound violation in original units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationResidual {
    pub polar_residual: f64,
    pub max_violation: f64,
}

/// Output of a projection run.
#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub xi: TrajCoeffs,
    /// Final multiplier (coefficient dimension).
    pub lambda: DVector<f64>,
    /// Final polar variables.
    pub aux: AuxVars,
    pub residual_history: Vec<IterationResidual>,
    pub iterations_run: usize,
}

/// Warm start borrowed for one projection call.
pub type WarmStart<'a> = (&'a TrajCoeffs, &'a DVector<f64>);

/// One entry of a projection batch.
#[derive(Debug, Clone)]
pub struct ProjectionRequest {
    pub xi_bar: TrajCoeffs,
    pub q: ConstraintParams,
    pub warm: Option<(TrajCoeffs, DVector<f64>)>,
}

/// Iteration record kept by the differentiable forward pass: the state
/// entering the iteration plus everything that iteration computed.
#[derive(Debug, Clone)]
pub(crate) struct IterRecord {
    pub xi: DVector<f64>,
    pub lambda: DVector<f64>,
    /// `F xi` for the entering state.
    pub fx: DVector<f64>,
    pub alpha: DVector<f64>,
    pub d: DVector<f64>,
    pub clamp: Vec<ClampState>,
    pub e: DVector<f64>,
}

/// Largest raw bound violation implied by stacked samples, in original units
/// (the per-instance scale maps the polar excess back).
pub(crate) fn max_violation_from_samples(fx: &DVector<f64>, inst: &InstanceData) -> f64 {
    let n = inst.layout.instances();
    let mut worst = 0.0f64;
    for j in 0..n {
        let rx = fx[j] - inst.offset_x[j];
        let ry = fx[n + j] - inst.offset_y[j];
        let raw = (rx * rx + ry * ry).sqrt() / inst.scale[j];
        let excess = (raw - inst.d_hi[j]).max(inst.d_lo[j] - raw).max(0.0);
        worst = worst.max(excess * inst.scale[j]);
    }
    worst
}

/// The shared iteration core. `records`, when provided, captures the
/// per-iteration data needed to differentiate through the run; plain
/// projection and the differentiable forward pass are the same code path.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_iterations(
    ws: &ProjectionWorkspace,
    inst: &InstanceData,
    b: &DVector<f64>,
    xi_bar: &DVector<f64>,
    warm_xi: &DVector<f64>,
    warm_lambda: &DVector<f64>,
    k_iters: usize,
    early_exit_tol: Option<f64>,
    mut records: Option<&mut Vec<IterRecord>>,
) -> Result<(DVector<f64>, DVector<f64>, AuxVars, Vec<IterationResidual>, usize)> {
    let n = ws.n_primal();
    if xi_bar.len() != n || warm_xi.len() != n || warm_lambda.len() != n {
        return Err(Error::Dimension(format!(
            "projection expects stacked vectors of length {n}"
        )));
    }
    let rho = ws.rho;
    let mut xi = warm_xi.clone_owned();
    let mut lambda = warm_lambda.clone_owned();
    let mut fx = &ws.f * &xi;
    let mut history = Vec::with_capacity(k_iters);
    let mut iterations = 0;
    let mut last_aux: Option<AuxVars> = None;

    for k in 0..k_iters {
        let aux = alpha_d_from_samples(&fx, inst);
        let e = e_from_aux(inst, &aux.alpha, &aux.d);
        if let Some(recs) = records.as_deref_mut() {
            recs.push(IterRecord {
                xi: xi.clone_owned(),
                lambda: lambda.clone_owned(),
                fx: fx.clone_owned(),
                alpha: aux.alpha.clone_owned(),
                d: aux.d.clone_owned(),
                clamp: aux.clamp.clone(),
                e: e.clone_owned(),
            });
        }

        // Multiplier step: descend the coefficient-space multiplier along the
        // polar residual so it drives F xi toward e.
        let resid = &fx - &e;
        lambda.gemv_tr(-rho, &ws.f, &resid, 1.0);
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                iteration: k,
                stage: "multiplier update",
            });
        }

        // Equality-constrained QP step through the prefactorized KKT system.
        let mut top = xi_bar + &lambda;
        top.gemv_tr(rho, &ws.f, &e, 1.0);
        let sol = ws.kkt.solve(&top, b);
        xi.copy_from(&sol.rows(0, n));
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                iteration: k,
                stage: "coefficient update",
            });
        }

        fx = &ws.f * &xi;
        let polar_residual = (&fx - &e).norm();
        let max_violation = max_violation_from_samples(&fx, inst);
        history.push(IterationResidual {
            polar_residual,
            max_violation,
        });
        iterations = k + 1;
        last_aux = Some(aux);
        if let Some(tol) = early_exit_tol {
            if polar_residual < tol {
                break;
            }
        }
    }

    let aux = last_aux.expect("at least one iteration runs");
    Ok((xi, lambda, aux, history, iterations))
}

/// Project a sample onto the feasible set of `q` for the given scene. Runs
/// exactly `ws.k_iters` iterations and returns the final iterate together
/// with per-iteration residuals.
pub fn project(
    ws: &ProjectionWorkspace,
    xi_bar: &TrajCoeffs,
    q: &ConstraintParams,
    scene: &Scene,
    warm: Option<WarmStart<'_>>,
) -> Result<ProjectionResult> {
    project_with_options(ws, xi_bar, q, scene, warm, None)
}

/// [`project`] with an optional residual-based early exit. The early exit is
/// for plain (non-differentiated) use; training unrolls keep the fixed count.
pub fn project_with_options(
    ws: &ProjectionWorkspace,
    xi_bar: &TrajCoeffs,
    q: &ConstraintParams,
    scene: &Scene,
    warm: Option<WarmStart<'_>>,
    early_exit_tol: Option<f64>,
) -> Result<ProjectionResult> {
    q.validate()?;
    let inst = ws.instance_data(scene, q)?;
    let b = ws.equality_rhs(scene, q);
    let xi_bar_stacked = xi_bar.stacked();
    let (warm_xi, warm_lambda) = match warm {
        Some((x0, l0)) => (x0.stacked(), l0.clone_owned()),
        None => (xi_bar_stacked.clone_owned(), DVector::zeros(ws.n_primal())),
    };
    let (xi, lambda, aux, history, iterations) = run_iterations(
        ws,
        &inst,
        &b,
        &xi_bar_stacked,
        &warm_xi,
        &warm_lambda,
        ws.k_iters,
        early_exit_tol,
        None,
    )?;
    Ok(ProjectionResult {
        xi: TrajCoeffs::from_stacked(&xi)?,
        lambda,
        aux,
        residual_history: history,
        iterations_run: iterations,
    })
}

/// Project a batch of samples against one scene. Samples are independent, so
/// the batch may fan out across threads; each result is bitwise identical to
/// the corresponding sequential [`project`] call, and per-sample errors are
/// returned in place without aborting the rest.
pub fn project_batch(
    ws: &ProjectionWorkspace,
    requests: &[ProjectionRequest],
    scene: &Scene,
) -> Vec<Result<ProjectionResult>> {
    requests
        .par_iter()
        .map(|req| {
            let warm = req.warm.as_ref().map(|(x, l)| (x, l));
            project(ws, &req.xi_bar, &req.q, scene, warm)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, fit_polynomial};
    use approx::assert_relative_eq;
    use nalgebra::Vector2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis() -> Arc<BasisSet> {
        Arc::new(build_basis(5.0, 50, 10).unwrap())
    }

    fn limits() -> KinematicLimits {
        KinematicLimits {
            v_max: 2.5,
            a_max: 5.0,
        }
    }

    fn line_sample(basis: &BasisSet, from: Vector2<f64>, to: Vector2<f64>) -> TrajCoeffs {
        let pts = DMatrix::from_fn(basis.m, 2, |i, axis| {
            let s = basis.times[i] / basis.horizon_s;
            let p = from + (to - from) * s;
            if axis == 0 {
                p.x
            } else {
                p.y
            }
        });
        fit_polynomial(&pts, basis).unwrap()
    }

    #[test]
    fn empty_kkt_solves_identity() {
        let f = DMatrix::zeros(0, 6);
        let a = DMatrix::zeros(0, 6);
        let kkt = KktFactor::new(&f, &a, 1.0).unwrap();
        let rhs = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        let sol = kkt.solve(&rhs, &DVector::zeros(0));
        for i in 0..6 {
            assert_relative_eq!(sol[i], rhs[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn kkt_multiply_back_reproduces_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 12;
        let f = DMatrix::from_fn(40, n, |_, _| rng.gen_range(-1.0..1.0));
        let a = DMatrix::from_fn(4, n, |_, _| rng.gen_range(-1.0..1.0));
        let rho = 1.0;
        let kkt = KktFactor::new(&f, &a, rho).unwrap();
        let top = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let bottom = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let sol = kkt.solve(&top, &bottom);

        // Rebuild the KKT matrix independently and multiply back.
        let ftf = f.transpose() * &f;
        let mut m = DMatrix::zeros(n + 4, n + 4);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = rho * ftf[(i, j)] + if i == j { 1.0 } else { 0.0 };
            }
        }
        for r in 0..4 {
            for c in 0..n {
                m[(n + r, c)] = a[(r, c)];
                m[(c, n + r)] = a[(r, c)];
            }
        }
        let back = &m * &sol;
        for i in 0..n {
            assert_relative_eq!(back[i], top[i], epsilon = 1e-10);
        }
        for r in 0..4 {
            assert_relative_eq!(back[n + r], bottom[r], epsilon = 1e-10);
        }
    }

    #[test]
    fn rank_deficient_equalities_are_reported() {
        let n = 8;
        let f = DMatrix::zeros(0, n);
        let mut a = DMatrix::zeros(3, n);
        a[(0, 0)] = 1.0;
        a[(1, 1)] = 1.0;
        a[(2, 0)] = 1.0; // duplicate of row 0
        match KktFactor::new(&f, &a, 1.0) {
            Err(Error::SingularKkt { rank, rows }) => {
                assert_eq!(rank, 2);
                assert_eq!(rows, 3);
            }
            Err(other) => panic!("expected SingularKkt, got {other:?}"),
            Ok(_) => panic!("expected SingularKkt, factorization succeeded"),
        }
    }

    #[test]
    fn factorization_is_q_independent() {
        // The same workspace serves different q values; only b changes, so
        // solving the same rhs stays bitwise identical.
        let ws = ProjectionWorkspace::prefactorize(basis(), 0, limits(), 1.0, 10).unwrap();
        let top = DVector::from_fn(ws.n_primal(), |i, _| (i as f64).sin());
        let bottom = DVector::zeros(10);
        let s1 = ws.kkt().solve(&top, &bottom);
        let s2 = ws.kkt().solve(&top, &bottom);
        assert_eq!(s1, s2);
    }

    fn hover_scene() -> (Scene, ConstraintParams) {
        let scene = Scene {
            robot_p: Vector2::new(0.0, -2.5),
            robot_v: Vector2::zeros(),
            robot_a: Vector2::zeros(),
            target_p: Vector2::zeros(),
            target_v: Vector2::zeros(),
            obstacles: vec![],
            obstacle_radius: 0.5,
        };
        let q = ConstraintParams {
            s_los_min: 1.0,
            s_los_max: 4.0,
            pf: Vector2::new(0.0, -2.5),
            vf: Vector2::zeros(),
        };
        (scene, q)
    }

    #[test]
    fn strictly_feasible_sample_is_a_fixed_point() {
        let b = basis();
        let ws = ProjectionWorkspace::prefactorize(b.clone(), 0, limits(), DEFAULT_RHO, 100).unwrap();
        let (scene, q) = hover_scene();
        let mut xi_bar = TrajCoeffs::zeros(b.n_coeffs());
        xi_bar.cy[0] = -2.5; // hover at the robot position, inside the band
        let res = project(&ws, &xi_bar, &q, &scene, None).unwrap();
        let out = res.xi.stacked();
        let inp = xi_bar.stacked();
        assert!((out - inp).amax() < 1e-6);
        for r in &res.residual_history {
            assert!(r.polar_residual < 1e-6, "residual {}", r.polar_residual);
            assert!(r.max_violation < 1e-9);
        }
    }

    #[test]
    fn projection_clears_an_obstacle_on_the_path() {
        let b = basis();
        let scene = Scene {
            robot_p: Vector2::new(-3.0, 0.0),
            robot_v: Vector2::zeros(),
            robot_a: Vector2::zeros(),
            target_p: Vector2::new(0.0, 10.0),
            target_v: Vector2::zeros(),
            obstacles: vec![Obstacle {
                center: Vector2::zeros(),
                velocity: Vector2::zeros(),
            }],
            obstacle_radius: 1.0,
        };
        let q = ConstraintParams {
            s_los_min: 0.1,
            s_los_max: 50.0,
            pf: Vector2::new(3.0, 0.0),
            vf: Vector2::zeros(),
        };
        let ws = ProjectionWorkspace::prefactorize(b.clone(), 1, limits(), DEFAULT_RHO, 100).unwrap();
        // Real samples carry noise; a perfectly symmetric straight line
        // through the disk center is a saddle the iteration cannot leave.
        let mut xi_bar = line_sample(&b, scene.robot_p, q.pf);
        xi_bar.cy[2] += 0.05;
        let res = project(&ws, &xi_bar, &q, &scene, None).unwrap();
        let s = crate::basis::eval_trajectory(&res.xi, &b).unwrap();
        let min_clearance = (0..b.m)
            .map(|i| (s.pos[(i, 0)].powi(2) + s.pos[(i, 1)].powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(
            min_clearance >= scene.obstacle_radius - 0.05,
            "clearance {min_clearance}"
        );
        // Boundary conditions hold exactly.
        let a = ws.a_matrix();
        let bvec = ws.equality_rhs(&scene, &q);
        let gap = (a * res.xi.stacked() - bvec).amax();
        assert!(gap <= 1e-8, "equality gap {gap}");
    }

    use crate::constraints::Obstacle;

    #[test]
    fn projection_caps_an_overspeed_sample() {
        let b = basis();
        let scene = Scene {
            robot_p: Vector2::zeros(),
            robot_v: Vector2::zeros(),
            robot_a: Vector2::zeros(),
            target_p: Vector2::new(5.0, 0.0),
            target_v: Vector2::zeros(),
            obstacles: vec![],
            obstacle_radius: 0.5,
        };
        let lim = KinematicLimits {
            v_max: 1.0,
            a_max: 5.0,
        };
        let q = ConstraintParams {
            s_los_min: 0.1,
            s_los_max: 100.0,
            pf: Vector2::new(3.0, 0.0),
            vf: Vector2::zeros(),
        };
        let ws = ProjectionWorkspace::prefactorize(b.clone(), 0, lim, DEFAULT_RHO, 100).unwrap();
        // The sample demands a straight sweep at 3x the speed limit.
        let xi_bar = line_sample(&b, Vector2::zeros(), Vector2::new(15.0, 0.0));
        let res = project(&ws, &xi_bar, &q, &scene, None).unwrap();
        let s = crate::basis::eval_trajectory(&res.xi, &b).unwrap();
        let max_speed = (0..b.m)
            .map(|i| (s.vel[(i, 0)].powi(2) + s.vel[(i, 1)].powi(2)).sqrt())
            .fold(0.0, f64::max);
        assert!(max_speed <= lim.v_max + 0.02, "max speed {max_speed}");
    }

    #[test]
    fn unconstrained_projection_is_identity() {
        let b = basis();
        let ws = ProjectionWorkspace::unconstrained(b.clone(), limits(), 1.0, 5).unwrap();
        let (scene, q) = hover_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let xi_bar = TrajCoeffs {
            cx: DVector::from_fn(b.n_coeffs(), |_, _| rng.gen_range(-1.0..1.0)),
            cy: DVector::from_fn(b.n_coeffs(), |_, _| rng.gen_range(-1.0..1.0)),
        };
        let res = project(&ws, &xi_bar, &q, &scene, None).unwrap();
        let diff = (res.xi.stacked() - xi_bar.stacked()).amax();
        assert!(diff < 1e-12, "identity violated by {diff}");
    }

    #[test]
    fn batch_of_one_equals_project_bitwise() {
        let b = basis();
        let ws = ProjectionWorkspace::prefactorize(b.clone(), 0, limits(), 1.0, 40).unwrap();
        let (scene, q) = hover_scene();
        let xi_bar = line_sample(&b, scene.robot_p, Vector2::new(1.0, -1.5));
        let single = project(&ws, &xi_bar, &q, &scene, None).unwrap();
        let batch = project_batch(
            &ws,
            &[ProjectionRequest {
                xi_bar: xi_bar.clone(),
                q: q.clone(),
                warm: None,
            }],
            &scene,
        );
        let out = batch[0].as_ref().unwrap();
        assert_eq!(out.xi.stacked(), single.xi.stacked());
        assert_eq!(out.lambda, single.lambda);
    }

    #[test]
    fn duplicated_batch_entries_are_identical() {
        let b = basis();
        let ws = ProjectionWorkspace::prefactorize(b.clone(), 0, limits(), 1.0, 30).unwrap();
        let (scene, q) = hover_scene();
        let xi_bar = line_sample(&b, scene.robot_p, Vector2::new(1.0, -1.5));
        let req = ProjectionRequest {
            xi_bar,
            q,
            warm: None,
        };
        let batch = project_batch(&ws, &vec![req; 5], &scene);
        let first = batch[0].as_ref().unwrap().xi.stacked();
        for r in &batch {
            assert_eq!(r.as_ref().unwrap().xi.stacked(), first);
        }
    }

    #[test]
    fn early_exit_stops_before_budget() {
        let b = basis();
        let ws = ProjectionWorkspace::prefactorize(b.clone(), 0, limits(), 1.0, 100).unwrap();
        let (scene, q) = hover_scene();
        let mut xi_bar = TrajCoeffs::zeros(b.n_coeffs());
        xi_bar.cy[0] = -2.5;
        let res =
            project_with_options(&ws, &xi_bar, &q, &scene, None, Some(1e-3)).unwrap();
        assert!(res.iterations_run < 100);
        assert_eq!(res.residual_history.len(), res.iterations_run);
    }
}
