//! Constraint model for the trajectory projection.
//!
//! The feasible set combines linear boundary conditions `A xi = b(q)` with
//! per-sample norm bounds (speed, acceleration, tracking band, obstacle
//! clearance). Each norm bound is rewritten in polar form,
//! `residual = scale * d * (cos alpha, sin alpha)` with box bounds on `d`,
//! which turns the stacked system into `F xi = e(alpha, d)` plus simple
//! bounds. The closed-form minimizers over `(alpha, d)` live here, as does
//! raw violation evaluation.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::basis::{eval_trajectory, BasisSet, TrajCoeffs};
use crate::error::{Error, Result};

/// Upper bound on the polar obstacle variable for real scan points. The
/// obstacle constraint is one-sided (stay out of the disk), so this only has
/// to exceed any separation ever expressed in units of the disk radius.
pub const OBSTACLE_D_MAX: f64 = 50.0;

/// Coordinate magnitude of the virtual points used to pad a pruned scan up to
/// the fixed obstacle count. Instances this far out get an unbounded polar
/// upper bound so they can never attract the solution.
pub const VIRTUAL_OBSTACLE_DISTANCE: f64 = 1e6;

/// Distance threshold above which an obstacle is treated as a virtual pad.
const VIRTUAL_THRESHOLD: f64 = 1e5;

/// Boundary conditions pinned by the equality constraints: full state at the
/// start of the horizon, position and velocity at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryState {
    pub p0: Vector2<f64>,
    pub v0: Vector2<f64>,
    pub a0: Vector2<f64>,
    pub pf: Vector2<f64>,
    pub vf: Vector2<f64>,
}

/// Per-plan constraint parameters: the tracking band and the terminal state.
/// These are the learnable knobs of the feasible set.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintParams {
    pub s_los_min: f64,
    pub s_los_max: f64,
    pub pf: Vector2<f64>,
    pub vf: Vector2<f64>,
}

impl ConstraintParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_los_min > 0.0 && self.s_los_min < self.s_los_max) {
            return Err(Error::InvalidArgument(format!(
                "tracking band requires 0 < min < max, got [{}, {}]",
                self.s_los_min, self.s_los_max
            )));
        }
        Ok(())
    }
}

/// A disk obstacle (scan point inflated by the shared radius) with a constant
/// velocity used for linear extrapolation over the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: Vector2<f64>,
    pub velocity: Vector2<f64>,
}

impl Obstacle {
    pub fn is_virtual(&self) -> bool {
        self.center.norm() >= VIRTUAL_THRESHOLD
    }
}

/// Everything the planner sees at one planning instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub robot_p: Vector2<f64>,
    pub robot_v: Vector2<f64>,
    pub robot_a: Vector2<f64>,
    pub target_p: Vector2<f64>,
    pub target_v: Vector2<f64>,
    pub obstacles: Vec<Obstacle>,
    /// Shared disk radius for all obstacles (m).
    pub obstacle_radius: f64,
}

impl Scene {
    pub fn boundary_state(&self, q: &ConstraintParams) -> BoundaryState {
        BoundaryState {
            p0: self.robot_p,
            v0: self.robot_v,
            a0: self.robot_a,
            pf: q.pf,
            vf: q.vf,
        }
    }
}

/// Speed and acceleration norm bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicLimits {
    pub v_max: f64,
    pub a_max: f64,
}

/// Row layout of the stacked inequality system. Per axis the rows are
/// `[obstacles (n_obs * m); velocity (m); acceleration (m); tracking (m)]`,
/// and the y-axis block repeats the x-axis block. One "instance" is an
/// (x row, y row) pair sharing a polar variable pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintLayout {
    pub n_obs: usize,
    pub m: usize,
}

/// Constraint group of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Obstacle,
    Velocity,
    Acceleration,
    Tracking,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Obstacle => "obstacle",
            Group::Velocity => "velocity",
            Group::Acceleration => "acceleration",
            Group::Tracking => "tracking",
        }
    }
}

impl ConstraintLayout {
    pub fn rows_per_axis(&self) -> usize {
        self.m * (self.n_obs + 3)
    }

    /// Total rows of the stacked matrix (both axes).
    pub fn rows(&self) -> usize {
        2 * self.rows_per_axis()
    }

    /// Number of (x, y) instances, i.e. polar variable pairs.
    pub fn instances(&self) -> usize {
        self.rows_per_axis()
    }

    pub fn obstacle_start(&self) -> usize {
        0
    }

    pub fn velocity_start(&self) -> usize {
        self.n_obs * self.m
    }

    pub fn acceleration_start(&self) -> usize {
        self.velocity_start() + self.m
    }

    pub fn tracking_start(&self) -> usize {
        self.acceleration_start() + self.m
    }

    pub fn group_of(&self, instance: usize) -> Group {
        debug_assert!(instance < self.instances());
        if instance < self.velocity_start() {
            Group::Obstacle
        } else if instance < self.acceleration_start() {
            Group::Velocity
        } else if instance < self.tracking_start() {
            Group::Acceleration
        } else {
            Group::Tracking
        }
    }

    /// Sample index within the horizon for an instance.
    pub fn sample_of(&self, instance: usize) -> usize {
        match self.group_of(instance) {
            Group::Obstacle => instance % self.m,
            _ => (instance - self.velocity_start()) % self.m,
        }
    }
}

/// Per-instance constraint data for one plan: the constant offsets
/// subtracted from the stacked trajectory samples, the polar scale, and the
/// `d` box bounds (tracking bounds come from `q`, so they carry gradient).
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceData {
    pub layout: ConstraintLayout,
    pub offset_x: DVector<f64>,
    pub offset_y: DVector<f64>,
    pub scale: DVector<f64>,
    pub d_lo: DVector<f64>,
    pub d_hi: DVector<f64>,
}

impl InstanceData {
    /// Geometry part only (offsets and scales); bounds are left at
    /// placeholder values. Sufficient for assembling `e`.
    pub fn geometry(
        scene: &Scene,
        basis: &BasisSet,
        target_traj: &DMatrix<f64>,
    ) -> Result<Self> {
        let n_obs = scene.obstacles.len();
        let layout = ConstraintLayout { n_obs, m: basis.m };
        if target_traj.nrows() != basis.m || target_traj.ncols() != 2 {
            return Err(Error::Dimension(format!(
                "target trajectory must be {}x2, got {}x{}",
                basis.m,
                target_traj.nrows(),
                target_traj.ncols()
            )));
        }
        let n_inst = layout.instances();
        let mut offset_x = DVector::zeros(n_inst);
        let mut offset_y = DVector::zeros(n_inst);
        let mut scale = DVector::from_element(n_inst, 1.0);
        for (i, obs) in scene.obstacles.iter().enumerate() {
            for j in 0..basis.m {
                let t = basis.times[j];
                let idx = i * basis.m + j;
                offset_x[idx] = obs.center.x + obs.velocity.x * t;
                offset_y[idx] = obs.center.y + obs.velocity.y * t;
                scale[idx] = scene.obstacle_radius;
            }
        }
        let track0 = layout.tracking_start();
        for j in 0..basis.m {
            offset_x[track0 + j] = target_traj[(j, 0)];
            offset_y[track0 + j] = target_traj[(j, 1)];
        }
        Ok(Self {
            layout,
            offset_x,
            offset_y,
            scale,
            d_lo: DVector::zeros(n_inst),
            d_hi: DVector::from_element(n_inst, f64::INFINITY),
        })
    }

    /// Full instance data including the `d` bounds.
    pub fn build(
        scene: &Scene,
        q: &ConstraintParams,
        limits: &KinematicLimits,
        basis: &BasisSet,
        target_traj: &DMatrix<f64>,
    ) -> Result<Self> {
        let mut data = Self::geometry(scene, basis, target_traj)?;
        let layout = data.layout;
        for (i, obs) in scene.obstacles.iter().enumerate() {
            let hi = if obs.is_virtual() {
                f64::INFINITY
            } else {
                OBSTACLE_D_MAX
            };
            for j in 0..basis.m {
                data.d_lo[i * basis.m + j] = 1.0;
                data.d_hi[i * basis.m + j] = hi;
            }
        }
        for j in 0..basis.m {
            data.d_lo[layout.velocity_start() + j] = 0.0;
            data.d_hi[layout.velocity_start() + j] = limits.v_max;
            data.d_lo[layout.acceleration_start() + j] = 0.0;
            data.d_hi[layout.acceleration_start() + j] = limits.a_max;
            data.d_lo[layout.tracking_start() + j] = q.s_los_min;
            data.d_hi[layout.tracking_start() + j] = q.s_los_max;
        }
        Ok(data)
    }

    /// Whether an instance belongs to a virtual pad obstacle (unbounded above).
    pub fn is_virtual_instance(&self, instance: usize) -> bool {
        self.layout.group_of(instance) == Group::Obstacle && self.d_hi[instance].is_infinite()
    }
}

/// Target positions linearly extrapolated over the sample instants (m x 2).
pub fn extrapolate_target(
    target_p: Vector2<f64>,
    target_v: Vector2<f64>,
    times: &[f64],
) -> DMatrix<f64> {
    DMatrix::from_fn(times.len(), 2, |i, axis| {
        if axis == 0 {
            target_p.x + target_v.x * times[i]
        } else {
            target_p.y + target_v.y * times[i]
        }
    })
}

/// Assemble the boundary-condition system `(A, b)`.
///
/// Row order of `A` and `b` (x/y interleaved):
/// `[p0x, p0y, v0x, v0y, a0x, a0y, pfx, pfy, vfx, vfy]`.
/// The start rows come from `b0` and the terminal rows from `q`; `A` depends
/// only on the basis, never on either.
pub fn assemble_equality(
    b0: &BoundaryState,
    q: &ConstraintParams,
    basis: &BasisSet,
) -> (DMatrix<f64>, DVector<f64>) {
    (assemble_a(basis), assemble_b(b0, q))
}

/// The equality constraint matrix: 10 x 2*n_c, built from the first and last
/// basis rows.
pub fn assemble_a(basis: &BasisSet) -> DMatrix<f64> {
    let n_c = basis.n_coeffs();
    let last = basis.m - 1;
    let mut a = DMatrix::zeros(10, 2 * n_c);
    // (row pair, source matrix, sample row)
    let rows: [(usize, &DMatrix<f64>, usize); 5] = [
        (0, &basis.w, 0),
        (2, &basis.wd, 0),
        (4, &basis.wdd, 0),
        (6, &basis.w, last),
        (8, &basis.wd, last),
    ];
    for (r, mat, sample) in rows {
        for k in 0..n_c {
            a[(r, k)] = mat[(sample, k)];
            a[(r + 1, n_c + k)] = mat[(sample, k)];
        }
    }
    a
}

/// The equality right-hand side `b(q)` in the documented row order. Only this
/// side changes with `q`.
pub fn assemble_b(b0: &BoundaryState, q: &ConstraintParams) -> DVector<f64> {
    DVector::from_column_slice(&[
        b0.p0.x, b0.p0.y, b0.v0.x, b0.v0.y, b0.a0.x, b0.a0.y, q.pf.x, q.pf.y, q.vf.x, q.vf.y,
    ])
}

/// Assemble the stacked inequality matrix `F`: block diagonal over axes, and
/// per axis a vertical stack `[W repeated n_obs times; Wd; Wdd; W]`.
pub fn assemble_f(basis: &BasisSet, n_obs: usize) -> DMatrix<f64> {
    let layout = ConstraintLayout { n_obs, m: basis.m };
    let n_c = basis.n_coeffs();
    let rpa = layout.rows_per_axis();
    let mut f = DMatrix::zeros(2 * rpa, 2 * n_c);
    let mut put = |row: usize, mat: &DMatrix<f64>, sample: usize| {
        for k in 0..n_c {
            f[(row, k)] = mat[(sample, k)];
            f[(rpa + row, n_c + k)] = mat[(sample, k)];
        }
    };
    for i in 0..n_obs {
        for j in 0..basis.m {
            put(i * basis.m + j, &basis.w, j);
        }
    }
    for j in 0..basis.m {
        put(layout.velocity_start() + j, &basis.wd, j);
        put(layout.acceleration_start() + j, &basis.wdd, j);
        put(layout.tracking_start() + j, &basis.w, j);
    }
    f
}

/// How a polar magnitude update interacted with its box bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClampState {
    Interior,
    Low,
    High,
}

/// Polar auxiliary variables, one `(alpha, d)` pair per constraint instance
/// in layout order, plus the clamp state needed to differentiate through the
/// update and the indices of degenerate (zero-residual) instances.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxVars {
    pub layout: ConstraintLayout,
    pub alpha: DVector<f64>,
    pub d: DVector<f64>,
    pub clamp: Vec<ClampState>,
    pub degenerate: Vec<usize>,
}

/// Closed-form minimization over the polar variables given the stacked
/// trajectory samples `fx = F xi` (length `layout.rows()`).
///
/// For each instance with planar residual `r` (sample minus offset):
/// `alpha* = atan2(r_y, r_x)` and `d* = clamp(|r| / scale, d_lo, d_hi)`.
/// A zero residual takes `alpha = 0`, `d = d_lo` by convention and is
/// reported as degenerate.
pub fn alpha_d_from_samples(fx: &DVector<f64>, inst: &InstanceData) -> AuxVars {
    let n = inst.layout.instances();
    debug_assert_eq!(fx.len(), 2 * n);
    let mut alpha = DVector::zeros(n);
    let mut d = DVector::zeros(n);
    let mut clamp = vec![ClampState::Interior; n];
    let mut degenerate = Vec::new();
    for j in 0..n {
        let rx = fx[j] - inst.offset_x[j];
        let ry = fx[n + j] - inst.offset_y[j];
        let norm = (rx * rx + ry * ry).sqrt();
        if norm == 0.0 {
            alpha[j] = 0.0;
            d[j] = inst.d_lo[j];
            clamp[j] = ClampState::Low;
            degenerate.push(j);
            continue;
        }
        alpha[j] = ry.atan2(rx);
        let raw = norm / inst.scale[j];
        if raw <= inst.d_lo[j] {
            d[j] = inst.d_lo[j];
            clamp[j] = ClampState::Low;
        } else if raw >= inst.d_hi[j] {
            d[j] = inst.d_hi[j];
            clamp[j] = ClampState::High;
        } else {
            d[j] = raw;
        }
    }
    AuxVars {
        layout: inst.layout,
        alpha,
        d,
        clamp,
        degenerate,
    }
}

/// Closed-form polar update from a coefficient vector. Convenience wrapper
/// over [`alpha_d_from_samples`] that evaluates the trajectory first.
pub fn update_alpha_d(
    xi: &TrajCoeffs,
    scene: &Scene,
    q: &ConstraintParams,
    limits: &KinematicLimits,
    basis: &BasisSet,
    target_traj: &DMatrix<f64>,
) -> Result<AuxVars> {
    let inst = InstanceData::build(scene, q, limits, basis, target_traj)?;
    let fx = stacked_samples(xi, basis, &inst.layout)?;
    Ok(alpha_d_from_samples(&fx, &inst))
}

/// Stacked trajectory samples in `F`-row order, computed straight from the
/// basis products (identical values to `F * xi`).
pub fn stacked_samples(
    xi: &TrajCoeffs,
    basis: &BasisSet,
    layout: &ConstraintLayout,
) -> Result<DVector<f64>> {
    let s = eval_trajectory(xi, basis)?;
    let n = layout.instances();
    let mut fx = DVector::zeros(2 * n);
    for j in 0..n {
        let sample = layout.sample_of(j);
        let (x, y) = match layout.group_of(j) {
            Group::Obstacle | Group::Tracking => (s.pos[(sample, 0)], s.pos[(sample, 1)]),
            Group::Velocity => (s.vel[(sample, 0)], s.vel[(sample, 1)]),
            Group::Acceleration => (s.acc[(sample, 0)], s.acc[(sample, 1)]),
        };
        fx[j] = x;
        fx[n + j] = y;
    }
    Ok(fx)
}

/// Assemble the polar right-hand side `e(alpha, d)` in `F`-row order:
/// `offset + scale * d * (cos alpha | sin alpha)` per instance and axis.
pub fn e_from_aux(inst: &InstanceData, alpha: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
    let n = inst.layout.instances();
    let mut e = DVector::zeros(2 * n);
    for j in 0..n {
        let sd = inst.scale[j] * d[j];
        e[j] = inst.offset_x[j] + sd * alpha[j].cos();
        e[n + j] = inst.offset_y[j] + sd * alpha[j].sin();
    }
    e
}

/// Public wrapper assembling `e` from a scene (offsets and scales are
/// q-independent, so no constraint parameters are needed).
pub fn assemble_e(
    aux: &AuxVars,
    scene: &Scene,
    basis: &BasisSet,
    target_traj: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let inst = InstanceData::geometry(scene, basis, target_traj)?;
    if inst.layout != aux.layout {
        return Err(Error::Dimension(format!(
            "aux layout {:?} does not match scene layout {:?}",
            aux.layout, inst.layout
        )));
    }
    Ok(e_from_aux(&inst, &aux.alpha, &aux.d))
}

/// Raw per-sample constraint violations for a candidate trajectory.
///
/// All entries are `max(0, .)` magnitudes: velocity and acceleration excess
/// over the limits, tracking-band excursions on both sides, and obstacle disk
/// penetration per obstacle and sample. `penalty` is the squared-norm sum
/// over every entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationReport {
    pub velocity: Vec<f64>,
    pub acceleration: Vec<f64>,
    pub track_low: Vec<f64>,
    pub track_high: Vec<f64>,
    /// Flattened obstacle-major: entry `i * m + j` is obstacle `i`, sample `j`.
    pub obstacle: Vec<f64>,
    pub penalty: f64,
}

impl ViolationReport {
    pub fn max_velocity(&self) -> f64 {
        max_of(&self.velocity)
    }
    pub fn max_acceleration(&self) -> f64 {
        max_of(&self.acceleration)
    }
    pub fn max_tracking(&self) -> f64 {
        max_of(&self.track_low).max(max_of(&self.track_high))
    }
    pub fn max_obstacle(&self) -> f64 {
        max_of(&self.obstacle)
    }
    pub fn overall_max(&self) -> f64 {
        self.max_velocity()
            .max(self.max_acceleration())
            .max(self.max_tracking())
            .max(self.max_obstacle())
    }
    /// Kinematic and obstacle violations only (the tracking band excluded).
    pub fn safety_max(&self) -> f64 {
        self.max_velocity()
            .max(self.max_acceleration())
            .max(self.max_obstacle())
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b))
}

/// Evaluate every raw constraint violation of `xi` against a scene.
pub fn constraint_violations(
    xi: &TrajCoeffs,
    scene: &Scene,
    q: &ConstraintParams,
    limits: &KinematicLimits,
    basis: &BasisSet,
    target_traj: &DMatrix<f64>,
) -> Result<ViolationReport> {
    let s = eval_trajectory(xi, basis)?;
    let m = basis.m;
    let l = scene.obstacle_radius;
    let mut velocity = vec![0.0; m];
    let mut acceleration = vec![0.0; m];
    let mut track_low = vec![0.0; m];
    let mut track_high = vec![0.0; m];
    let mut obstacle = vec![0.0; scene.obstacles.len() * m];
    for j in 0..m {
        let v = (s.vel[(j, 0)].powi(2) + s.vel[(j, 1)].powi(2)).sqrt();
        let a = (s.acc[(j, 0)].powi(2) + s.acc[(j, 1)].powi(2)).sqrt();
        velocity[j] = (v - limits.v_max).max(0.0);
        acceleration[j] = (a - limits.a_max).max(0.0);
        let dx = s.pos[(j, 0)] - target_traj[(j, 0)];
        let dy = s.pos[(j, 1)] - target_traj[(j, 1)];
        let sep = (dx * dx + dy * dy).sqrt();
        track_low[j] = (q.s_los_min - sep).max(0.0);
        track_high[j] = (sep - q.s_los_max).max(0.0);
    }
    for (i, obs) in scene.obstacles.iter().enumerate() {
        for j in 0..m {
            let t = basis.times[j];
            let ox = obs.center.x + obs.velocity.x * t;
            let oy = obs.center.y + obs.velocity.y * t;
            let dx = s.pos[(j, 0)] - ox;
            let dy = s.pos[(j, 1)] - oy;
            let dist = (dx * dx + dy * dy).sqrt();
            obstacle[i * m + j] = (l - dist).max(0.0);
        }
    }
    let penalty = velocity
        .iter()
        .chain(&acceleration)
        .chain(&track_low)
        .chain(&track_high)
        .chain(&obstacle)
        .map(|v| v * v)
        .sum();
    Ok(ViolationReport {
        velocity,
        acceleration,
        track_low,
        track_high,
        obstacle,
        penalty,
    })
}

/// Gradient of the squared violation penalty.
///
/// Returns `(penalty, d_penalty/d_xi, d_penalty/d_s_los_min,
/// d_penalty/d_s_los_max)`. The band bounds appear directly in the tracking
/// hinges, which is the only way `q` enters the penalty.
pub fn penalty_gradient(
    xi: &TrajCoeffs,
    scene: &Scene,
    q: &ConstraintParams,
    limits: &KinematicLimits,
    basis: &BasisSet,
    target_traj: &DMatrix<f64>,
) -> Result<(f64, DVector<f64>, f64, f64)> {
    let s = eval_trajectory(xi, basis)?;
    let m = basis.m;
    let n_c = basis.n_coeffs();
    let mut gx = DVector::zeros(n_c);
    let mut gy = DVector::zeros(n_c);
    let mut d_smin = 0.0;
    let mut d_smax = 0.0;
    let mut penalty = 0.0;

    // Each hinge term is v^2 with v = max(0, g); d(v^2)/d(sample) =
    // 2 v * unit(residual) through the norm, then the basis row maps the
    // sample back to coefficients.
    let add_row = |mat: &DMatrix<f64>, j: usize, wx: f64, wy: f64, gx: &mut DVector<f64>, gy: &mut DVector<f64>| {
        for k in 0..n_c {
            gx[k] += wx * mat[(j, k)];
            gy[k] += wy * mat[(j, k)];
        }
    };

    for j in 0..m {
        let (vx, vy) = (s.vel[(j, 0)], s.vel[(j, 1)]);
        let vnorm = (vx * vx + vy * vy).sqrt();
        let vexc = (vnorm - limits.v_max).max(0.0);
        penalty += vexc * vexc;
        if vexc > 0.0 && vnorm > 0.0 {
            let c = 2.0 * vexc / vnorm;
            add_row(&basis.wd, j, c * vx, c * vy, &mut gx, &mut gy);
        }

        let (ax, ay) = (s.acc[(j, 0)], s.acc[(j, 1)]);
        let anorm = (ax * ax + ay * ay).sqrt();
        let aexc = (anorm - limits.a_max).max(0.0);
        penalty += aexc * aexc;
        if aexc > 0.0 && anorm > 0.0 {
            let c = 2.0 * aexc / anorm;
            add_row(&basis.wdd, j, c * ax, c * ay, &mut gx, &mut gy);
        }

        let dx = s.pos[(j, 0)] - target_traj[(j, 0)];
        let dy = s.pos[(j, 1)] - target_traj[(j, 1)];
        let sep = (dx * dx + dy * dy).sqrt();
        let lo = (q.s_los_min - sep).max(0.0);
        let hi = (sep - q.s_los_max).max(0.0);
        penalty += lo * lo + hi * hi;
        if lo > 0.0 {
            d_smin += 2.0 * lo;
            if sep > 0.0 {
                let c = -2.0 * lo / sep;
                add_row(&basis.w, j, c * dx, c * dy, &mut gx, &mut gy);
            }
        }
        if hi > 0.0 {
            d_smax -= 2.0 * hi;
            let c = 2.0 * hi / sep;
            add_row(&basis.w, j, c * dx, c * dy, &mut gx, &mut gy);
        }
    }

    let l = scene.obstacle_radius;
    for obs in &scene.obstacles {
        for j in 0..m {
            let t = basis.times[j];
            let dx = s.pos[(j, 0)] - (obs.center.x + obs.velocity.x * t);
            let dy = s.pos[(j, 1)] - (obs.center.y + obs.velocity.y * t);
            let dist = (dx * dx + dy * dy).sqrt();
            let pen = (l - dist).max(0.0);
            penalty += pen * pen;
            if pen > 0.0 && dist > 0.0 {
                let c = -2.0 * pen / dist;
                add_row(&basis.w, j, c * dx, c * dy, &mut gx, &mut gy);
            }
        }
    }

    let mut grad = DVector::zeros(2 * n_c);
    grad.rows_mut(0, n_c).copy_from(&gx);
    grad.rows_mut(n_c, n_c).copy_from(&gy);
    Ok((penalty, grad, d_smin, d_smax))
}
