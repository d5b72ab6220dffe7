//! Polynomial trajectory basis.
//!
//! A planar trajectory is a pair of degree-`n` polynomials in normalized time
//! `s = t / horizon`, one per axis. The basis matrices map a coefficient
//! vector to positions, velocities and accelerations sampled at `m` instants,
//! so downstream solvers only ever see matrix products.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Basis matrices sampled over one planning horizon.
///
/// `w[i][k] = s_i^k` with `s_i = times[i] / horizon_s`; `wd` and `wdd` are the
/// analytic first and second time derivatives (each `d/ds` carries a
/// `1/horizon_s` chain factor). Normalizing time keeps every entry of `w` in
/// `[0, 1]`, which keeps the downstream linear systems well conditioned.
///
/// Immutable after construction; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    pub horizon_s: f64,
    /// Number of sample instants.
    pub m: usize,
    pub degree: usize,
    /// m x (degree+1) basis values (dimensionless).
    pub w: DMatrix<f64>,
    /// m x (degree+1) first derivatives (1/s).
    pub wd: DMatrix<f64>,
    /// m x (degree+1) second derivatives (1/s^2).
    pub wdd: DMatrix<f64>,
    /// Sample instants, strictly increasing from 0 to `horizon_s`.
    pub times: Vec<f64>,
}

impl BasisSet {
    /// Number of coefficients per axis.
    pub fn n_coeffs(&self) -> usize {
        self.degree + 1
    }
}

/// Build the basis matrices for `m` equally spaced samples on `[0, horizon_s]`.
///
/// `degree >= 4` is required because the boundary conditions pin three
/// derivative orders at the start and two at the end of the trajectory;
/// anything lower leaves no freedom per axis.
pub fn build_basis(horizon_s: f64, m: usize, degree: usize) -> Result<BasisSet> {
    if !(horizon_s > 0.0) || !horizon_s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive and finite, got {horizon_s}"
        )));
    }
    if degree < 4 {
        return Err(Error::InvalidArgument(format!(
            "polynomial degree must be at least 4, got {degree}"
        )));
    }
    if m < degree + 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least degree+1 = {} samples, got {m}",
            degree + 1
        )));
    }

    let n_c = degree + 1;
    let times: Vec<f64> = (0..m)
        .map(|i| horizon_s * i as f64 / (m - 1) as f64)
        .collect();

    let mut w = DMatrix::zeros(m, n_c);
    let mut wd = DMatrix::zeros(m, n_c);
    let mut wdd = DMatrix::zeros(m, n_c);
    let inv_t = 1.0 / horizon_s;
    for (i, &t) in times.iter().enumerate() {
        let s = t * inv_t;
        // s^k, k s^(k-1) / T, k(k-1) s^(k-2) / T^2; powers accumulate so
        // s = 0 handles 0^0 = 1 without a special case.
        let mut pow = 1.0; // s^(k)
        let mut pow_d = 1.0; // s^(k-1) accumulator for wd
        let mut pow_dd = 1.0; // s^(k-2) accumulator for wdd
        for k in 0..n_c {
            w[(i, k)] = pow;
            if k >= 1 {
                wd[(i, k)] = k as f64 * pow_d * inv_t;
                if k >= 2 {
                    wdd[(i, k)] = (k * (k - 1)) as f64 * pow_dd * inv_t * inv_t;
                    pow_dd *= s;
                }
                pow_d *= s;
            }
            pow *= s;
        }
    }

    Ok(BasisSet {
        horizon_s,
        m,
        degree,
        w,
        wd,
        wdd,
        times,
    })
}

/// Per-axis polynomial coefficients. The stacked view is always `[cx; cy]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajCoeffs {
    pub cx: DVector<f64>,
    pub cy: DVector<f64>,
}

impl TrajCoeffs {
    pub fn zeros(n_coeffs: usize) -> Self {
        Self {
            cx: DVector::zeros(n_coeffs),
            cy: DVector::zeros(n_coeffs),
        }
    }

    /// Split a stacked `[cx; cy]` vector.
    pub fn from_stacked(xi: &DVector<f64>) -> Result<Self> {
        if xi.len() % 2 != 0 {
            return Err(Error::Dimension(format!(
                "stacked coefficient vector must have even length, got {}",
                xi.len()
            )));
        }
        let n = xi.len() / 2;
        Ok(Self {
            cx: xi.rows(0, n).into_owned(),
            cy: xi.rows(n, n).into_owned(),
        })
    }

    /// Stack as `[cx; cy]`.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.cx.len();
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&self.cx);
        out.rows_mut(n, n).copy_from(&self.cy);
        out
    }

    pub fn n_coeffs(&self) -> usize {
        self.cx.len()
    }
}

/// Trajectory samples produced by applying the basis matrices: `m x 2` each.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory {
    pub pos: DMatrix<f64>,
    pub vel: DMatrix<f64>,
    pub acc: DMatrix<f64>,
}

/// Evaluate positions, velocities and accelerations at the basis sample
/// instants. Exact matrix products, nothing else.
pub fn eval_trajectory(xi: &TrajCoeffs, basis: &BasisSet) -> Result<SampledTrajectory> {
    check_coeff_dims(xi, basis)?;
    let mut pos = DMatrix::zeros(basis.m, 2);
    let mut vel = DMatrix::zeros(basis.m, 2);
    let mut acc = DMatrix::zeros(basis.m, 2);
    pos.column_mut(0).gemv(1.0, &basis.w, &xi.cx, 0.0);
    pos.column_mut(1).gemv(1.0, &basis.w, &xi.cy, 0.0);
    vel.column_mut(0).gemv(1.0, &basis.wd, &xi.cx, 0.0);
    vel.column_mut(1).gemv(1.0, &basis.wd, &xi.cy, 0.0);
    acc.column_mut(0).gemv(1.0, &basis.wdd, &xi.cx, 0.0);
    acc.column_mut(1).gemv(1.0, &basis.wdd, &xi.cy, 0.0);
    Ok(SampledTrajectory { pos, vel, acc })
}

/// Sum of squared acceleration magnitudes over the sample instants (m^2/s^4).
/// The smoothness weight is applied by the caller.
pub fn smoothness_cost(xi: &TrajCoeffs, basis: &BasisSet) -> Result<f64> {
    check_coeff_dims(xi, basis)?;
    let ax = &basis.wdd * &xi.cx;
    let ay = &basis.wdd * &xi.cy;
    Ok(ax.norm_squared() + ay.norm_squared())
}

/// Evaluate position, velocity and acceleration of the polynomial at an
/// arbitrary instant (not restricted to the basis sample grid). Used by the
/// simulator to execute the head of a plan between replans.
pub fn eval_at(xi: &TrajCoeffs, horizon_s: f64, t: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
    let s = t / horizon_s;
    let (px, vx, ax) = horner_with_derivatives(xi.cx.as_slice(), s);
    let (py, vy, ay) = horner_with_derivatives(xi.cy.as_slice(), s);
    let inv_t = 1.0 / horizon_s;
    (
        [px, py],
        [vx * inv_t, vy * inv_t],
        [ax * inv_t * inv_t, ay * inv_t * inv_t],
    )
}

/// Least-squares fit of coefficients to `m x 2` positions at the basis
/// sample instants.
pub fn fit_polynomial(points: &DMatrix<f64>, basis: &BasisSet) -> Result<TrajCoeffs> {
    if points.nrows() != basis.m || points.ncols() != 2 {
        return Err(Error::Dimension(format!(
            "points must be {}x2, got {}x{}",
            basis.m,
            points.nrows(),
            points.ncols()
        )));
    }
    let svd = basis.w.clone().svd(true, true);
    let cx = svd
        .solve(&points.column(0).into_owned(), 1e-12)
        .map_err(|e| Error::InvalidArgument(format!("polynomial fit failed: {e}")))?;
    let cy = svd
        .solve(&points.column(1).into_owned(), 1e-12)
        .map_err(|e| Error::InvalidArgument(format!("polynomial fit failed: {e}")))?;
    Ok(TrajCoeffs {
        cx: cx.column(0).into_owned(),
        cy: cy.column(0).into_owned(),
    })
}

/// Horner evaluation of p(s), p'(s), p''(s) for coefficients in ascending
/// power order.
fn horner_with_derivatives(coeffs: &[f64], s: f64) -> (f64, f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    let mut ddp = 0.0;
    for &c in coeffs.iter().rev() {
        ddp = ddp * s + 2.0 * dp;
        dp = dp * s + p;
        p = p * s + c;
    }
    (p, dp, ddp)
}

fn check_coeff_dims(xi: &TrajCoeffs, basis: &BasisSet) -> Result<()> {
    if xi.cx.len() != basis.n_coeffs() || xi.cy.len() != basis.n_coeffs() {
        return Err(Error::Dimension(format!(
            "coefficient length {}/{} does not match basis n_coeffs {}",
            xi.cx.len(),
            xi.cy.len(),
            basis.n_coeffs()
        )));
    }
    Ok(())
}
