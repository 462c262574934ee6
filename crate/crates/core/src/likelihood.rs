//! GCRF log-likelihood, its gradient, and the exact second-order local model.

use crate::error::{GcrfError, Result};
use crate::linalg::{self, Mat};
use crate::model::{ModelState, SufficientStats};

/// Gradient of the log-likelihood with respect to the unconstrained matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// q×p.
    pub g_theta: Mat,
    /// p×p, symmetric.
    pub g_lambda: Mat,
}

fn check_shapes(theta: &Mat, lambda: &Mat, stats: &SufficientStats) -> Result<()> {
    let d = stats.dims;
    if theta.shape() != (d.q, d.p) || lambda.shape() != (d.p, d.p) {
        return Err(GcrfError::DimensionMismatch(format!(
            "state is theta {:?} / lambda {:?}, statistics expect q={} p={}",
            theta.shape(),
            lambda.shape(),
            d.q,
            d.p
        )));
    }
    Ok(())
}

/// Log-likelihood at an arbitrary `(Θ, Λ)`, factorizing `Λ` afresh.
///
/// `l = (n/2)(log det Λ − tr(S_yy Λ) − 2 tr(S_xyᵀ Θ) − tr(Λ⁻¹ Θᵀ S_xx Θ))`
pub fn log_likelihood_at(theta: &Mat, lambda: &Mat, stats: &SufficientStats) -> Result<f64> {
    check_shapes(theta, lambda, stats)?;
    let chol = linalg::cholesky(lambda)?;
    let n = stats.n();
    let quad = theta.transpose() * &stats.s_xx * theta;
    let tr_inv_quad = chol.solve(&quad).trace();
    let tr_yy = stats.s_yy.dot(lambda);
    let tr_xy = stats.s_xy.dot(theta);
    Ok(0.5 * n * (linalg::log_det(&chol) - tr_yy - 2.0 * tr_xy - tr_inv_quad))
}

pub fn log_likelihood(state: &ModelState, stats: &SufficientStats) -> Result<f64> {
    log_likelihood_at(&state.theta, &state.lambda, stats)
}

/// Products of the current iterate that every gradient and coordinate
/// coefficient reads. Built once per Newton step.
#[derive(Debug, Clone)]
pub(crate) struct LocalTerms {
    /// `Λ⁻¹`
    pub w: Mat,
    /// `Λ⁻¹ Θᵀ S_xx`, p×q.
    pub wg: Mat,
    /// `S_xx Θ Λ⁻¹`, q×p (the transpose of `wg`).
    pub h: Mat,
    /// `Λ⁻¹ Θᵀ S_xx Θ Λ⁻¹`, p×p.
    pub a: Mat,
}

impl LocalTerms {
    pub fn new(state: &ModelState, stats: &SufficientStats) -> Self {
        let w = state.lambda_inv.clone();
        let wg = &w * state.theta.transpose() * &stats.s_xx;
        let h = wg.transpose();
        let mut a = &wg * &state.theta * &w;
        linalg::symmetrize(&mut a);
        Self { w, wg, h, a }
    }

    pub fn gradient(&self, stats: &SufficientStats) -> Gradient {
        let n = stats.n();
        let g_theta = -(&stats.s_xy + &self.h) * n;
        let mut g_lambda = (&self.w - &stats.s_yy + &self.a) * (0.5 * n);
        linalg::symmetrize(&mut g_lambda);
        Gradient { g_theta, g_lambda }
    }
}

pub fn gradient(state: &ModelState, stats: &SufficientStats) -> Result<Gradient> {
    check_shapes(&state.theta, &state.lambda, stats)?;
    linalg::cholesky(&state.lambda)?;
    Ok(LocalTerms::new(state, stats).gradient(stats))
}

/// Second-order Taylor model `g(Δ_Θ, Δ_Λ)` of the log-likelihood around the
/// current state. `delta_lambda` is symmetrized before use, so the value does
/// not depend on which triangle carries an asymmetric perturbation.
pub fn quadratic_model(
    state: &ModelState,
    stats: &SufficientStats,
    delta_theta: &Mat,
    delta_lambda: &Mat,
) -> Result<f64> {
    check_shapes(delta_theta, delta_lambda, stats)?;
    let base = log_likelihood(state, stats)?;
    let t = LocalTerms::new(state, stats);
    let n = stats.n();
    let mut d = delta_lambda.clone();
    linalg::symmetrize(&mut d);
    let e = delta_theta;
    let w = &t.w;

    let wd = w * &d;
    // first order
    let lin_lambda = 0.5 * n * (wd.trace() - stats.s_yy.dot(&d) + t.a.dot(&d));
    let lin_theta = -n * stats.s_xy.dot(e) - n * (&t.wg * e).trace();
    // second order
    let dd = -0.25 * n * (&wd * &wd).trace();
    let dad = -0.5 * n * (&wd * &t.a * &d).trace();
    let cross = n * (&wd * &t.wg * e).trace();
    let ee = -0.5 * n * (w * e.transpose() * &stats.s_xx * e).trace();
    Ok(base + lin_lambda + lin_theta + dd + dad + cross + ee)
}
