//! Problem dimensions, sufficient statistics, solver state and hyperparameters.

use crate::error::{GcrfError, Result};
use crate::linalg::{self, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemDims {
    /// Sample count.
    pub n: usize,
    /// Response dimension.
    pub p: usize,
    /// Covariate dimension.
    pub q: usize,
}

impl ProblemDims {
    pub fn new(n: usize, p: usize, q: usize) -> Result<Self> {
        if n == 0 || p == 0 || q == 0 {
            return Err(GcrfError::InvalidArgument(format!(
                "dimensions must be positive (n={n}, p={p}, q={q})"
            )));
        }
        Ok(Self { n, p, q })
    }
}

/// Second-moment matrices of the data. Nothing downstream of ingestion looks
/// at raw observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// `(1/n) Σ Yᵢ Yᵢᵀ`, p×p.
    pub s_yy: Mat,
    /// `(1/n) Σ Xᵢ Yᵢᵀ`, q×p.
    pub s_xy: Mat,
    /// `(1/n) Σ Xᵢ Xᵢᵀ`, q×q.
    pub s_xx: Mat,
    pub dims: ProblemDims,
}

impl SufficientStats {
    pub fn n(&self) -> f64 {
        self.dims.n as f64
    }
}

/// Computes the moment matrices from an n×q covariate matrix and an n×p
/// response matrix. `s_yy` and `s_xx` are symmetrized explicitly.
pub fn compute_sufficient_stats(x: &Mat, y: &Mat) -> Result<SufficientStats> {
    if x.nrows() != y.nrows() {
        return Err(GcrfError::DimensionMismatch(format!(
            "x has {} rows but y has {} rows",
            x.nrows(),
            y.nrows()
        )));
    }
    let dims = ProblemDims::new(x.nrows(), y.ncols(), x.ncols())?;
    let inv_n = 1.0 / dims.n as f64;
    let mut s_yy = y.transpose() * y * inv_n;
    let s_xy = x.transpose() * y * inv_n;
    let mut s_xx = x.transpose() * x * inv_n;
    linalg::symmetrize(&mut s_yy);
    linalg::symmetrize(&mut s_xx);
    Ok(SufficientStats { s_yy, s_xy, s_xx, dims })
}

/// Subtracts the column means in place and returns them.
pub fn center_columns(m: &mut Mat) -> Vec<f64> {
    let n = m.nrows() as f64;
    let mut means = Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        means.push(mean);
    }
    means
}

/// Current iterate `(Θ, Λ)` with a cached `Λ⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// q×p cross precision.
    pub theta: Mat,
    /// p×p response precision.
    pub lambda: Mat,
    /// Cached inverse of `lambda`.
    pub lambda_inv: Mat,
}

impl ModelState {
    /// Builds a state, checking shapes and positive definiteness of `lambda`.
    pub fn new(theta: Mat, mut lambda: Mat) -> Result<Self> {
        if lambda.nrows() != lambda.ncols() || theta.ncols() != lambda.nrows() {
            return Err(GcrfError::DimensionMismatch(format!(
                "theta is {}x{}, lambda is {}x{}",
                theta.nrows(),
                theta.ncols(),
                lambda.nrows(),
                lambda.ncols()
            )));
        }
        linalg::symmetrize(&mut lambda);
        let chol = linalg::cholesky(&lambda)?;
        let lambda_inv = linalg::spd_inverse(&chol);
        Ok(Self { theta, lambda, lambda_inv })
    }

    pub fn p(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn q(&self) -> usize {
        self.theta.nrows()
    }

    /// `‖Λ Λ⁻¹ − I‖_∞` for the cached inverse.
    pub fn inverse_residual(&self) -> f64 {
        let p = self.p();
        linalg::inf_norm(&(&self.lambda * &self.lambda_inv - Mat::identity(p, p)))
    }
}

/// `Θ ← 0`, `Λ ← I`.
pub fn initialize_state(dims: ProblemDims) -> ModelState {
    ModelState {
        theta: Mat::zeros(dims.q, dims.p),
        lambda: Mat::identity(dims.p, dims.p),
        lambda_inv: Mat::identity(dims.p, dims.p),
    }
}

/// Prior scales, mixture weights and solver tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub nu0_theta: f64,
    pub nu1_theta: f64,
    pub nu0_lambda: f64,
    pub nu1_lambda: f64,
    pub eta_theta: f64,
    pub eta_lambda: f64,
    /// Prior probability that a row of Θ comes from the slab.
    pub rho: f64,
    /// Upper bound on `‖Λ‖₂`.
    pub spectral_bound_r: f64,
    /// Threshold on inclusion probabilities used for structure recovery.
    pub threshold_t: f64,
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            nu0_theta: 0.01,
            nu1_theta: 1.0,
            nu0_lambda: 0.01,
            nu1_lambda: 1.0,
            eta_theta: 0.5,
            eta_lambda: 0.5,
            rho: 0.5,
            spectral_bound_r: 1e6,
            threshold_t: 0.5,
            outer_tol: 1e-5,
            inner_tol: 1e-6,
            max_outer_iters: 100,
            max_inner_iters: 50,
        }
    }
}

impl Hyperparams {
    /// Sets both spike scales to `1 / (c · sqrt(n · ln(p + q)))`.
    ///
    /// This keeps the effective per-sample Lasso weight `1/(n ν₀)` at the
    /// `sqrt(log(p+q)/n)` rate.
    pub fn with_rate_scaled_spike(mut self, dims: ProblemDims, c: f64) -> Self {
        let nu0 = spike_scale_for(dims, c);
        self.nu0_theta = nu0.min(0.5 * self.nu1_theta);
        self.nu0_lambda = nu0.min(0.5 * self.nu1_lambda);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GcrfError::InvalidHyperparams(msg));
        for (name, v) in [
            ("nu0_theta", self.nu0_theta),
            ("nu1_theta", self.nu1_theta),
            ("nu0_lambda", self.nu0_lambda),
            ("nu1_lambda", self.nu1_lambda),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.nu0_theta >= self.nu1_theta {
            return bad(format!(
                "nu0_theta ({}) must be below nu1_theta ({})",
                self.nu0_theta, self.nu1_theta
            ));
        }
        if self.nu0_lambda >= self.nu1_lambda {
            return bad(format!(
                "nu0_lambda ({}) must be below nu1_lambda ({})",
                self.nu0_lambda, self.nu1_lambda
            ));
        }
        for (name, v) in [("eta_theta", self.eta_theta), ("eta_lambda", self.eta_lambda), ("rho", self.rho)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(self.spectral_bound_r > 0.0) {
            return bad(format!("spectral_bound_r must be positive, got {}", self.spectral_bound_r));
        }
        if !(0.0..=1.0).contains(&self.threshold_t) {
            return bad(format!("threshold_t must lie in [0, 1], got {}", self.threshold_t));
        }
        if !(self.outer_tol > 0.0 && self.inner_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return bad("iteration limits must be positive".into());
        }
        Ok(())
    }
}

pub fn spike_scale_for(dims: ProblemDims, c: f64) -> f64 {
    let log_dim = ((dims.p + dims.q) as f64).ln().max(1.0);
    1.0 / (c * (dims.n as f64 * log_dim).sqrt())
}
