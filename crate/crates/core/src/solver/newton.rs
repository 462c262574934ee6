//! Coordinate descent on the second-order model of the M-step objective.
//!
//! Each coordinate subproblem has the form `min_u ½ a u² + b u + τ |c + u|`,
//! where `a` and `b` are the curvature and slope of `−g` along the coordinate
//! and `c` is the current value of the entry plus its accumulated increment.
//! The running products `Δ_Θ Λ⁻¹` and `Δ_Λ Λ⁻¹` are kept up to date row by row
//! so every coefficient costs `O(p + q)`.

use log::debug;

use crate::likelihood::{Gradient, LocalTerms};
use crate::linalg::Mat;
use crate::model::{ModelState, SufficientStats};

/// `S_κ(x) = sign(x) max(|x| − κ, 0)`
pub fn soft_threshold(x: f64, kappa: f64) -> f64 {
    if x > kappa {
        x - kappa
    } else if x < -kappa {
        x + kappa
    } else {
        0.0
    }
}

/// Minimizer `u` of `½ a u² + b u + τ |c + u|` for `a > 0`.
pub fn lasso_step(a: f64, b: f64, c: f64, tau: f64) -> f64 {
    -c + soft_threshold(c - b / a, tau / a)
}

/// Newton direction under construction with its cached right products.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonDirection {
    pub delta_theta: Mat,
    pub delta_lambda: Mat,
    /// `Δ_Θ Λ⁻¹`, q×p.
    pub theta_w: Mat,
    /// `Δ_Λ Λ⁻¹`, p×p.
    pub lambda_w: Mat,
}

impl NewtonDirection {
    pub fn zeros(q: usize, p: usize) -> Self {
        Self {
            delta_theta: Mat::zeros(q, p),
            delta_lambda: Mat::zeros(p, p),
            theta_w: Mat::zeros(q, p),
            lambda_w: Mat::zeros(p, p),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.delta_theta.iter().all(|v| *v == 0.0) && self.delta_lambda.iter().all(|v| *v == 0.0)
    }

    /// Largest relative deviation of the cached products from freshly
    /// computed ones.
    pub fn cache_deviation(&self, lambda_inv: &Mat) -> f64 {
        let rel = |cached: &Mat, fresh: Mat| {
            let scale = 1.0 + fresh.amax();
            (cached - fresh).amax() / scale
        };
        rel(&self.theta_w, &self.delta_theta * lambda_inv)
            .max(rel(&self.lambda_w, &self.delta_lambda * lambda_inv))
    }

    fn add_row(target: &mut Mat, row: usize, src: &Mat, src_row: usize, scale: f64) {
        for k in 0..target.ncols() {
            target[(row, k)] += scale * src[(src_row, k)];
        }
    }
}

/// Quadratic model of the log-likelihood around a fixed state, specialised
/// to single-coordinate moves.
#[derive(Debug, Clone)]
pub struct LocalModel<'a> {
    pub(crate) state: &'a ModelState,
    pub(crate) stats: &'a SufficientStats,
    pub(crate) terms: LocalTerms,
    n: f64,
}

/// Curvature, slope and offset of one coordinate subproblem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl<'a> LocalModel<'a> {
    pub fn new(state: &'a ModelState, stats: &'a SufficientStats) -> Self {
        Self { state, stats, terms: LocalTerms::new(state, stats), n: stats.n() }
    }

    pub fn gradient(&self) -> Gradient {
        self.terms.gradient(self.stats)
    }

    pub fn theta_coeffs(&self, i: usize, j: usize, dir: &NewtonDirection) -> CoordCoeffs {
        let t = &self.terms;
        let s_xx = &self.stats.s_xx;
        let (q, p) = self.state.theta.shape();
        let mut e_term = 0.0;
        for k in 0..q {
            e_term += dir.theta_w[(k, j)] * s_xx[(k, i)];
        }
        let mut d_term = 0.0;
        for l in 0..p {
            d_term += dir.lambda_w[(l, j)] * t.wg[(l, i)];
        }
        let a = self.n * t.w[(j, j)] * s_xx[(i, i)];
        let b = self.n * (self.stats.s_xy[(i, j)] + t.wg[(j, i)] + e_term - d_term);
        let c = self.state.theta[(i, j)] + dir.delta_theta[(i, j)];
        CoordCoeffs { a, b, c }
    }

    pub fn lambda_offdiag_coeffs(&self, i: usize, j: usize, dir: &NewtonDirection) -> CoordCoeffs {
        let t = &self.terms;
        let (w, a_m) = (&t.w, &t.a);
        let (q, p) = self.state.theta.shape();
        let mut x_ij = 0.0;
        let mut x_ji = 0.0;
        for k in 0..q {
            x_ij += dir.theta_w[(k, i)] * t.h[(k, j)];
            x_ji += dir.theta_w[(k, j)] * t.h[(k, i)];
        }
        let mut wdw_ij = 0.0;
        let mut wda_ij = 0.0;
        let mut wda_ji = 0.0;
        for l in 0..p {
            wdw_ij += dir.lambda_w[(l, i)] * w[(l, j)];
            wda_ij += dir.lambda_w[(l, i)] * a_m[(l, j)];
            wda_ji += dir.lambda_w[(l, j)] * a_m[(l, i)];
        }
        let a = self.n
            * (w[(i, j)] * w[(i, j)]
                + w[(i, i)] * w[(j, j)]
                + 2.0 * w[(i, j)] * a_m[(i, j)]
                + w[(i, i)] * a_m[(j, j)]
                + w[(j, j)] * a_m[(i, i)]);
        let b = -self.n
            * (w[(i, j)] - self.stats.s_yy[(i, j)] + a_m[(i, j)] + x_ij + x_ji - wdw_ij - wda_ij - wda_ji);
        let c = self.state.lambda[(i, j)] + dir.delta_lambda[(i, j)];
        CoordCoeffs { a, b, c }
    }

    pub fn lambda_diag_coeffs(&self, i: usize, dir: &NewtonDirection) -> CoordCoeffs {
        let t = &self.terms;
        let (w, a_m) = (&t.w, &t.a);
        let (q, p) = self.state.theta.shape();
        let mut x_ii = 0.0;
        for k in 0..q {
            x_ii += dir.theta_w[(k, i)] * t.h[(k, i)];
        }
        let mut wdw = 0.0;
        let mut wda = 0.0;
        for l in 0..p {
            wdw += dir.lambda_w[(l, i)] * w[(l, i)];
            wda += dir.lambda_w[(l, i)] * a_m[(l, i)];
        }
        let half_n = 0.5 * self.n;
        let a = half_n * (w[(i, i)] * w[(i, i)] + 2.0 * w[(i, i)] * a_m[(i, i)]);
        let b = -half_n * (w[(i, i)] - self.stats.s_yy[(i, i)] + a_m[(i, i)] + 2.0 * x_ii - wdw - 2.0 * wda);
        let c = self.state.lambda[(i, i)] + dir.delta_lambda[(i, i)];
        CoordCoeffs { a, b, c }
    }

    /// Lasso update of `Δ_Θ[i, j]`. Returns `None` (and leaves `dir` alone)
    /// when the curvature is not positive.
    pub fn coord_update_theta(&self, i: usize, j: usize, dir: &mut NewtonDirection, tau: f64) -> Option<f64> {
        let CoordCoeffs { a, b, c } = self.theta_coeffs(i, j, dir);
        if !(a > 0.0) {
            debug!("skipping theta[{i},{j}]: curvature {a}");
            return None;
        }
        let u = lasso_step(a, b, c, tau);
        if u != 0.0 {
            dir.delta_theta[(i, j)] += u;
            NewtonDirection::add_row(&mut dir.theta_w, i, &self.terms.w, j, u);
        }
        Some(u)
    }

    /// Lasso update of the symmetric pair `Δ_Λ[i, j] = Δ_Λ[j, i]`, `i ≠ j`.
    pub fn coord_update_lambda_offdiag(
        &self,
        i: usize,
        j: usize,
        dir: &mut NewtonDirection,
        tau: f64,
    ) -> Option<f64> {
        let CoordCoeffs { a, b, c } = self.lambda_offdiag_coeffs(i, j, dir);
        if !(a > 0.0) {
            debug!("skipping lambda[{i},{j}]: curvature {a}");
            return None;
        }
        let u = lasso_step(a, b, c, tau);
        if u != 0.0 {
            dir.delta_lambda[(i, j)] += u;
            dir.delta_lambda[(j, i)] += u;
            NewtonDirection::add_row(&mut dir.lambda_w, i, &self.terms.w, j, u);
            NewtonDirection::add_row(&mut dir.lambda_w, j, &self.terms.w, i, u);
        }
        Some(u)
    }

    /// Unpenalized Newton update of `Δ_Λ[i, i]`.
    pub fn coord_update_lambda_diag(&self, i: usize, dir: &mut NewtonDirection) -> Option<f64> {
        let CoordCoeffs { a, b, .. } = self.lambda_diag_coeffs(i, dir);
        if !(a > 0.0) {
            debug!("skipping lambda[{i},{i}]: curvature {a}");
            return None;
        }
        let u = -b / a;
        if u != 0.0 {
            dir.delta_lambda[(i, i)] += u;
            NewtonDirection::add_row(&mut dir.lambda_w, i, &self.terms.w, i, u);
        }
        Some(u)
    }
}
