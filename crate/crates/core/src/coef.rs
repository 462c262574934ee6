//! Regression coefficients `B` from a fitted model.
//!
//! Two routes: plug-in `B = −Λ⁻¹Θᵀ`, or ordinary least squares restricted to
//! the covariates whose Θ row is nonzero.

use log::debug;
use rayon::prelude::*;

use crate::error::{GcrfError, Result};
use crate::linalg::{self, Mat};
use crate::model::{ModelState, ProblemDims};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BMethod {
    PlugIn,
    MultiRegression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BEstimate {
    /// p×q.
    pub b: Mat,
    pub method: BMethod,
    /// Ascending covariate indices with a nonzero Θ row.
    pub selected_covariates: Vec<usize>,
}

/// Rows of `theta` with at least one nonzero entry (exact test).
pub fn selected_rows(theta: &Mat) -> Vec<usize> {
    (0..theta.nrows()).filter(|&i| theta.row(i).iter().any(|v| *v != 0.0)).collect()
}

/// `B = −Λ⁻¹Θᵀ` by Cholesky solve.
pub fn plug_in_b(state: &ModelState) -> Result<BEstimate> {
    let chol = linalg::cholesky(&state.lambda)?;
    // a zero column on the right-hand side solves to an exactly zero column
    let b = -chol.solve(&state.theta.transpose());
    let selected_covariates = selected_rows(&state.theta);
    Ok(BEstimate { b, method: BMethod::PlugIn, selected_covariates })
}

/// Per-response OLS on the selected covariates, solved by Householder QR.
pub fn multi_regression_b(x: &Mat, y: &Mat, selected: &[usize]) -> Result<BEstimate> {
    let (n, q) = x.shape();
    if y.nrows() != n {
        return Err(GcrfError::DimensionMismatch(format!("x has {n} rows but y has {}", y.nrows())));
    }
    if selected.is_empty() {
        return Err(GcrfError::InvalidArgument("no covariates selected".into()));
    }
    if let Some(&bad) = selected.iter().find(|&&i| i >= q) {
        return Err(GcrfError::InvalidArgument(format!("covariate index {bad} out of range 0..{q}")));
    }
    let k = selected.len();
    if n <= k {
        return Err(GcrfError::InvalidArgument(format!(
            "least squares needs more rows than covariates: n = {n}, selected = {k}"
        )));
    }
    let xs = x.select_columns(selected);
    let qr = xs.qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    let tol = rmax * (n.max(k) as f64) * f64::EPSILON;
    if r.diagonal().iter().any(|d| d.abs() <= tol) {
        return Err(GcrfError::Singular("selected covariates are collinear".into()));
    }
    let qt = qr.q().transpose();
    let p = y.ncols();
    let cols: Vec<Mat> = (0..p)
        .into_par_iter()
        .map(|j| {
            let rhs = &qt * y.column(j);
            let beta = r.solve_upper_triangular(&rhs).expect("nonsingular R checked above");
            Mat::from_column_slice(k, 1, beta.as_slice())
        })
        .collect();
    let mut b = Mat::zeros(p, q);
    for (j, beta) in cols.iter().enumerate() {
        for (slot, &i) in selected.iter().enumerate() {
            b[(j, i)] = beta[(slot, 0)];
        }
    }
    debug!("least squares B on {k} of {q} covariates");
    Ok(BEstimate { b, method: BMethod::MultiRegression, selected_covariates: selected.to_vec() })
}

pub const DEFAULT_P_THRESHOLD: usize = 100;

pub fn choose_b_method(dims: ProblemDims, p_threshold: usize) -> BMethod {
    if dims.p <= p_threshold {
        BMethod::PlugIn
    } else {
        BMethod::MultiRegression
    }
}

/// Dispatches on `method`. The regression route falls back to plug-in when
/// nothing is selected, since then `B = 0` either way.
pub fn estimate_b(state: &ModelState, x: &Mat, y: &Mat, method: BMethod) -> Result<BEstimate> {
    match method {
        BMethod::PlugIn => plug_in_b(state),
        BMethod::MultiRegression => {
            let sel = selected_rows(&state.theta);
            if sel.is_empty() {
                let mut est = plug_in_b(state)?;
                est.method = BMethod::MultiRegression;
                Ok(est)
            } else {
                multi_regression_b(x, y, &sel)
            }
        }
    }
}
