//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{GcrfError, Result};

pub type Mat = DMatrix<f64>;
pub type Vec64 = DVector<f64>;

/// Replaces `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn max_asymmetry(m: &Mat) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn cholesky(m: &Mat) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(GcrfError::NotPositiveDefinite("non-finite entry".into()));
    }
    Cholesky::new(m.clone())
        .ok_or_else(|| GcrfError::NotPositiveDefinite(format!("{}x{} Cholesky failed", m.nrows(), m.ncols())))
}

/// `log det` of a positive definite matrix from its Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Inverse of a positive definite matrix, symmetrized.
pub fn spd_inverse(chol: &Cholesky<f64, Dyn>) -> Mat {
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    inv
}

/// Maximum absolute row sum.
pub fn inf_norm(m: &Mat) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Spectral norm of a symmetric matrix by power iteration.
///
/// Stops after `max_iter` iterations or once successive estimates differ by
/// less than `rel_tol` relative.
pub fn spectral_norm_sym(m: &Mat, max_iter: usize, rel_tol: f64) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    // deterministic start with no special alignment to coordinate axes
    let mut v = Vec64::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt() / n as f64);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let done = estimate > 0.0 && ((norm - estimate).abs() / norm) < rel_tol;
        estimate = norm;
        v = w / norm;
        if done {
            break;
        }
    }
    estimate
}

pub fn frobenius_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm()
}
