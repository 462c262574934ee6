//! Sparse Gaussian conditional random fields with spike-and-slab Lasso priors.
//!
//! The model treats responses `Y` (length `p`) and covariates `X` (length `q`)
//! through the conditional density
//! `p(Y | X) ∝ det(Λ)^{1/2} exp(-½ YᵀΛY - XᵀΘY)`, so that `Y | X ~ N(BX, Λ⁻¹)`
//! with `B = -Λ⁻¹Θᵀ`. A hierarchical spike-and-slab Lasso prior is placed on the
//! rows and entries of `Θ` and an element-wise one on the off-diagonals of `Λ`.
//! The MAP estimate is computed by an EM algorithm whose M-step is a
//! proximal-Newton coordinate descent over active sets.
//!
//! Module map:
//! - [`model`]: dimensions, sufficient statistics, solver state, hyperparameters
//! - [`likelihood`]: log-likelihood, gradient, second-order local model
//! - [`penalty`]: Laplace mixtures, penalties, their derivatives, inclusion probabilities
//! - [`solver`]: the EM / proximal-Newton fit
//! - [`coef`]: regression coefficient estimators
//! - [`metrics`]: support recovery and scoring
//! - [`simulate`]: synthetic data generators
//! - [`predict`]: prediction and cross-validation
//! - [`cli`]: the command-line front end

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod coef;
pub mod error;
pub mod likelihood;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod penalty;
pub mod predict;
pub mod simulate;
pub mod solver;

pub use error::{GcrfError, Result};
