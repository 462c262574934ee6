//! Response prediction and K-fold cross-validation.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coef::{choose_b_method, estimate_b, BEstimate, DEFAULT_P_THRESHOLD};
use crate::error::{GcrfError, Result};
use crate::linalg::{self, Mat};
use crate::model::{compute_sufficient_stats, Hyperparams, ModelState};
use crate::solver::{fit, SolverConfig};

pub type Mask = DMatrix<bool>;

/// Test covariates with a partially observed response matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTask {
    /// m×q.
    pub x_test: Mat,
    /// m×p, `true` where the response is observed.
    pub known_mask: Mask,
    /// m×p; read only where `known_mask` is true.
    pub y_known: Mat,
}

/// `Ŷ = X B̂ᵀ`.
pub fn predict_unconditional(b: &BEstimate, x_test: &Mat) -> Result<Mat> {
    if x_test.ncols() != b.b.ncols() {
        return Err(GcrfError::DimensionMismatch(format!(
            "x_test has {} columns but B has {} covariates",
            x_test.ncols(),
            b.b.ncols()
        )));
    }
    Ok(x_test * b.b.transpose())
}

/// Factorized blocks for one pattern of unknown responses.
struct Conditioner {
    unknown: Vec<usize>,
    known: Vec<usize>,
    /// `Λ_uu⁻¹ Λ_uk`, |u|×|k|.
    gain: Mat,
}

impl Conditioner {
    fn new(lambda: &Mat, pattern: &[bool]) -> Result<Self> {
        let unknown: Vec<usize> = (0..pattern.len()).filter(|&j| !pattern[j]).collect();
        let known: Vec<usize> = (0..pattern.len()).filter(|&j| pattern[j]).collect();
        let gain = if unknown.is_empty() || known.is_empty() {
            Mat::zeros(unknown.len(), known.len())
        } else {
            let l_uu = lambda.select_rows(&unknown).select_columns(&unknown);
            let l_uk = lambda.select_rows(&unknown).select_columns(&known);
            let chol = linalg::cholesky(&l_uu).map_err(|_| {
                GcrfError::Singular(format!("precision block of unknowns {unknown:?} is not PD"))
            })?;
            chol.solve(&l_uk)
        };
        Ok(Self { unknown, known, gain })
    }
}

/// Conditional mean of the unknown responses given the known ones:
/// `Ŷ_u = μ_u − Λ_uu⁻¹ Λ_uk (y_k − μ_k)` with `μ = B̂x`. Known entries are
/// copied from `y_known`.
pub fn predict_conditional(state: &ModelState, b: &BEstimate, task: &PredictionTask) -> Result<Mat> {
    let mu = predict_unconditional(b, &task.x_test)?;
    let (m, p) = mu.shape();
    if task.known_mask.shape() != (m, p) || task.y_known.shape() != (m, p) {
        return Err(GcrfError::DimensionMismatch(format!(
            "mask is {:?} and y_known is {:?}, expected ({m}, {p})",
            task.known_mask.shape(),
            task.y_known.shape()
        )));
    }
    if state.lambda.nrows() != p {
        return Err(GcrfError::DimensionMismatch(format!(
            "Λ is {}×{} but B has {p} responses",
            state.lambda.nrows(),
            state.lambda.ncols()
        )));
    }
    let mut cache: HashMap<Vec<bool>, Conditioner> = HashMap::new();
    let mut out = mu.clone();
    for d in 0..m {
        let pattern: Vec<bool> = (0..p).map(|j| task.known_mask[(d, j)]).collect();
        if !cache.contains_key(&pattern) {
            let cond = Conditioner::new(&state.lambda, &pattern)?;
            cache.insert(pattern.clone(), cond);
        }
        let cond = &cache[&pattern];
        for &j in &cond.known {
            out[(d, j)] = task.y_known[(d, j)];
        }
        for (a, &u) in cond.unknown.iter().enumerate() {
            let shift: f64 = cond
                .known
                .iter()
                .enumerate()
                .map(|(c, &k)| cond.gain[(a, c)] * (task.y_known[(d, k)] - mu[(d, k)]))
                .sum();
            out[(d, u)] = mu[(d, u)] - shift;
        }
    }
    Ok(out)
}

/// Mean over rows of the Euclidean norm of the residual. With `scored`, only
/// entries marked `true` enter each row's norm.
pub fn prediction_error(y_true: &Mat, y_pred: &Mat, scored: Option<&Mask>) -> Result<f64> {
    if y_true.shape() != y_pred.shape() {
        return Err(GcrfError::DimensionMismatch(format!(
            "y_true is {:?} but y_pred is {:?}",
            y_true.shape(),
            y_pred.shape()
        )));
    }
    if let Some(mask) = scored {
        if mask.shape() != y_true.shape() {
            return Err(GcrfError::DimensionMismatch(format!(
                "mask is {:?} but responses are {:?}",
                mask.shape(),
                y_true.shape()
            )));
        }
    }
    let (m, p) = y_true.shape();
    if m == 0 {
        return Err(GcrfError::InvalidArgument("no rows to score".into()));
    }
    let total: f64 = (0..m)
        .map(|d| {
            (0..p)
                .filter(|&j| scored.is_none_or(|s| s[(d, j)]))
                .map(|j| (y_true[(d, j)] - y_pred[(d, j)]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / m as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvScoring {
    PredictionError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    pub k: usize,
    pub grid: Vec<Hyperparams>,
    pub scoring: CvScoring,
    /// Seed of the row shuffle before fold assignment.
    pub seed: u64,
}

impl CvPlan {
    pub fn new(grid: Vec<Hyperparams>, seed: u64) -> Self {
        Self { k: 5, grid, scoring: CvScoring::PredictionError, seed }
    }
}

/// `ν₁ = 1`, `ν₀ ∈ {0.0005, 0.001, 0.005, 0.01, 0.05}`, `η = ρ = 0.5`, other
/// fields from `base`.
pub fn default_grid(base: &Hyperparams) -> Vec<Hyperparams> {
    [0.0005, 0.001, 0.005, 0.01, 0.05]
        .iter()
        .map(|&nu0| Hyperparams {
            nu0_theta: nu0,
            nu0_lambda: nu0,
            nu1_theta: 1.0,
            nu1_lambda: 1.0,
            eta_theta: 0.5,
            eta_lambda: 0.5,
            rho: 0.5,
            ..base.clone()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub best_index: usize,
    pub best: Hyperparams,
    /// Mean held-out error per grid entry.
    pub mean_errors: Vec<f64>,
}

/// Fold index of every row: a seeded shuffle cut into `k` contiguous blocks.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos * k / n;
    }
    fold
}

fn fit_and_score(
    x: &Mat,
    y: &Mat,
    train: &[usize],
    test: &[usize],
    hp: &Hyperparams,
    solver: &SolverConfig,
) -> Result<f64> {
    let (x_tr, y_tr) = (x.select_rows(train), y.select_rows(train));
    let stats = compute_sufficient_stats(&x_tr, &y_tr)?;
    let fitted = fit(&stats, hp, solver)?;
    let method = choose_b_method(stats.dims, DEFAULT_P_THRESHOLD);
    let b = estimate_b(&fitted.state, &x_tr, &y_tr, method)?;
    let pred = predict_unconditional(&b, &x.select_rows(test))?;
    prediction_error(&y.select_rows(test), &pred, None)
}

/// Picks the grid entry with the smallest mean held-out unconditional
/// prediction error; ties go to the earliest entry.
pub fn cross_validate(x: &Mat, y: &Mat, plan: &CvPlan, solver: &SolverConfig) -> Result<CvResult> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(GcrfError::DimensionMismatch(format!("x has {n} rows but y has {} rows", y.nrows())));
    }
    if plan.grid.is_empty() {
        return Err(GcrfError::InvalidArgument("empty hyperparameter grid".into()));
    }
    if plan.k < 2 || n < plan.k {
        return Err(GcrfError::InvalidArgument(format!("need 2 ≤ k ≤ n, got k = {} with n = {n}", plan.k)));
    }
    for hp in &plan.grid {
        hp.validate()?;
    }
    let fold = fold_assignment(n, plan.k, plan.seed);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..plan.k)
        .map(|f| ((0..n).filter(|&i| fold[i] != f).collect(), (0..n).filter(|&i| fold[i] == f).collect()))
        .collect();
    let mean_errors: Vec<f64> = plan
        .grid
        .par_iter()
        .map(|hp| {
            let errs: Vec<f64> = splits
                .iter()
                .map(|(train, test)| fit_and_score(x, y, train, test, hp, solver))
                .collect::<Result<_>>()?;
            Ok(errs.iter().sum::<f64>() / errs.len() as f64)
        })
        .collect::<Result<_>>()?;
    let mut best_index = 0;
    for (i, e) in mean_errors.iter().enumerate() {
        if *e < mean_errors[best_index] {
            best_index = i;
        }
    }
    Ok(CvResult { best_index, best: plan.grid[best_index].clone(), mean_errors })
}
