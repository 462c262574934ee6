//! EM fit of the MAP estimate.
//!
//! Outer loop: freeze the posterior inclusion probabilities (E-step) and turn
//! them into per-entry ℓ₁ weights. Inner loop (M-step): build a proximal
//! Newton direction by one coordinate sweep over the active sets, then take a
//! backtracking step that keeps `Λ` positive definite, bounded in spectral
//! norm, and satisfies an Armijo decrease on the M-step objective.

mod line_search;
mod newton;

use log::{debug, info};
use nalgebra::DMatrix;

pub use line_search::{line_search, LineSearchOutcome};
pub use newton::{lasso_step, soft_threshold, CoordCoeffs, LocalModel, NewtonDirection};

use crate::error::{GcrfError, Result};
use crate::likelihood::{self, Gradient};
use crate::linalg::Mat;
use crate::model::{initialize_state, Hyperparams, ModelState, SufficientStats};
use crate::penalty::{self, compute_inclusion_probs, InclusionProbs, SpikeSlab};

/// Backtracking constants.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub armijo_sigma: f64,
    pub backtrack_beta: f64,
    pub min_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { armijo_sigma: 1e-4, backtrack_beta: 0.5, min_step: 1e-10 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.armijo_sigma > 0.0 && self.armijo_sigma < 0.5) {
            return Err(GcrfError::InvalidArgument(format!(
                "armijo_sigma must lie in (0, 0.5), got {}",
                self.armijo_sigma
            )));
        }
        if !(self.backtrack_beta > 0.0 && self.backtrack_beta < 1.0) {
            return Err(GcrfError::InvalidArgument(format!(
                "backtrack_beta must lie in (0, 1), got {}",
                self.backtrack_beta
            )));
        }
        if !(self.min_step > 0.0 && self.min_step < 1.0) {
            return Err(GcrfError::InvalidArgument(format!(
                "min_step must lie in (0, 1), got {}",
                self.min_step
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// No step could be accepted before any progress was made.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    /// Negative log-posterior at the start and after every outer iteration.
    pub objective_per_outer_iter: Vec<f64>,
    /// Smallest and largest eigenvalue of Λ, aligned with the objectives.
    pub lambda_eigen_range: Vec<(f64, f64)>,
    /// `(|A_Θ|, |A_Λ|)` per inner iteration; `A_Λ` counts pairs `i ≤ j`.
    pub active_set_sizes: Vec<(usize, usize)>,
    pub step_sizes: Vec<f64>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub outer_iters_used: usize,
    pub inner_iters_used: usize,
    /// Coordinates skipped because their curvature was not positive.
    pub skipped_coordinates: usize,
    /// Θ entries that were active at some inner iteration of the last outer
    /// iteration.
    pub last_outer_active_theta: DMatrix<bool>,
}

/// Per-entry ℓ₁ weights of the M-step objective.
#[derive(Debug, Clone, PartialEq)]
pub struct MStepWeights {
    pub tau_theta: Mat,
    /// Zero on the diagonal.
    pub tau_lambda: Mat,
}

impl MStepWeights {
    pub fn penalty(&self, theta: &Mat, lambda: &Mat) -> f64 {
        let mut total = 0.0;
        for (t, v) in self.tau_theta.iter().zip(theta.iter()) {
            total += t * v.abs();
        }
        let p = lambda.nrows();
        for i in 0..p {
            for j in (i + 1)..p {
                total += self.tau_lambda[(i, j)] * lambda[(i, j)].abs();
            }
        }
        total
    }

    /// `Q(Φ) = −l(Φ) + Σ τ |Φ_ij|` up to a constant.
    pub fn objective(&self, theta: &Mat, lambda: &Mat, stats: &SufficientStats) -> Result<f64> {
        Ok(-likelihood::log_likelihood_at(theta, lambda, stats)? + self.penalty(theta, lambda))
    }
}

/// Entries eligible for update in one Newton step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActiveSets {
    /// Row-major `(i, j)` indices into Θ.
    pub theta: Vec<(usize, usize)>,
    /// Upper-triangle `(i, j)`, `i < j`, row-major. Diagonals are always
    /// active and not listed.
    pub lambda_offdiag: Vec<(usize, usize)>,
}

impl ActiveSets {
    pub fn lambda_len_with_diag(&self, p: usize) -> usize {
        self.lambda_offdiag.len() + p
    }
}

/// `L(Θ, Λ) = −l(Θ, Λ) + Σᵢ Pen_MSS(Θᵢ) + Σ_{i<j} Pen_SS(Λ_ij)`, constant dropped.
pub fn negative_log_posterior(state: &ModelState, stats: &SufficientStats, hp: &Hyperparams) -> Result<f64> {
    Ok(-likelihood::log_likelihood(state, stats)? + penalty::total_penalty(state, hp))
}

/// Posterior inclusion probabilities, frozen for the following M-step.
pub fn e_step(state: &ModelState, hp: &Hyperparams) -> InclusionProbs {
    compute_inclusion_probs(state, hp)
}

/// `τ = p/ν₁ + (1 − p)/ν₀` entrywise; the diagonal of Λ gets zero.
pub fn mstep_penalty_weights(probs: &InclusionProbs, hp: &Hyperparams) -> MStepWeights {
    let th = SpikeSlab::theta(hp);
    let la = SpikeSlab::lambda(hp);
    let tau_theta = probs.p_theta.map(|pr| th.weight(pr));
    let p = probs.p_lambda.nrows();
    let tau_lambda = Mat::from_fn(p, p, |i, j| if i == j { 0.0 } else { la.weight(probs.p_lambda[(i, j)]) });
    MStepWeights { tau_theta, tau_lambda }
}

/// Active sets from a gradient and penalty slopes.
///
/// Θ entry `(i, j)` is active when it is nonzero or `|∂l/∂Θ_ij|` exceeds its
/// weight. For the symmetric pair `(i, j)` of Λ the likelihood slope along
/// `eᵢeⱼᵀ + eⱼeᵢᵀ` is `2 (∇_Λ l)_ij`, which is what gets compared with the pair's
/// single penalty weight.
pub fn active_sets_from(state: &ModelState, grad: &Gradient, weights: &MStepWeights) -> ActiveSets {
    let (q, p) = state.theta.shape();
    let mut sets = ActiveSets::default();
    for i in 0..q {
        for j in 0..p {
            if state.theta[(i, j)] != 0.0 || grad.g_theta[(i, j)].abs() > weights.tau_theta[(i, j)] {
                sets.theta.push((i, j));
            }
        }
    }
    for i in 0..p {
        for j in (i + 1)..p {
            if state.lambda[(i, j)] != 0.0 || 2.0 * grad.g_lambda[(i, j)].abs() > weights.tau_lambda[(i, j)] {
                sets.lambda_offdiag.push((i, j));
            }
        }
    }
    sets
}

/// Active sets at `state` with penalty slopes evaluated at `state` itself.
pub fn active_sets(state: &ModelState, stats: &SufficientStats, hp: &Hyperparams) -> Result<ActiveSets> {
    let grad = likelihood::gradient(state, stats)?;
    let weights = mstep_penalty_weights(&compute_inclusion_probs(state, hp), hp);
    Ok(active_sets_from(state, &grad, &weights))
}

/// One cyclic sweep: Θ entries, then Λ off-diagonal pairs, then Λ diagonals.
/// Returns the number of skipped coordinates.
pub fn sweep(
    model: &LocalModel<'_>,
    sets: &ActiveSets,
    weights: &MStepWeights,
    dir: &mut NewtonDirection,
) -> usize {
    let mut skipped = 0;
    for &(i, j) in &sets.theta {
        if model.coord_update_theta(i, j, dir, weights.tau_theta[(i, j)]).is_none() {
            skipped += 1;
        }
    }
    for &(i, j) in &sets.lambda_offdiag {
        if model.coord_update_lambda_offdiag(i, j, dir, weights.tau_lambda[(i, j)]).is_none() {
            skipped += 1;
        }
    }
    for i in 0..dir.delta_lambda.nrows() {
        if model.coord_update_lambda_diag(i, dir).is_none() {
            skipped += 1;
        }
    }
    skipped
}

fn rel_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / (1.0 + new.abs())
}

fn eigen_range(lambda: &Mat) -> (f64, f64) {
    let ev = lambda.clone().symmetric_eigenvalues();
    (ev.min(), ev.max())
}

/// Output of [`fit`].
#[derive(Debug, Clone)]
pub struct Fit {
    pub state: ModelState,
    pub probs: InclusionProbs,
    pub trace: SolverTrace,
}

/// Runs the EM algorithm from `Θ = 0`, `Λ = I`.
pub fn fit(stats: &SufficientStats, hp: &Hyperparams, config: &SolverConfig) -> Result<Fit> {
    hp.validate()?;
    config.validate()?;
    let dims = stats.dims;
    let mut state = initialize_state(dims);
    let mut objective = negative_log_posterior(&state, stats, hp)?;
    let mut trace = SolverTrace {
        objective_per_outer_iter: vec![objective],
        lambda_eigen_range: vec![eigen_range(&state.lambda)],
        active_set_sizes: Vec::new(),
        step_sizes: Vec::new(),
        converged: false,
        stop_reason: StopReason::MaxIterations,
        outer_iters_used: 0,
        inner_iters_used: 0,
        skipped_coordinates: 0,
        last_outer_active_theta: DMatrix::from_element(dims.q, dims.p, false),
    };

    for outer in 0..hp.max_outer_iters {
        trace.outer_iters_used = outer + 1;
        let probs = e_step(&state, hp);
        let weights = mstep_penalty_weights(&probs, hp);
        let mut q_value = weights.objective(&state.theta, &state.lambda, stats)?;
        let mut accepted = 0usize;
        let mut stalled = false;
        trace.last_outer_active_theta.fill(false);

        for _ in 0..hp.max_inner_iters {
            trace.inner_iters_used += 1;
            let model = LocalModel::new(&state, stats);
            let grad = model.gradient();
            let sets = active_sets_from(&state, &grad, &weights);
            for &(i, j) in &sets.theta {
                trace.last_outer_active_theta[(i, j)] = true;
            }
            trace.active_set_sizes.push((sets.theta.len(), sets.lambda_len_with_diag(dims.p)));

            let mut dir = NewtonDirection::zeros(dims.q, dims.p);
            trace.skipped_coordinates += sweep(&model, &sets, &weights, &mut dir);
            debug_assert!(dir.cache_deviation(&state.lambda_inv) < 1e-8);
            if dir.is_zero() {
                break;
            }

            let outcome = line_search(&state, stats, hp, config, &dir, &grad, &weights, q_value)?;
            if outcome.alpha == 0.0 {
                stalled = true;
                break;
            }
            trace.step_sizes.push(outcome.alpha);
            accepted += 1;
            state = outcome.state;
            let converged = rel_change(q_value, outcome.objective) < hp.inner_tol;
            q_value = outcome.objective;
            if converged {
                break;
            }
        }

        let next_objective = negative_log_posterior(&state, stats, hp)?;
        trace.objective_per_outer_iter.push(next_objective);
        trace.lambda_eigen_range.push(eigen_range(&state.lambda));
        debug!("outer {outer}: L = {next_objective:.10e}, {accepted} accepted steps, stalled = {stalled}");
        if stalled && accepted == 0 && outer == 0 {
            trace.stop_reason = StopReason::Stalled;
            break;
        }
        if rel_change(objective, next_objective) < hp.outer_tol {
            trace.converged = true;
            trace.stop_reason = StopReason::Converged;
            objective = next_objective;
            break;
        }
        objective = next_objective;
    }
    info!(
        "fit finished: {:?} after {} outer / {} inner iterations, L = {objective:.6e}",
        trace.stop_reason, trace.outer_iters_used, trace.inner_iters_used
    );
    let probs = compute_inclusion_probs(&state, hp);
    Ok(Fit { state, probs, trace })
}

#[cfg(test)]
mod tests;
