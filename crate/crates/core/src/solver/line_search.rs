//! Backtracking step selection for a Newton direction.

use crate::likelihood::Gradient;
use crate::linalg;
use crate::model::{Hyperparams, ModelState, SufficientStats};

use super::{MStepWeights, NewtonDirection, SolverConfig};

const POWER_ITERS: usize = 50;
const POWER_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    /// Accepted step, or 0 when no step passed before `min_step`.
    pub alpha: f64,
    /// The new state, or a copy of the old one on a stall.
    pub state: ModelState,
    /// M-step objective at `state`.
    pub objective: f64,
    /// Predicted change `⟨−∇l, Δ⟩ + h(Φ + Δ) − h(Φ)`.
    pub predicted_decrease: f64,
}

/// Tries `α = 1, β, β², …` and accepts the first step for which `Λ + αΔ_Λ`
/// is positive definite, `‖Λ + αΔ_Λ‖₂ ≤ R`, and
/// `Q(Φ + αΔ) ≤ Q(Φ) + σ α D`.
#[allow(clippy::too_many_arguments)]
pub fn line_search(
    state: &ModelState,
    stats: &SufficientStats,
    hp: &Hyperparams,
    config: &SolverConfig,
    dir: &NewtonDirection,
    grad: &Gradient,
    weights: &MStepWeights,
    current_objective: f64,
) -> crate::Result<LineSearchOutcome> {
    let full_theta = &state.theta + &dir.delta_theta;
    let full_lambda = &state.lambda + &dir.delta_lambda;
    let predicted_decrease = -grad.g_theta.dot(&dir.delta_theta) - grad.g_lambda.dot(&dir.delta_lambda)
        + weights.penalty(&full_theta, &full_lambda)
        - weights.penalty(&state.theta, &state.lambda);

    let mut alpha = 1.0;
    while alpha >= config.min_step {
        let lambda = &state.lambda + &dir.delta_lambda * alpha;
        if let Ok(chol) = linalg::cholesky(&lambda) {
            let within_bound = hp.spectral_bound_r.is_infinite()
                || linalg::spectral_norm_sym(&lambda, POWER_ITERS, POWER_TOL) <= hp.spectral_bound_r;
            if within_bound {
                let theta = &state.theta + &dir.delta_theta * alpha;
                let objective = weights.objective(&theta, &lambda, stats)?;
                if objective <= current_objective + config.armijo_sigma * alpha * predicted_decrease {
                    let lambda_inv = linalg::spd_inverse(&chol);
                    return Ok(LineSearchOutcome {
                        alpha,
                        state: ModelState { theta, lambda, lambda_inv },
                        objective,
                        predicted_decrease,
                    });
                }
            }
        }
        alpha *= config.backtrack_beta;
    }
    Ok(LineSearchOutcome {
        alpha: 0.0,
        state: state.clone(),
        objective: current_objective,
        predicted_decrease,
    })
}
