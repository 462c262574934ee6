//! Spike-and-slab Lasso penalties and posterior inclusion probabilities.
//!
//! Everything is evaluated in log space. The row-level quantities are products
//! of `p` mixture densities and underflow in linear space long before `p`
//! reaches a few hundred.

use crate::error::{GcrfError, Result};
use crate::linalg::Mat;
use crate::model::{Hyperparams, ModelState};

/// Element-level spike-and-slab parameters for one matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeSlab {
    pub nu0: f64,
    pub nu1: f64,
    pub eta: f64,
}

impl SpikeSlab {
    pub fn theta(hp: &Hyperparams) -> Self {
        Self { nu0: hp.nu0_theta, nu1: hp.nu1_theta, eta: hp.eta_theta }
    }

    pub fn lambda(hp: &Hyperparams) -> Self {
        Self { nu0: hp.nu0_lambda, nu1: hp.nu1_lambda, eta: hp.eta_lambda }
    }

    /// `log(η LP(x, ν₁) + (1 − η) LP(x, ν₀))`
    pub fn log_mixture(&self, x: f64) -> f64 {
        log_add_exp(self.eta.ln() + ln_laplace(x, self.nu1), (1.0 - self.eta).ln() + ln_laplace(x, self.nu0))
    }

    /// Posterior probability that `x` was drawn from the slab.
    pub fn slab_prob(&self, x: f64) -> f64 {
        let z = ((1.0 - self.eta) / self.eta).ln() + ln_laplace(x, self.nu0) - ln_laplace(x, self.nu1);
        logistic_neg(z)
    }

    /// Penalty slope on `|x|` for an element whose slab probability is `w`.
    pub fn weight(&self, w: f64) -> f64 {
        w / self.nu1 + (1.0 - w) / self.nu0
    }
}

#[inline]
fn ln_laplace(x: f64, nu: f64) -> f64 {
    -(2.0 * nu).ln() - x.abs() / nu
}

#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `1 / (1 + exp(z))` without overflow.
#[inline]
fn logistic_neg(z: f64) -> f64 {
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// `log(1/(2ν)) − |x|/ν`, the log density of a Laplace variable with scale ν.
pub fn laplace_log_density(x: f64, nu: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(GcrfError::InvalidArgument(format!("Laplace scale must be positive, got {nu}")));
    }
    Ok(ln_laplace(x, nu))
}

/// Element-level slab probability `η₁(x)`.
pub fn eta1(x: f64, nu1: f64, nu0: f64, eta: f64) -> f64 {
    SpikeSlab { nu0, nu1, eta }.slab_prob(x)
}

/// `(log S₁, log S₂)` for a row: `S₁ = Π (η LP(·,ν₁) + (1−η) LP(·,ν₀))`,
/// `S₂ = Π LP(·,ν₀)`.
fn row_log_masses(row: &[f64], ss: &SpikeSlab) -> (f64, f64) {
    row.iter().fold((0.0, 0.0), |(s1, s2), &x| (s1 + ss.log_mixture(x), s2 + ln_laplace(x, ss.nu0)))
}

/// Row-level slab probability `η₂` of a row of Θ.
pub fn eta2(theta_row: &[f64], hp: &Hyperparams) -> f64 {
    let (ls1, ls2) = row_log_masses(theta_row, &SpikeSlab::theta(hp));
    let z = ((1.0 - hp.rho) / hp.rho).ln() + ls2 - ls1;
    logistic_neg(z)
}

/// Mixed spike-and-slab penalty of a row of Θ, `−log(ρ S₁ + (1−ρ) S₂)`.
pub fn pen_mss(theta_row: &[f64], hp: &Hyperparams) -> f64 {
    let (ls1, ls2) = row_log_masses(theta_row, &SpikeSlab::theta(hp));
    -log_add_exp(hp.rho.ln() + ls1, (1.0 - hp.rho).ln() + ls2)
}

/// Spike-and-slab penalty of one off-diagonal entry of Λ.
pub fn pen_ss(x: f64, hp: &Hyperparams) -> f64 {
    -SpikeSlab::lambda(hp).log_mixture(x)
}

/// `∂ Pen_MSS / ∂|θ_j|`, always within `[1/ν₁, 1/ν₀]`.
pub fn pen_mss_derivative(theta_row: &[f64], j: usize, hp: &Hyperparams) -> f64 {
    let ss = SpikeSlab::theta(hp);
    ss.weight(ss.slab_prob(theta_row[j]) * eta2(theta_row, hp))
}

/// `∂ Pen_SS / ∂|x|`, always within `[1/ν₁, 1/ν₀]`.
pub fn pen_ss_derivative(x: f64, hp: &Hyperparams) -> f64 {
    let ss = SpikeSlab::lambda(hp);
    ss.weight(ss.slab_prob(x))
}

/// Sum of the Θ row penalties and the strict-upper-triangle Λ penalties.
pub fn total_penalty(state: &ModelState, hp: &Hyperparams) -> f64 {
    let mut total: f64 = rows(&state.theta).iter().map(|r| pen_mss(r, hp)).sum();
    let p = state.lambda.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            total += pen_ss(state.lambda[(i, j)], hp);
        }
    }
    total
}

pub(crate) fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Posterior inclusion probabilities at a given state.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionProbs {
    /// `η₁(Θ_ij) η₂(Θ_i)`, q×p.
    pub p_theta: Mat,
    /// `η₁(Λ_ij)` off the diagonal, 1 on it.
    pub p_lambda: Mat,
    /// `η₂(Θ_i)`, length q.
    pub row_probs_theta: Vec<f64>,
}

pub fn compute_inclusion_probs(state: &ModelState, hp: &Hyperparams) -> InclusionProbs {
    let th = SpikeSlab::theta(hp);
    let la = SpikeSlab::lambda(hp);
    let (q, p) = state.theta.shape();
    let row_probs_theta: Vec<f64> = rows(&state.theta).iter().map(|r| eta2(r, hp)).collect();
    let p_theta = Mat::from_fn(q, p, |i, j| th.slab_prob(state.theta[(i, j)]) * row_probs_theta[i]);
    let mut p_lambda = Mat::identity(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            let pr = la.slab_prob(state.lambda[(i, j)]);
            p_lambda[(i, j)] = pr;
            p_lambda[(j, i)] = pr;
        }
    }
    InclusionProbs { p_theta, p_lambda, row_probs_theta }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{initialize_state, ProblemDims};
    use proptest::prelude::*;

    fn hp_example() -> Hyperparams {
        Hyperparams {
            nu0_theta: 0.1,
            nu1_theta: 1.0,
            nu0_lambda: 0.1,
            nu1_lambda: 1.0,
            eta_theta: 0.5,
            eta_lambda: 0.5,
            rho: 0.5,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn laplace_log_density_values() {
        assert_eq!(laplace_log_density(0.0, 0.5).unwrap(), 0.0);
        let v = laplace_log_density(1.0, 1.0).unwrap();
        assert!((v - (0.5f64.ln() - 1.0)).abs() < 1e-15);
        assert!((v + 1.6931).abs() < 1e-4);
        assert!(laplace_log_density(1.0, 0.0).is_err());
        assert!(laplace_log_density(1.0, -1.0).is_err());
    }

    #[test]
    fn eta1_values() {
        // equal scales: posterior equals prior weight
        for x in [-3.0, 0.0, 0.2, 7.0] {
            assert!((eta1(x, 0.3, 0.3, 0.37) - 0.37).abs() < 1e-14);
        }
        assert!((eta1(0.0, 1.0, 0.1, 0.5) - 1.0 / 11.0).abs() < 1e-14);
        assert!((eta1(50.0, 1.0, 0.1, 0.5) - 1.0).abs() < 1e-10);
        assert!((eta1(-50.0, 1.0, 0.1, 0.5) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn eta2_single_zero_entry() {
        // S1 = 0.5*0.5 + 0.5*5 = 2.75, S2 = 5
        let v = eta2(&[0.0], &hp_example());
        assert!((v - 2.75 / 7.75).abs() < 1e-14);
        assert!((v - 0.354839).abs() < 1e-6);
    }

    #[test]
    fn eta2_rho_near_one() {
        let hp = Hyperparams { rho: 1.0 - 1e-15, ..hp_example() };
        for row in [vec![0.0; 5], vec![0.3, -2.0, 0.0]] {
            assert!((eta2(&row, &hp) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eta2_long_zero_row_does_not_underflow() {
        let hp = Hyperparams { nu0_theta: 0.01, ..hp_example() };
        // exact value at p = 20: mixture mass 101/4 against spike mass 50 per
        // element, so eta2 = 1 / (1 + (200/101)^20)
        let exact = 1.0 / (1.0 + (200.0f64 / 101.0).powi(20));
        let v20 = eta2(&[0.0; 20], &hp);
        assert!((v20 - exact).abs() / exact < 1e-12, "{v20} vs {exact}");
        let v200 = eta2(&[0.0; 200], &hp);
        assert!(v200.is_finite() && v200 > 0.0 && v200 < 1.0, "{v200}");
    }

    #[test]
    fn penalty_values() {
        let hp = hp_example();
        assert!((pen_ss(0.0, &hp) + 2.75f64.ln()).abs() < 1e-14);
        assert!((pen_ss(0.0, &hp) + 1.0116).abs() < 1e-4);
        assert!((pen_mss(&[0.0], &hp) + 3.875f64.ln()).abs() < 1e-14);
        assert!((pen_mss(&[0.0], &hp) + 1.3545).abs() < 1e-4);
    }

    #[test]
    fn slab_regime_derivative() {
        let hp = hp_example();
        assert!((pen_ss_derivative(60.0, &hp) - 1.0).abs() < 1e-12);
        assert!(pen_ss_derivative(0.0, &hp) > pen_ss_derivative(1.0, &hp));
    }

    #[test]
    fn inclusion_probs_single_entry() {
        let st = initialize_state(ProblemDims::new(1, 1, 1).unwrap());
        let probs = compute_inclusion_probs(&st, &hp_example());
        let expected = (1.0 / 11.0) * (2.75 / 7.75);
        assert!((probs.p_theta[(0, 0)] - expected).abs() < 1e-14);
        assert!((probs.p_theta[(0, 0)] - 0.032258).abs() < 1e-6);
        assert_eq!(probs.p_lambda[(0, 0)], 1.0);
    }

    #[test]
    fn inclusion_probs_zero_theta_constant() {
        let mut st = initialize_state(ProblemDims::new(1, 3, 4).unwrap());
        st.lambda[(0, 1)] = 0.2;
        st.lambda[(1, 0)] = 0.2;
        let probs = compute_inclusion_probs(&st, &hp_example());
        let c = probs.p_theta[(0, 0)];
        assert!(probs.p_theta.iter().all(|v| *v == c));
        assert_eq!(probs.p_lambda, probs.p_lambda.transpose());
    }

    #[test]
    fn rho_one_degenerates_to_elementwise() {
        let hp = Hyperparams { rho: 1.0 - 1e-16, ..hp_example() };
        let row = [0.3, -0.05, 0.0, 1.2];
        let hp_lambda = Hyperparams {
            nu0_lambda: hp.nu0_theta,
            nu1_lambda: hp.nu1_theta,
            eta_lambda: hp.eta_theta,
            ..hp.clone()
        };
        let elementwise: f64 = row.iter().map(|&x| pen_ss(x, &hp_lambda)).sum();
        assert!((pen_mss(&row, &hp) - elementwise).abs() < 1e-10);
    }

    #[test]
    fn extreme_inputs_stay_finite() {
        let hp = Hyperparams { nu0_theta: 1e-3, nu0_lambda: 1e-3, ..hp_example() };
        let big = vec![1e6; 500];
        let mixed: Vec<f64> = (0..500).map(|i| if i % 2 == 0 { 0.0 } else { -1e6 }).collect();
        for row in [&big, &mixed, &vec![0.0; 500]] {
            let e2 = eta2(row, &hp);
            assert!(e2.is_finite() && (0.0..=1.0).contains(&e2));
            assert!(pen_mss(row, &hp).is_finite());
            assert!(pen_mss_derivative(row, 1, &hp).is_finite());
        }
        for x in [0.0, 1e6, -1e6] {
            let e = eta1(x, 1.0, 1e-3, 0.5);
            assert!(e.is_finite() && (0.0..=1.0).contains(&e));
            assert!(pen_ss(x, &hp).is_finite());
        }
    }

    proptest! {
        #[test]
        fn laplace_is_even(x in -100.0f64..100.0, nu in 0.01f64..10.0) {
            prop_assert_eq!(laplace_log_density(x, nu).unwrap(), laplace_log_density(-x, nu).unwrap());
        }

        #[test]
        fn penalties_are_even(x in -5.0f64..5.0, k in 0usize..3) {
            let hp = hp_example();
            prop_assert_eq!(pen_ss(x, &hp), pen_ss(-x, &hp));
            let mut row = vec![0.1, -0.4, 2.0];
            let a = pen_mss(&row, &hp);
            row[k] = -row[k];
            prop_assert!((pen_mss(&row, &hp) - a).abs() < 1e-14);
        }

        #[test]
        fn derivatives_bounded(x in -10.0f64..10.0, y in -10.0f64..10.0) {
            let hp = hp_example();
            let d = pen_ss_derivative(x, &hp);
            prop_assert!((1.0 - 1e-12..=10.0 + 1e-12).contains(&d));
            let d = pen_mss_derivative(&[x, y], 0, &hp);
            prop_assert!((1.0 - 1e-12..=10.0 + 1e-12).contains(&d));
        }

        #[test]
        fn pen_ss_concave_in_magnitude(a in 0.0f64..3.0, b in 0.0f64..3.0, c in 0.0f64..3.0) {
            let mut v = [a, b, c];
            v.sort_by(|x, y| x.partial_cmp(y).unwrap());
            prop_assume!(v[1] - v[0] > 1e-3 && v[2] - v[1] > 1e-3);
            let hp = hp_example();
            let s1 = (pen_ss(v[1], &hp) - pen_ss(v[0], &hp)) / (v[1] - v[0]);
            let s2 = (pen_ss(v[2], &hp) - pen_ss(v[1], &hp)) / (v[2] - v[1]);
            prop_assert!(s2 <= s1 + 1e-9);
        }

        #[test]
        fn pen_mss_concave_in_each_magnitude(
            a in 0.0f64..3.0, b in 0.0f64..3.0, c in 0.0f64..3.0, other in -1.0f64..1.0
        ) {
            let mut v = [a, b, c];
            v.sort_by(|x, y| x.partial_cmp(y).unwrap());
            prop_assume!(v[1] - v[0] > 1e-3 && v[2] - v[1] > 1e-3);
            let hp = hp_example();
            let f = |x: f64| pen_mss(&[x, other], &hp);
            let s1 = (f(v[1]) - f(v[0])) / (v[1] - v[0]);
            let s2 = (f(v[2]) - f(v[1])) / (v[2] - v[1]);
            prop_assert!(s2 <= s1 + 1e-9);
        }

        #[test]
        fn element_prob_below_row_prob(row in proptest::collection::vec(-2.0f64..2.0, 1..6)) {
            let hp = hp_example();
            let p = row.len();
            let theta = Mat::from_row_slice(1, p, &row);
            let st = ModelState::new(theta, Mat::identity(p, p)).unwrap();
            let probs = compute_inclusion_probs(&st, &hp);
            for j in 0..p {
                let v = probs.p_theta[(0, j)];
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!(v <= probs.row_probs_theta[0] + 1e-12);
            }
        }
    }
}
