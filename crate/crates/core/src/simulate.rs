//! Synthetic instances with known `(Θ⁰, Λ⁰, B⁰)` and the replication harness.
//!
//! Covariates are drawn from `N(0, Ω⁻¹)` with a tridiagonal Toeplitz
//! precision `Ω`; responses from `N(B⁰x, (Λ⁰)⁻¹)` with `B⁰ = −(Λ⁰)⁻¹(Θ⁰)ᵀ`.

use log::info;
use nalgebra::Cholesky;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::coef::{choose_b_method, estimate_b, BMethod, DEFAULT_P_THRESHOLD};
use crate::error::{GcrfError, Result};
use crate::linalg::{self, Mat};
use crate::metrics::{self, ScoreReport};
use crate::model::{compute_sufficient_stats, Hyperparams, ProblemDims};
use crate::solver::{fit, SolverConfig, StopReason};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaMethod {
    /// `s_theta` entries per nonzero row, magnitudes uniform on `signal_range`.
    IndependentUniform,
    /// A random number of entries per nonzero row, drawn uniformly on the
    /// sphere of radius `row_norm`.
    SphereRows,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    /// Nonzero upper-triangular entries of Λ⁰.
    pub s_lambda: usize,
    pub theta_method: ThetaMethod,
    pub s_theta: usize,
    pub row_norm: f64,
    pub zero_row_fraction: f64,
    /// Magnitude range for Λ⁰ off-diagonals, and Θ⁰ entries under
    /// `IndependentUniform`. Signs are ± with equal probability.
    pub signal_range: (f64, f64),
    pub toeplitz_offdiag: f64,
    pub seed: u64,
}

pub const SETUP_NAMES: [&str; 5] = ["setup1", "setup2", "setup3", "s1", "s2"];

impl SimConfig {
    /// One of the named benchmark configurations.
    pub fn named(name: &str, n: usize, seed: u64) -> Result<Self> {
        let base = Self {
            n,
            p: 10,
            q: 50,
            s_lambda: 5,
            theta_method: ThetaMethod::IndependentUniform,
            s_theta: 10,
            row_norm: 0.5,
            zero_row_fraction: 0.7,
            signal_range: (0.1, 0.2),
            toeplitz_offdiag: 0.3,
            seed,
        };
        let cfg = match name {
            "setup1" => base,
            "setup2" => Self { theta_method: ThetaMethod::SphereRows, ..base },
            "setup3" => Self { p: 50, q: 100, s_lambda: 100, theta_method: ThetaMethod::SphereRows, ..base },
            "s1" => Self { signal_range: (4.0, 6.0), ..base },
            "s2" => Self {
                theta_method: ThetaMethod::SphereRows,
                row_norm: 4.0,
                signal_range: (4.0, 6.0),
                ..base
            },
            other => {
                return Err(GcrfError::InvalidArgument(format!(
                    "unknown setup '{other}', expected one of {}",
                    SETUP_NAMES.join(", ")
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dims(&self) -> Result<ProblemDims> {
        ProblemDims::new(self.n, self.p, self.q)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GcrfError::InvalidArgument(m));
        self.dims()?;
        if self.s_lambda > self.p * (self.p - 1) / 2 {
            return bad(format!("s_lambda = {} exceeds p(p-1)/2", self.s_lambda));
        }
        if self.s_theta > self.p {
            return bad(format!("s_theta = {} exceeds p = {}", self.s_theta, self.p));
        }
        let (lo, hi) = self.signal_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return bad(format!("signal range ({lo}, {hi}) must satisfy 0 < lo < hi"));
        }
        if !(self.row_norm > 0.0 && self.row_norm.is_finite()) {
            return bad(format!("row_norm must be positive, got {}", self.row_norm));
        }
        if !(0.0..=1.0).contains(&self.zero_row_fraction) {
            return bad(format!("zero_row_fraction must lie in [0, 1], got {}", self.zero_row_fraction));
        }
        if self.toeplitz_offdiag.abs() >= 0.5 {
            return bad(format!("toeplitz_offdiag must satisfy |v| < 0.5, got {}", self.toeplitz_offdiag));
        }
        Ok(())
    }

    pub fn zero_row_count(&self) -> usize {
        ((self.zero_row_fraction * self.q as f64).ceil() as usize).min(self.q)
    }
}

/// Tridiagonal Toeplitz matrix with unit diagonal.
pub fn gen_omega_xx(q: usize, offdiag: f64) -> Result<Mat> {
    if offdiag.abs() >= 0.5 {
        return Err(GcrfError::NotPositiveDefinite(format!(
            "Toeplitz off-diagonal {offdiag} is not below 0.5 in magnitude"
        )));
    }
    Ok(Mat::from_fn(q, q, |i, j| {
        if i == j {
            1.0
        } else if i.abs_diff(j) == 1 {
            offdiag
        } else {
            0.0
        }
    }))
}

fn signed_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    let magnitude = rng.random_range(lo..=hi);
    if rng.random_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

/// Sparse symmetric Λ⁰ made strictly diagonally dominant with margin 0.2.
pub fn gen_lambda0(p: usize, s_lambda: usize, signal_range: (f64, f64), rng: &mut ChaCha8Rng) -> Result<Mat> {
    let slots = p * p.saturating_sub(1) / 2;
    if s_lambda > slots {
        return Err(GcrfError::InvalidArgument(format!(
            "s_lambda = {s_lambda} exceeds the {slots} upper-triangular slots"
        )));
    }
    let upper: Vec<(usize, usize)> = (0..p).flat_map(|i| ((i + 1)..p).map(move |j| (i, j))).collect();
    let mut lambda = Mat::zeros(p, p);
    for k in sample(rng, slots, s_lambda).into_vec() {
        let (i, j) = upper[k];
        let v = signed_uniform(rng, signal_range);
        lambda[(i, j)] = v;
        lambda[(j, i)] = v;
    }
    for i in 0..p {
        let off: f64 = (0..p).filter(|&j| j != i).map(|j| lambda[(i, j)].abs()).sum();
        lambda[(i, i)] = off + 0.2;
    }
    Ok(lambda)
}

/// Row-sparse Θ⁰ with exactly `⌈zero_row_fraction · q⌉` zero rows.
pub fn gen_theta0(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Mat {
    let (p, q) = (cfg.p, cfg.q);
    let mut theta = Mat::zeros(q, p);
    let mut is_zero = vec![false; q];
    for i in sample(rng, q, cfg.zero_row_count()).into_vec() {
        is_zero[i] = true;
    }
    for i in (0..q).filter(|&i| !is_zero[i]) {
        match cfg.theta_method {
            ThetaMethod::IndependentUniform => {
                for j in sample(rng, p, cfg.s_theta).into_vec() {
                    theta[(i, j)] = signed_uniform(rng, cfg.signal_range);
                }
            }
            ThetaMethod::SphereRows => {
                let lo = ((0.1 * p as f64).ceil() as usize).max(1);
                let hi = ((0.5 * p as f64).floor() as usize).max(lo);
                let k = rng.random_range(lo..=hi);
                let cols = sample(rng, p, k).into_vec();
                let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
                let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                for (&j, v) in cols.iter().zip(&z) {
                    theta[(i, j)] = v * cfg.row_norm / norm;
                }
            }
        }
    }
    theta
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub theta: Mat,
    pub lambda: Mat,
    /// `−(Λ⁰)⁻¹(Θ⁰)ᵀ`, p×q.
    pub b: Mat,
}

impl GroundTruth {
    pub fn from_parts(theta: Mat, lambda: Mat) -> Result<Self> {
        let chol = linalg::cholesky(&lambda)?;
        let b = -chol.solve(&theta.transpose());
        Ok(Self { theta, lambda, b })
    }

    pub fn as_truth(&self) -> metrics::Truth<'_> {
        metrics::Truth { theta: &self.theta, lambda: &self.lambda, b: &self.b }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// n×q.
    pub x: Mat,
    /// n×p.
    pub y: Mat,
    pub truth: GroundTruth,
}

pub fn gen_truth(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<GroundTruth> {
    cfg.validate()?;
    let lambda = gen_lambda0(cfg.p, cfg.s_lambda, cfg.signal_range, rng)?;
    let theta = gen_theta0(cfg, rng);
    GroundTruth::from_parts(theta, lambda)
}

/// `n` rows drawn from `N(0, M⁻¹)`, where `chol` factors `M`.
fn draw_with_precision(chol: &Cholesky<f64, nalgebra::Dyn>, n: usize, rng: &mut ChaCha8Rng) -> Mat {
    let d = chol.l_dirty().nrows();
    let z_t = Mat::from_fn(d, n, |_, _| StandardNormal.sample(rng));
    // M = L Lᵀ, so Lᵀ⁻¹ z has covariance (L Lᵀ)⁻¹
    let l_t = chol.l().transpose();
    l_t.solve_upper_triangular(&z_t).expect("Cholesky factor has a positive diagonal").transpose()
}

/// Draws `n` observations around a given truth.
pub fn gen_observations(cfg: &SimConfig, truth: &GroundTruth, rng: &mut ChaCha8Rng) -> Result<(Mat, Mat)> {
    let omega = gen_omega_xx(cfg.q, cfg.toeplitz_offdiag)?;
    let x = draw_with_precision(&linalg::cholesky(&omega)?, cfg.n, rng);
    let noise = draw_with_precision(&linalg::cholesky(&truth.lambda)?, cfg.n, rng);
    let y = &x * truth.b.transpose() + noise;
    Ok((x, y))
}

/// Full instance from `cfg.seed`.
pub fn gen_dataset(cfg: &SimConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    gen_dataset_with(cfg, &mut rng)
}

pub fn gen_dataset_with(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let truth = gen_truth(cfg, rng)?;
    let (x, y) = gen_observations(cfg, &truth, rng)?;
    Ok(Dataset { x, y, truth })
}

/// One splitmix64 step: advances `state` and returns the mixed output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `r`: the master seed for `r = 0`, otherwise the
/// `r`-th splitmix64 output started from the master seed.
pub fn replication_seed(master: u64, r: usize) -> u64 {
    let mut state = master;
    let mut out = master;
    for _ in 0..r {
        out = splitmix64(&mut state);
    }
    out
}

/// How the spike scales are set for each simulated dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpikeRule {
    /// Use the hyperparameters as given.
    Fixed,
    /// `ν₀ = 1/(c·sqrt(n·ln(p+q)))` for both matrices.
    RateScaled(f64),
}

/// Default constant for [`SpikeRule::RateScaled`].
pub const DEFAULT_SPIKE_C: f64 = 4.0;

/// Hyperparameters used for benchmark replications: a near-flat element prior
/// on Θ, so that entries which escape the spike are left almost unshrunk.
pub fn benchmark_hyperparams() -> Hyperparams {
    Hyperparams { eta_theta: 0.999, ..Hyperparams::default() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationSettings {
    pub hp: Hyperparams,
    pub spike_rule: SpikeRule,
    pub solver: SolverConfig,
    /// `None` picks by dimension.
    pub b_method: Option<BMethod>,
    /// Draw Θ⁰ and Λ⁰ once from the master seed and resample only the data.
    pub fix_truth: bool,
}

impl Default for ReplicationSettings {
    fn default() -> Self {
        Self {
            hp: benchmark_hyperparams(),
            spike_rule: SpikeRule::RateScaled(DEFAULT_SPIKE_C),
            solver: SolverConfig::default(),
            b_method: None,
            fix_truth: false,
        }
    }
}

impl ReplicationSettings {
    pub fn hyperparams_for(&self, dims: ProblemDims) -> Hyperparams {
        match self.spike_rule {
            SpikeRule::Fixed => self.hp.clone(),
            SpikeRule::RateScaled(c) => self.hp.clone().with_rate_scaled_spike(dims, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub rep: usize,
    pub seed: u64,
    pub report: ScoreReport,
    pub stop_reason: StopReason,
    pub outer_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationSummary {
    pub results: Vec<ReplicationResult>,
    pub mean: ScoreReport,
    /// Sample standard deviation over `sqrt(reps)`; zero for one replication.
    pub std_err: ScoreReport,
}

/// Simulate, fit, estimate B and score one dataset.
pub fn score_dataset(
    data: &Dataset,
    settings: &ReplicationSettings,
) -> Result<(ScoreReport, StopReason, usize)> {
    let stats = compute_sufficient_stats(&data.x, &data.y)?;
    let hp = settings.hyperparams_for(stats.dims);
    let fitted = fit(&stats, &hp, &settings.solver)?;
    let method = settings.b_method.unwrap_or_else(|| choose_b_method(stats.dims, DEFAULT_P_THRESHOLD));
    let b = estimate_b(&fitted.state, &data.x, &data.y, method)?;
    let est = metrics::Estimate {
        theta: &fitted.state.theta,
        lambda: &fitted.state.lambda,
        b: &b.b,
        probs: &fitted.probs,
    };
    let report = metrics::score(est, data.truth.as_truth(), hp.threshold_t)?;
    Ok((report, fitted.trace.stop_reason, fitted.trace.outer_iters_used))
}

/// Truth drawn once from the master seed, for replications that share it.
pub fn fixed_truth(cfg: &SimConfig) -> Result<GroundTruth> {
    gen_truth(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// Dataset of replication `rep` and the seed it was drawn from. With `fixed`,
/// only the observations are new.
pub fn replication_dataset(
    cfg: &SimConfig,
    fixed: Option<&GroundTruth>,
    rep: usize,
) -> Result<(u64, Dataset)> {
    let seed = replication_seed(cfg.seed, rep);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = match fixed {
        Some(truth) => {
            let (x, y) = gen_observations(cfg, truth, &mut rng)?;
            Dataset { x, y, truth: truth.clone() }
        }
        None => gen_dataset_with(cfg, &mut rng)?,
    };
    Ok((seed, data))
}

/// Runs `reps` independent replications in parallel; results come back in
/// replication order regardless of scheduling.
pub fn run_replications(
    cfg: &SimConfig,
    settings: &ReplicationSettings,
    reps: usize,
) -> Result<ReplicationSummary> {
    if reps == 0 {
        return Err(GcrfError::InvalidArgument("reps must be at least 1".into()));
    }
    cfg.validate()?;
    let fixed = if settings.fix_truth { Some(fixed_truth(cfg)?) } else { None };
    let results: Vec<ReplicationResult> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let (seed, data) = replication_dataset(cfg, fixed.as_ref(), rep)?;
            let (report, stop_reason, outer_iters) = score_dataset(&data, settings)?;
            info!("rep {rep} (seed {seed}): frob_theta = {:.4}", report.frob_theta);
            Ok(ReplicationResult { rep, seed, report, stop_reason, outer_iters })
        })
        .collect::<Result<_>>()?;
    let (mean, std_err) = summarize(&results.iter().map(|r| r.report).collect::<Vec<_>>());
    Ok(ReplicationSummary { results, mean, std_err })
}

/// Per-metric mean and standard error.
pub fn summarize(reports: &[ScoreReport]) -> (ScoreReport, ScoreReport) {
    let k = reports.len() as f64;
    let mut mean = [0.0; 7];
    for r in reports {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v / k;
        }
    }
    let mut se = [0.0; 7];
    if reports.len() > 1 {
        for r in reports {
            for ((s, v), m) in se.iter_mut().zip(r.values()).zip(mean) {
                *s += (v - m).powi(2);
            }
        }
        for s in &mut se {
            *s = (*s / (k - 1.0)).sqrt() / k.sqrt();
        }
    }
    (ScoreReport::from_values(mean), ScoreReport::from_values(se))
}
