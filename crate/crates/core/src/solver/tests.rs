use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::likelihood::quadratic_model;
use crate::model::{compute_sufficient_stats, ProblemDims};

fn scalar_stats(xs: &[f64], ys: &[f64]) -> SufficientStats {
    let n = xs.len();
    compute_sufficient_stats(&Mat::from_column_slice(n, 1, xs), &Mat::from_column_slice(n, 1, ys)).unwrap()
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize, p: usize, q: usize) -> SufficientStats {
    let x = Mat::from_fn(n, q, |_, _| rng.random_range(-1.0..1.0));
    let y = Mat::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    compute_sufficient_stats(&x, &y).unwrap()
}

fn random_state(rng: &mut ChaCha8Rng, p: usize, q: usize) -> ModelState {
    let theta = Mat::from_fn(q, p, |_, _| rng.random_range(-0.5..0.5));
    let m = Mat::from_fn(p, p, |_, _| rng.random_range(-0.4..0.4));
    let lambda = &m * m.transpose() + Mat::identity(p, p);
    ModelState::new(theta, lambda).unwrap()
}

fn example_hp() -> Hyperparams {
    Hyperparams { nu0_theta: 0.1, nu1_theta: 1.0, nu0_lambda: 0.1, nu1_lambda: 1.0, ..Hyperparams::default() }
}

#[test]
fn negative_log_posterior_scalar_example() {
    let stats = scalar_stats(&[1.0], &[1.0]);
    let st = initialize_state(stats.dims);
    let v = negative_log_posterior(&st, &stats, &example_hp()).unwrap();
    assert!((v - (0.5 - 3.875f64.ln())).abs() < 1e-14);
    assert!((v + 0.8545).abs() < 1e-4);
}

#[test]
fn weights_endpoints_and_midpoint() {
    let hp = example_hp();
    let probs = InclusionProbs {
        p_theta: Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.5]),
        p_lambda: Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        row_probs_theta: vec![1.0],
    };
    let w = mstep_penalty_weights(&probs, &hp);
    assert!((w.tau_theta[(0, 0)] - 1.0).abs() < 1e-14);
    assert!((w.tau_theta[(0, 1)] - 10.0).abs() < 1e-14);
    assert!((w.tau_theta[(0, 2)] - 5.5).abs() < 1e-14);
    assert!((w.tau_lambda[(0, 1)] - 5.5).abs() < 1e-14);
    assert_eq!(w.tau_lambda[(0, 0)], 0.0);
    assert_eq!(w.tau_lambda[(1, 1)], 0.0);
}

fn weights_const(q: usize, p: usize, t: f64) -> MStepWeights {
    MStepWeights {
        tau_theta: Mat::from_element(q, p, t),
        tau_lambda: Mat::from_fn(p, p, |i, j| if i == j { 0.0 } else { t }),
    }
}

#[test]
fn nonzero_theta_always_active() {
    let mut st = initialize_state(ProblemDims::new(1, 2, 2).unwrap());
    st.theta[(1, 0)] = 1e-9;
    let grad = Gradient { g_theta: Mat::zeros(2, 2), g_lambda: Mat::zeros(2, 2) };
    let sets = active_sets_from(&st, &grad, &weights_const(2, 2, 5.5));
    assert_eq!(sets.theta, vec![(1, 0)]);
}

#[test]
fn gradient_threshold_decides_membership() {
    let st = initialize_state(ProblemDims::new(1, 2, 1).unwrap());
    let grad = Gradient { g_theta: Mat::from_row_slice(1, 2, &[10.0, 1.0]), g_lambda: Mat::zeros(2, 2) };
    let sets = active_sets_from(&st, &grad, &weights_const(1, 2, 5.5));
    assert_eq!(sets.theta, vec![(0, 0)]);
}

#[test]
fn excluded_entries_stay_zero_under_full_sweep() {
    // Θ = 0 everywhere; after an unrestricted sweep every entry whose
    // gradient is below its weight must receive a zero update.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let stats = random_instance(&mut rng, 30, 3, 4);
    let st = initialize_state(stats.dims);
    let model = LocalModel::new(&st, &stats);
    let grad = model.gradient();
    let tau = 0.5 * grad.g_theta.amax();
    let weights = weights_const(4, 3, tau);
    let sets = active_sets_from(&st, &grad, &weights);
    assert!(!sets.theta.is_empty() && sets.theta.len() < 12);
    let all = ActiveSets {
        theta: (0..4).flat_map(|i| (0..3).map(move |j| (i, j))).collect(),
        lambda_offdiag: vec![],
    };
    let mut dir = NewtonDirection::zeros(4, 3);
    // excluded entries visited first, before any active entry moves
    for &(i, j) in all.theta.iter().filter(|e| !sets.theta.contains(e)) {
        let u = model.coord_update_theta(i, j, &mut dir, tau).unwrap();
        assert_eq!(u, 0.0, "entry ({i},{j}) moved");
    }
}

/// `−g` along one coordinate, recovered exactly from three evaluations of the
/// full quadratic model.
fn restricted_neg_model(
    st: &ModelState,
    stats: &SufficientStats,
    dir: &NewtonDirection,
    bump: &dyn Fn(f64) -> (Mat, Mat),
) -> impl Fn(f64) -> f64 {
    let eval = |u: f64| {
        let (dt, dl) = bump(u);
        -quadratic_model(st, stats, &(&dir.delta_theta + dt), &(&dir.delta_lambda + dl)).unwrap()
    };
    let (fm, f0, fp) = (eval(-1.0), eval(0.0), eval(1.0));
    let curv = fp + fm - 2.0 * f0;
    let slope = 0.5 * (fp - fm);
    move |u: f64| f0 + slope * u + 0.5 * curv * u * u
}

fn grid_argmin(f: &dyn Fn(f64) -> f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=4000 {
        let u = -20.0 + k as f64 * 0.01;
        let v = f(u);
        if v < best.0 {
            best = (v, u);
        }
    }
    let centre = best.1;
    for k in 0..=4000 {
        let u = centre - 0.02 + k as f64 * 1e-5;
        let v = f(u);
        if v < best.0 {
            best = (v, u);
        }
    }
    best.1
}

fn random_direction(rng: &mut ChaCha8Rng, st: &ModelState) -> NewtonDirection {
    let (q, p) = st.theta.shape();
    let mut dir = NewtonDirection::zeros(q, p);
    dir.delta_theta = Mat::from_fn(q, p, |_, _| rng.random_range(-0.2..0.2));
    let m = Mat::from_fn(p, p, |_, _| rng.random_range(-0.1..0.1));
    dir.delta_lambda = &m + m.transpose();
    dir.theta_w = &dir.delta_theta * &st.lambda_inv;
    dir.lambda_w = &dir.delta_lambda * &st.lambda_inv;
    dir
}

#[test]
fn theta_update_matches_quadratic_model_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let stats = random_instance(&mut rng, 20, 3, 4);
        let st = random_state(&mut rng, 3, 4);
        let mut dir = random_direction(&mut rng, &st);
        let (i, j) = (rng.random_range(0..4), rng.random_range(0..3));
        let tau = rng.random_range(0.0..2.0);
        let model = LocalModel::new(&st, &stats);
        let c = st.theta[(i, j)] + dir.delta_theta[(i, j)];
        let f = restricted_neg_model(&st, &stats, &dir, &|u| {
            let mut e = Mat::zeros(4, 3);
            e[(i, j)] = u;
            (e, Mat::zeros(3, 3))
        });
        let oracle = grid_argmin(&|u| f(u) + tau * (c + u).abs());
        let u = model.coord_update_theta(i, j, &mut dir, tau).unwrap();
        assert!((u - oracle).abs() < 1e-3, "{u} vs {oracle}");
        assert!(dir.cache_deviation(&st.lambda_inv) < 1e-8);
    }
}

#[test]
fn lambda_offdiag_update_matches_quadratic_model_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let stats = random_instance(&mut rng, 20, 3, 4);
        let st = random_state(&mut rng, 3, 4);
        let mut dir = random_direction(&mut rng, &st);
        let (i, j) = (0, rng.random_range(1..3));
        let tau = 1.0;
        let model = LocalModel::new(&st, &stats);
        let c = st.lambda[(i, j)] + dir.delta_lambda[(i, j)];
        let f = restricted_neg_model(&st, &stats, &dir, &|u| {
            let mut d = Mat::zeros(3, 3);
            d[(i, j)] = u;
            d[(j, i)] = u;
            (Mat::zeros(4, 3), d)
        });
        let oracle = grid_argmin(&|u| f(u) + tau * (c + u).abs());
        let u = model.coord_update_lambda_offdiag(i, j, &mut dir, tau).unwrap();
        assert!((u - oracle).abs() < 1e-3, "{u} vs {oracle}");
        assert_eq!(dir.delta_lambda, dir.delta_lambda.transpose());
        assert!(dir.cache_deviation(&st.lambda_inv) < 1e-8);
    }
}

#[test]
fn lambda_diag_update_matches_quadratic_model_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let stats = random_instance(&mut rng, 20, 3, 4);
        let st = random_state(&mut rng, 3, 4);
        let mut dir = random_direction(&mut rng, &st);
        let i = rng.random_range(0..3);
        let model = LocalModel::new(&st, &stats);
        let f = restricted_neg_model(&st, &stats, &dir, &|u| {
            let mut d = Mat::zeros(3, 3);
            d[(i, i)] = u;
            (Mat::zeros(4, 3), d)
        });
        let oracle = grid_argmin(&f);
        let u = model.coord_update_lambda_diag(i, &mut dir).unwrap();
        assert!((u - oracle).abs() < 1e-3, "{u} vs {oracle}");
    }
}

#[test]
fn offdiag_update_at_identity_moments_is_zero() {
    // p = 2, Λ = I, S_yy = I, Θ = 0: identity is stationary
    let x = Mat::from_row_slice(2, 1, &[1.0, -1.0]);
    let y = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]);
    let stats = compute_sufficient_stats(&x, &y).unwrap();
    assert_eq!(stats.s_yy, Mat::identity(2, 2));
    let st = initialize_state(stats.dims);
    let model = LocalModel::new(&st, &stats);
    let mut dir = NewtonDirection::zeros(1, 2);
    let coeffs = model.lambda_offdiag_coeffs(0, 1, &dir);
    assert_eq!(coeffs.b, 0.0);
    assert_eq!(model.coord_update_lambda_offdiag(0, 1, &mut dir, 0.0), Some(0.0));
    assert_eq!(model.coord_update_lambda_diag(0, &mut dir), Some(0.0));
}

#[test]
fn offdiag_coefficients_without_theta() {
    // Θ = 0, Δ = 0: only the graphical terms remain
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let stats = random_instance(&mut rng, 10, 3, 2);
    let mut st = random_state(&mut rng, 3, 2);
    st.theta.fill(0.0);
    let model = LocalModel::new(&st, &stats);
    let dir = NewtonDirection::zeros(2, 3);
    let w = &st.lambda_inv;
    let n = 10.0;
    let c = model.lambda_offdiag_coeffs(0, 2, &dir);
    let a = n * (w[(0, 2)].powi(2) + w[(0, 0)] * w[(2, 2)]);
    let b = -n * (w[(0, 2)] - stats.s_yy[(0, 2)]);
    assert!((c.a - a).abs() < 1e-12 * a.abs());
    assert!((c.b - b).abs() < 1e-12 * (1.0 + b.abs()));
}

#[test]
fn diag_update_examples() {
    // Λ = I, Θ = 0, S_yy,00 = 2 → u = −1; S_yy,11 = 0.5 < 1 → u > 0
    let x = Mat::from_row_slice(2, 1, &[1.0, 1.0]);
    let y = Mat::from_row_slice(2, 2, &[1.0, 0.5, -1.0, -0.5]);
    let mut stats = compute_sufficient_stats(&x, &y).unwrap();
    stats.s_yy = Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
    let st = initialize_state(stats.dims);
    let model = LocalModel::new(&st, &stats);
    let mut dir = NewtonDirection::zeros(1, 2);
    let u = model.coord_update_lambda_diag(0, &mut dir).unwrap();
    assert!((u + 1.0).abs() < 1e-14);
    let f = restricted_neg_model(&st, &stats, &NewtonDirection::zeros(1, 2), &|u| {
        let mut d = Mat::zeros(2, 2);
        d[(0, 0)] = u;
        (Mat::zeros(1, 2), d)
    });
    assert!((grid_argmin(&f) + 1.0).abs() < 1e-4);

    let mut dir = NewtonDirection::zeros(1, 2);
    stats.s_yy[(1, 1)] = 3.0;
    let model = LocalModel::new(&st, &stats);
    assert!(model.coord_update_lambda_diag(1, &mut dir).unwrap() < 0.0);
}

#[test]
fn line_search_restores_positive_definiteness() {
    let x = Mat::from_row_slice(1, 1, &[0.0]);
    let y = Mat::from_row_slice(1, 2, &[0.0, 0.0]);
    let mut stats = compute_sufficient_stats(&x, &y).unwrap();
    stats.s_yy = Mat::identity(2, 2) * 4.0;
    let st = initialize_state(stats.dims);
    let mut dir = NewtonDirection::zeros(1, 2);
    dir.delta_lambda = Mat::identity(2, 2) * -2.0;
    let grad = LocalModel::new(&st, &stats).gradient();
    let weights = weights_const(1, 2, 0.0);
    let q0 = weights.objective(&st.theta, &st.lambda, &stats).unwrap();
    // Q = −½(log det Λ − 4 tr Λ) decreases towards 0.25 I, so the only
    // constraint that bites is positive definiteness
    let hp = example_hp();
    let out = line_search(&st, &stats, &hp, &SolverConfig::default(), &dir, &grad, &weights, q0).unwrap();
    assert_eq!(out.alpha, 0.25);
    assert!((out.state.lambda - Mat::identity(2, 2) * 0.5).amax() < 1e-15);
}

#[test]
fn line_search_stalls_uphill() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let stats = random_instance(&mut rng, 40, 2, 3);
    let st = initialize_state(stats.dims);
    let hp = example_hp();
    let weights = mstep_penalty_weights(&e_step(&st, &hp), &hp);
    let model = LocalModel::new(&st, &stats);
    let grad = model.gradient();
    let sets = ActiveSets {
        theta: (0..3).flat_map(|i| (0..2).map(move |j| (i, j))).collect(),
        lambda_offdiag: vec![(0, 1)],
    };
    let mut dir = NewtonDirection::zeros(3, 2);
    sweep(&model, &sets, &weights, &mut dir);
    assert!(!dir.is_zero());
    let q0 = weights.objective(&st.theta, &st.lambda, &stats).unwrap();
    let cfg = SolverConfig::default();

    let down = line_search(&st, &stats, &hp, &cfg, &dir, &grad, &weights, q0).unwrap();
    assert!(down.alpha > 0.0);
    assert!(down.objective < q0);

    let mut up = dir.clone();
    up.delta_theta *= -1.0;
    up.delta_lambda *= -1.0;
    let out = line_search(&st, &stats, &hp, &cfg, &up, &grad, &weights, q0).unwrap();
    assert_eq!(out.alpha, 0.0);
    assert_eq!(out.state, st);
}

#[test]
fn spectral_bound_limits_step() {
    let x = Mat::from_row_slice(1, 1, &[0.0]);
    let y = Mat::from_row_slice(1, 1, &[0.0]);
    let stats = compute_sufficient_stats(&x, &y).unwrap();
    let st = initialize_state(stats.dims);
    // with S_yy = 0 the objective −log det Λ keeps decreasing as Λ grows
    let mut dir = NewtonDirection::zeros(1, 1);
    dir.delta_lambda[(0, 0)] = 7.0;
    let grad = LocalModel::new(&st, &stats).gradient();
    let weights = weights_const(1, 1, 0.0);
    let q0 = weights.objective(&st.theta, &st.lambda, &stats).unwrap();
    let hp = Hyperparams { spectral_bound_r: 3.0, ..example_hp() };
    let out = line_search(&st, &stats, &hp, &SolverConfig::default(), &dir, &grad, &weights, q0).unwrap();
    assert!(out.state.lambda[(0, 0)] <= 3.0);
    assert_eq!(out.alpha, 0.25);
}

#[test]
fn fit_trace_is_monotone_and_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..5 {
        let stats = random_instance(&mut rng, 60, 3, 4);
        let fit = fit(&stats, &example_hp(), &SolverConfig::default()).unwrap();
        let obj = &fit.trace.objective_per_outer_iter;
        for w in obj.windows(2) {
            assert!(w[1] <= w[0] + 1e-8, "{obj:?}");
        }
        assert!(crate::linalg::cholesky(&fit.state.lambda).is_ok());
        assert_eq!(fit.trace.lambda_eigen_range.len(), obj.len());
        assert!(fit.trace.lambda_eigen_range.iter().all(|&(lo, _)| lo > 0.0));
        assert!(fit.state.inverse_residual() <= 1e-8);
        let sets_theta = &fit.trace.last_outer_active_theta;
        for i in 0..4 {
            for j in 0..3 {
                if !sets_theta[(i, j)] {
                    assert_eq!(fit.state.theta[(i, j)], 0.0);
                }
            }
        }
    }
}

#[test]
fn invalid_config_rejected() {
    let stats = scalar_stats(&[1.0], &[1.0]);
    let cfg = SolverConfig { armijo_sigma: 0.7, ..SolverConfig::default() };
    assert!(fit(&stats, &example_hp(), &cfg).is_err());
    let hp = Hyperparams { nu0_lambda: 5.0, ..example_hp() };
    assert!(fit(&stats, &hp, &SolverConfig::default()).is_err());
}
