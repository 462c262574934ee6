//! `gcrf-ssl` command-line front end.
//!
//! Exit codes: 0 converged, 1 input error, 2 numerical failure, 3 iteration
//! limit reached (outputs are still written).

pub mod config;
pub mod io;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::coef::{choose_b_method, estimate_b, selected_rows, BEstimate, BMethod};
use crate::error::{GcrfError, Result};
use crate::linalg::Mat;
use crate::metrics::{self, recover_support, ScoreReport, DEFAULT_THRESHOLD};
use crate::model::{center_columns, compute_sufficient_stats, ModelState};
use crate::penalty::InclusionProbs;
use crate::predict::{
    cross_validate, default_grid, predict_conditional, predict_unconditional, prediction_error, CvPlan,
    PredictionTask,
};
use crate::simulate::{
    self, benchmark_hyperparams, run_replications, ReplicationSettings, SimConfig, SpikeRule,
    DEFAULT_SPIKE_C, SETUP_NAMES,
};
use crate::solver::{fit, StopReason};

use config::{BChoice, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_MAX_ITER: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "gcrf-ssl",
    version,
    about = "Sparse Gaussian CRF estimation with spike-and-slab Lasso priors"
)]
struct Cli {
    /// Worker threads for replications and folds (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to X (n×q) and Y (n×p).
    Fit(FitArgs),
    /// Run simulation replications and score them against the truth.
    Simulate(SimulateArgs),
    /// Predict responses from a fitted model.
    Predict(PredictArgs),
    /// Choose hyperparameters by k-fold cross-validation.
    Cv(CvArgs),
    /// Score a fitted model against known true matrices.
    Score(ScoreArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Skip one header line in each input CSV.
    #[arg(long)]
    header: bool,
    /// Inclusion-probability threshold for the support files.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// One of setup1, setup2, setup3, s1, s2.
    setup_name: Option<String>,
    #[arg(long, conflicts_with = "setup_name")]
    setup: Option<String>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write every simulated dataset and its truth.
    #[arg(long)]
    export: bool,
    /// Share Θ⁰ and Λ⁰ across replications.
    #[arg(long)]
    fix_truth: bool,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    x: PathBuf,
    /// Observed responses; read only where the mask is 1.
    #[arg(long, requires = "mask")]
    y_known: Option<PathBuf>,
    /// 0/1 matrix, 1 marks a known response.
    #[arg(long, requires = "y_known")]
    mask: Option<PathBuf>,
    /// True responses, for an error report.
    #[arg(long)]
    y_true: Option<PathBuf>,
    #[arg(long)]
    header: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// `key = v1, v2, ...` per line; defaults to a ν₀ sweep.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    header: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Directory with theta0.csv, lambda0.csv and b0.csv.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Where to write score.txt (default: the model directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn run() -> i32 {
    init_logging();
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return EXIT_INPUT;
        }
        pool = pool.num_threads(j);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_INPUT;
        }
    };
    let result = pool.install(|| match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Cv(a) => cmd_cv(&a),
        Command::Score(a) => cmd_score(&a),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn init_logging() {
    let level = match std::env::var("GCRF_SSL_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("info") => log::LevelFilter::Info,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
}

pub fn exit_code_for(e: &GcrfError) -> i32 {
    match e {
        GcrfError::NotPositiveDefinite(_) | GcrfError::Singular(_) => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

fn exit_code_for_stop(r: StopReason) -> i32 {
    match r {
        StopReason::Converged => EXIT_OK,
        StopReason::MaxIterations => EXIT_MAX_ITER,
        StopReason::Stalled => EXIT_NUMERICAL,
    }
}

fn stop_name(r: StopReason) -> &'static str {
    match r {
        StopReason::Converged => "converged",
        StopReason::MaxIterations => "max_iterations",
        StopReason::Stalled => "stalled",
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| GcrfError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

fn bool_matrix(m: &nalgebra::DMatrix<bool>) -> Mat {
    m.map(|b| if b { 1.0 } else { 0.0 })
}

fn rows_to_bool(v: &[Vec<bool>]) -> nalgebra::DMatrix<bool> {
    let (r, c) = (v.len(), v.first().map_or(0, Vec::len));
    nalgebra::DMatrix::from_fn(r, c, |i, j| v[i][j])
}

fn read_xy(x: &Path, y: &Path, header: bool) -> Result<(Mat, Mat)> {
    let x = io::read_matrix(x, header)?;
    let y = io::read_matrix(y, header)?;
    if x.nrows() != y.nrows() {
        return Err(GcrfError::DimensionMismatch(format!(
            "x has {} rows but y has {} rows",
            x.nrows(),
            y.nrows()
        )));
    }
    Ok((x, y))
}

fn command_comment(lines: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in lines {
        let _ = writeln!(s, "# {k}: {v}");
    }
    s
}

fn cmd_fit(a: &FitArgs) -> Result<i32> {
    let mut cfg = RunConfig::default();
    cfg.apply_file(a.config.as_deref())?;
    if let Some(t) = a.threshold {
        cfg.hp.threshold_t = t;
    }
    let (mut x, mut y) = read_xy(&a.x, &a.y, a.header)?;
    let centers = if cfg.center { Some((center_columns(&mut x), center_columns(&mut y))) } else { None };
    let stats = compute_sufficient_stats(&x, &y)?;
    if let Some(c) = cfg.spike_c {
        cfg.hp = cfg.hp.clone().with_rate_scaled_spike(stats.dims, c);
    }
    let fitted = fit(&stats, &cfg.hp, &cfg.solver)?;
    let method = match cfg.b_method {
        BChoice::Auto => choose_b_method(stats.dims, cfg.p_threshold),
        BChoice::Fixed(m) => m,
    };
    let b = estimate_b(&fitted.state, &x, &y, method)?;
    let support = recover_support(&fitted.probs, cfg.hp.threshold_t);

    create_dir(&a.out)?;
    io::write_matrix(&a.out.join("theta.csv"), &fitted.state.theta)?;
    io::write_matrix(&a.out.join("lambda.csv"), &fitted.state.lambda)?;
    io::write_matrix(&a.out.join("b.csv"), &b.b)?;
    io::write_matrix(&a.out.join("inclusion_theta.csv"), &fitted.probs.p_theta)?;
    io::write_matrix(&a.out.join("inclusion_lambda.csv"), &fitted.probs.p_lambda)?;
    io::write_matrix(&a.out.join("support_theta.csv"), &bool_matrix(&rows_to_bool(&support.theta_support)))?;
    io::write_matrix(
        &a.out.join("support_lambda.csv"),
        &bool_matrix(&rows_to_bool(&support.lambda_support)),
    )?;
    if let Some((mx, my)) = &centers {
        io::write_matrix(&a.out.join("x_center.csv"), &Mat::from_row_slice(1, mx.len(), mx))?;
        io::write_matrix(&a.out.join("y_center.csv"), &Mat::from_row_slice(1, my.len(), my))?;
    }
    let mut trace = String::from("outer,objective\n");
    for (i, v) in fitted.trace.objective_per_outer_iter.iter().enumerate() {
        let _ = writeln!(trace, "{i},{v}");
    }
    io::write_text(&a.out.join("trace.csv"), &trace)?;

    // spike scales are already resolved for these data
    let mut resolved = cfg.clone();
    resolved.spike_c = None;
    resolved.b_method = BChoice::Fixed(method);
    let header = command_comment(&[
        ("command", "fit".into()),
        ("x", a.x.display().to_string()),
        ("y", a.y.display().to_string()),
        ("header", a.header.to_string()),
        ("dims", format!("n={} p={} q={}", stats.dims.n, stats.dims.p, stats.dims.q)),
        ("stop_reason", stop_name(fitted.trace.stop_reason).into()),
        ("outer_iters", fitted.trace.outer_iters_used.to_string()),
    ]);
    io::write_text(&a.out.join("resolved_config.txt"), &(header + &resolved.echo()))?;

    info!(
        "fit: {} after {} outer iterations, {} covariates selected",
        stop_name(fitted.trace.stop_reason),
        fitted.trace.outer_iters_used,
        b.selected_covariates.len()
    );
    println!(
        "stop_reason={} outer_iters={} selected_covariates={}",
        stop_name(fitted.trace.stop_reason),
        fitted.trace.outer_iters_used,
        b.selected_covariates.len()
    );
    Ok(exit_code_for_stop(fitted.trace.stop_reason))
}

fn simulate_run_config() -> RunConfig {
    RunConfig { hp: benchmark_hyperparams(), spike_c: Some(DEFAULT_SPIKE_C), ..RunConfig::default() }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let name = a
        .setup_name
        .as_deref()
        .or(a.setup.as_deref())
        .ok_or_else(|| GcrfError::InvalidArgument("a setup name is required".into()))?;
    if !SETUP_NAMES.contains(&name) {
        return Err(GcrfError::InvalidArgument(format!(
            "unknown setup '{name}', expected one of {}",
            SETUP_NAMES.join(", ")
        )));
    }
    if a.reps == 0 {
        return Err(GcrfError::InvalidArgument("--reps must be at least 1".into()));
    }
    let mut cfg = simulate_run_config();
    cfg.apply_file(a.config.as_deref())?;
    if let Some(t) = a.threshold {
        cfg.hp.threshold_t = t;
    }
    cfg.fix_truth |= a.fix_truth;
    let settings = ReplicationSettings {
        hp: cfg.hp.clone(),
        spike_rule: cfg.spike_c.map_or(SpikeRule::Fixed, SpikeRule::RateScaled),
        solver: cfg.solver.clone(),
        b_method: match cfg.b_method {
            BChoice::Auto => None,
            BChoice::Fixed(m) => Some(m),
        },
        fix_truth: cfg.fix_truth,
    };

    create_dir(&a.out)?;
    let mut scores = format!("n,rep,seed,{},stop_reason,outer_iters\n", ScoreReport::csv_header());
    let mut aggregate = format!("n,stat,{}\n", ScoreReport::csv_header());
    let mut sim_echo = String::new();
    // a stalled replication (2) outranks one that hit the iteration limit (3)
    let mut worst = EXIT_OK;
    for &n in &a.n {
        let mut sim = SimConfig::named(name, n, a.seed)?;
        cfg.apply_sim_overrides(&mut sim)?;
        if sim_echo.is_empty() {
            sim_echo = config::sim_lines(&sim);
        }
        let summary = run_replications(&sim, &settings, a.reps)?;
        for r in &summary.results {
            let _ = writeln!(
                scores,
                "{n},{},{},{},{},{}",
                r.rep,
                r.seed,
                r.report.to_csv_row(),
                stop_name(r.stop_reason),
                r.outer_iters
            );
            worst = match (worst, exit_code_for_stop(r.stop_reason)) {
                (EXIT_NUMERICAL, _) | (_, EXIT_NUMERICAL) => EXIT_NUMERICAL,
                (w, c) => w.max(c),
            };
        }
        let _ = writeln!(aggregate, "{n},mean,{}", summary.mean.to_csv_row());
        let _ = writeln!(aggregate, "{n},se,{}", summary.std_err.to_csv_row());
        println!("n={n} mean: {}", summary.mean.to_csv_row());
        if a.export {
            export_datasets(&a.out, &sim, cfg.fix_truth, a.reps)?;
        }
    }
    io::write_text(&a.out.join("scores.csv"), &scores)?;
    io::write_text(&a.out.join("aggregate.csv"), &aggregate)?;
    let n_list: Vec<String> = a.n.iter().map(usize::to_string).collect();
    let header = command_comment(&[
        ("command", "simulate".into()),
        ("setup", name.into()),
        ("n", n_list.join(",")),
        ("reps", a.reps.to_string()),
        ("seed", a.seed.to_string()),
    ]);
    io::write_text(&a.out.join("resolved_config.txt"), &(header + &cfg.echo() + &sim_echo))?;
    Ok(worst)
}

fn export_datasets(out: &Path, sim: &SimConfig, fix_truth: bool, reps: usize) -> Result<()> {
    let fixed = if fix_truth { Some(simulate::fixed_truth(sim)?) } else { None };
    for rep in 0..reps {
        let (_, data) = simulate::replication_dataset(sim, fixed.as_ref(), rep)?;
        let dir = out.join("data").join(format!("n{}", sim.n)).join(format!("rep{rep}"));
        create_dir(&dir)?;
        io::write_matrix(&dir.join("x.csv"), &data.x)?;
        io::write_matrix(&dir.join("y.csv"), &data.y)?;
        io::write_matrix(&dir.join("theta0.csv"), &data.truth.theta)?;
        io::write_matrix(&dir.join("lambda0.csv"), &data.truth.lambda)?;
        io::write_matrix(&dir.join("b0.csv"), &data.truth.b)?;
    }
    Ok(())
}

struct LoadedModel {
    state: ModelState,
    b: BEstimate,
    x_center: Option<Mat>,
    y_center: Option<Mat>,
}

fn load_model(dir: &Path) -> Result<LoadedModel> {
    let theta = io::read_matrix(&dir.join("theta.csv"), false)?;
    let lambda = io::read_matrix(&dir.join("lambda.csv"), false)?;
    let b = io::read_matrix(&dir.join("b.csv"), false)?;
    if b.shape() != (theta.ncols(), theta.nrows()) {
        return Err(GcrfError::DimensionMismatch(format!(
            "b.csv is {}×{} but theta.csv implies {}×{}",
            b.nrows(),
            b.ncols(),
            theta.ncols(),
            theta.nrows()
        )));
    }
    let selected = selected_rows(&theta);
    let state = ModelState::new(theta, lambda)?;
    let optional = |name: &str| -> Result<Option<Mat>> {
        let p = dir.join(name);
        if p.exists() {
            io::read_matrix(&p, false).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(LoadedModel {
        state,
        b: BEstimate { b, method: BMethod::PlugIn, selected_covariates: selected },
        x_center: optional("x_center.csv")?,
        y_center: optional("y_center.csv")?,
    })
}

fn shift_rows(m: &mut Mat, center: Option<&Mat>, sign: f64) -> Result<()> {
    if let Some(c) = center {
        if c.ncols() != m.ncols() {
            return Err(GcrfError::DimensionMismatch(format!(
                "centering vector has {} entries but the matrix has {} columns",
                c.ncols(),
                m.ncols()
            )));
        }
        for mut row in m.row_iter_mut() {
            row += c.row(0) * sign;
        }
    }
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<i32> {
    let model = load_model(&a.model)?;
    let mut x = io::read_matrix(&a.x, a.header)?;
    shift_rows(&mut x, model.x_center.as_ref(), -1.0)?;
    let (pred, mask) = match (&a.y_known, &a.mask) {
        (Some(yk), Some(mk)) => {
            let mut y_known = io::read_matrix(yk, a.header)?;
            let mask = io::read_mask(mk, a.header)?;
            if mask.shape() != y_known.shape() {
                return Err(GcrfError::DimensionMismatch(format!(
                    "mask is {}×{} but y_known is {}×{}",
                    mask.nrows(),
                    mask.ncols(),
                    y_known.nrows(),
                    y_known.ncols()
                )));
            }
            shift_rows(&mut y_known, model.y_center.as_ref(), -1.0)?;
            let task = PredictionTask { x_test: x, known_mask: mask.clone(), y_known };
            (predict_conditional(&model.state, &model.b, &task)?, Some(mask))
        }
        _ => (predict_unconditional(&model.b, &x)?, None),
    };
    let mut pred = pred;
    shift_rows(&mut pred, model.y_center.as_ref(), 1.0)?;
    create_dir(&a.out)?;
    io::write_matrix(&a.out.join("predictions.csv"), &pred)?;
    if let Some(yt) = &a.y_true {
        let y_true = io::read_matrix(yt, a.header)?;
        let unknown = mask.as_ref().map(|m| m.map(|known| !known));
        let err = prediction_error(&y_true, &pred, unknown.as_ref())?;
        let scored = if unknown.is_some() { "unknown" } else { "all" };
        let text = format!("error={}\nscored={scored}\nrows={}\n", metrics::sig6(err), pred.nrows());
        io::write_text(&a.out.join("error.txt"), &text)?;
        print!("{text}");
    }
    Ok(EXIT_OK)
}

fn cmd_cv(a: &CvArgs) -> Result<i32> {
    let mut cfg = RunConfig::default();
    cfg.apply_file(a.config.as_deref())?;
    let (x, y) = read_xy(&a.x, &a.y, a.header)?;
    let grid = match &a.grid {
        Some(p) => config::expand_grid(&cfg.hp, &config::read_pairs(p)?)?,
        None => default_grid(&cfg.hp),
    };
    let plan = CvPlan { k: cfg.cv_k, ..CvPlan::new(grid, a.seed) };
    let result = cross_validate(&x, &y, &plan, &cfg.solver)?;

    create_dir(&a.out)?;
    let mut table =
        String::from("index,nu0_theta,nu1_theta,nu0_lambda,nu1_lambda,eta_theta,eta_lambda,rho,mean_error\n");
    for (i, (hp, err)) in plan.grid.iter().zip(&result.mean_errors).enumerate() {
        let _ = writeln!(
            table,
            "{i},{},{},{},{},{},{},{},{err}",
            hp.nu0_theta, hp.nu1_theta, hp.nu0_lambda, hp.nu1_lambda, hp.eta_theta, hp.eta_lambda, hp.rho
        );
    }
    io::write_text(&a.out.join("cv_table.csv"), &table)?;
    let best = RunConfig { hp: result.best.clone(), spike_c: None, ..cfg };
    let header = command_comment(&[
        ("command", "cv".into()),
        ("seed", a.seed.to_string()),
        ("best_index", result.best_index.to_string()),
        ("best_error", result.mean_errors[result.best_index].to_string()),
    ]);
    io::write_text(&a.out.join("best_config.txt"), &(header + &best.echo()))?;
    println!(
        "best_index={} mean_error={}",
        result.best_index,
        metrics::sig6(result.mean_errors[result.best_index])
    );
    Ok(EXIT_OK)
}

fn cmd_score(a: &ScoreArgs) -> Result<i32> {
    let model = load_model(&a.model)?;
    let p_theta = io::read_matrix(&a.model.join("inclusion_theta.csv"), false)?;
    let p_lambda = io::read_matrix(&a.model.join("inclusion_lambda.csv"), false)?;
    let theta0 = io::read_matrix(&a.truth.join("theta0.csv"), false)?;
    let lambda0 = io::read_matrix(&a.truth.join("lambda0.csv"), false)?;
    let b0 = io::read_matrix(&a.truth.join("b0.csv"), false)?;
    let row_probs_theta = p_theta.row_iter().map(|r| r.max()).collect();
    let probs = InclusionProbs { p_theta, p_lambda, row_probs_theta };
    let est = metrics::Estimate {
        theta: &model.state.theta,
        lambda: &model.state.lambda,
        b: &model.b.b,
        probs: &probs,
    };
    let truth = metrics::Truth { theta: &theta0, lambda: &lambda0, b: &b0 };
    let report = metrics::score(est, truth, a.threshold)?;
    let text = report.to_key_value();
    let out = a.out.clone().unwrap_or_else(|| a.model.clone());
    create_dir(&out)?;
    io::write_text(&out.join("score.txt"), &text)?;
    print!("{text}");
    Ok(EXIT_OK)
}
