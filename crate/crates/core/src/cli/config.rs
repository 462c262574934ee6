//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment. Every run writes the fully
//! resolved settings back out in the same format, so a run can be repeated
//! from its output directory alone.

use std::fmt::Write as _;
use std::path::Path;

use crate::coef::{BMethod, DEFAULT_P_THRESHOLD};
use crate::error::{GcrfError, Result};
use crate::model::Hyperparams;
use crate::simulate::{SimConfig, ThetaMethod};
use crate::solver::SolverConfig;

/// `(key, value)` pairs in file order.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            GcrfError::Parse(format!("{origin}:{}: expected key = value, got '{line}'", i + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(GcrfError::Parse(format!("{origin}:{}: empty key or value", i + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GcrfError::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_pairs(&text, &path.display().to_string())
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| GcrfError::Parse(format!("{key}: cannot parse '{v}'")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(GcrfError::Parse(format!("{key}: expected true or false, got '{v}'"))),
    }
}

/// Sets one hyperparameter by name. `nu0`, `nu1` and `eta` set both
/// matrices. Returns `false` for an unknown key.
pub fn set_hyperparam(hp: &mut Hyperparams, key: &str, v: &str) -> Result<bool> {
    match key {
        "nu0" => {
            let x = num(key, v)?;
            hp.nu0_theta = x;
            hp.nu0_lambda = x;
        }
        "nu1" => {
            let x = num(key, v)?;
            hp.nu1_theta = x;
            hp.nu1_lambda = x;
        }
        "eta" => {
            let x = num(key, v)?;
            hp.eta_theta = x;
            hp.eta_lambda = x;
        }
        "nu0_theta" => hp.nu0_theta = num(key, v)?,
        "nu1_theta" => hp.nu1_theta = num(key, v)?,
        "nu0_lambda" => hp.nu0_lambda = num(key, v)?,
        "nu1_lambda" => hp.nu1_lambda = num(key, v)?,
        "eta_theta" => hp.eta_theta = num(key, v)?,
        "eta_lambda" => hp.eta_lambda = num(key, v)?,
        "rho" => hp.rho = num(key, v)?,
        "spectral_bound_r" => hp.spectral_bound_r = num(key, v)?,
        "threshold_t" => hp.threshold_t = num(key, v)?,
        "outer_tol" => hp.outer_tol = num(key, v)?,
        "inner_tol" => hp.inner_tol = num(key, v)?,
        "max_outer_iters" => hp.max_outer_iters = num(key, v)?,
        "max_inner_iters" => hp.max_inner_iters = num(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn hyperparam_lines(hp: &Hyperparams) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "nu0_theta = {}", hp.nu0_theta);
    let _ = writeln!(s, "nu1_theta = {}", hp.nu1_theta);
    let _ = writeln!(s, "nu0_lambda = {}", hp.nu0_lambda);
    let _ = writeln!(s, "nu1_lambda = {}", hp.nu1_lambda);
    let _ = writeln!(s, "eta_theta = {}", hp.eta_theta);
    let _ = writeln!(s, "eta_lambda = {}", hp.eta_lambda);
    let _ = writeln!(s, "rho = {}", hp.rho);
    let _ = writeln!(s, "spectral_bound_r = {}", hp.spectral_bound_r);
    let _ = writeln!(s, "threshold_t = {}", hp.threshold_t);
    let _ = writeln!(s, "outer_tol = {}", hp.outer_tol);
    let _ = writeln!(s, "inner_tol = {}", hp.inner_tol);
    let _ = writeln!(s, "max_outer_iters = {}", hp.max_outer_iters);
    let _ = writeln!(s, "max_inner_iters = {}", hp.max_inner_iters);
    s
}

pub fn set_sim(cfg: &mut SimConfig, key: &str, v: &str) -> Result<bool> {
    match key {
        "p" => cfg.p = num(key, v)?,
        "q" => cfg.q = num(key, v)?,
        "s_lambda" => cfg.s_lambda = num(key, v)?,
        "s_theta" => cfg.s_theta = num(key, v)?,
        "row_norm" => cfg.row_norm = num(key, v)?,
        "zero_row_fraction" => cfg.zero_row_fraction = num(key, v)?,
        "signal_lo" => cfg.signal_range.0 = num(key, v)?,
        "signal_hi" => cfg.signal_range.1 = num(key, v)?,
        "toeplitz_offdiag" => cfg.toeplitz_offdiag = num(key, v)?,
        "theta_method" => {
            cfg.theta_method = match v {
                "independent_uniform" => ThetaMethod::IndependentUniform,
                "sphere_rows" => ThetaMethod::SphereRows,
                _ => {
                    return Err(GcrfError::Parse(format!(
                        "theta_method: expected independent_uniform or sphere_rows, got '{v}'"
                    )))
                }
            }
        }
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn sim_lines(cfg: &SimConfig) -> String {
    let method = match cfg.theta_method {
        ThetaMethod::IndependentUniform => "independent_uniform",
        ThetaMethod::SphereRows => "sphere_rows",
    };
    let mut s = String::new();
    let _ = writeln!(s, "p = {}", cfg.p);
    let _ = writeln!(s, "q = {}", cfg.q);
    let _ = writeln!(s, "s_lambda = {}", cfg.s_lambda);
    let _ = writeln!(s, "theta_method = {method}");
    let _ = writeln!(s, "s_theta = {}", cfg.s_theta);
    let _ = writeln!(s, "row_norm = {}", cfg.row_norm);
    let _ = writeln!(s, "zero_row_fraction = {}", cfg.zero_row_fraction);
    let _ = writeln!(s, "signal_lo = {}", cfg.signal_range.0);
    let _ = writeln!(s, "signal_hi = {}", cfg.signal_range.1);
    let _ = writeln!(s, "toeplitz_offdiag = {}", cfg.toeplitz_offdiag);
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BChoice {
    Auto,
    Fixed(BMethod),
}

/// Everything a command reads from its config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hp: Hyperparams,
    pub solver: SolverConfig,
    /// When set, spike scales follow `1/(c·sqrt(n·ln(p+q)))` for the data.
    pub spike_c: Option<f64>,
    pub b_method: BChoice,
    pub p_threshold: usize,
    /// Center X and Y columns before fitting.
    pub center: bool,
    pub cv_k: usize,
    /// Keep Θ⁰ and Λ⁰ fixed across replications.
    pub fix_truth: bool,
    /// Simulation overrides, applied on top of the named setup.
    pub sim_overrides: Vec<(String, String)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hp: Hyperparams::default(),
            solver: SolverConfig::default(),
            spike_c: None,
            b_method: BChoice::Auto,
            p_threshold: DEFAULT_P_THRESHOLD,
            center: false,
            cv_k: 5,
            fix_truth: false,
            sim_overrides: Vec::new(),
        }
    }
}

const SIM_KEYS: [&str; 10] = [
    "p",
    "q",
    "s_lambda",
    "s_theta",
    "row_norm",
    "zero_row_fraction",
    "signal_lo",
    "signal_hi",
    "toeplitz_offdiag",
    "theta_method",
];

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if set_hyperparam(&mut self.hp, key, v)? {
            return Ok(());
        }
        match key {
            "armijo_sigma" => self.solver.armijo_sigma = num(key, v)?,
            "backtrack_beta" => self.solver.backtrack_beta = num(key, v)?,
            "min_step" => self.solver.min_step = num(key, v)?,
            "spike_c" => {
                self.spike_c = if v == "none" { None } else { Some(num(key, v)?) };
            }
            "b_method" => {
                self.b_method = match v {
                    "auto" => BChoice::Auto,
                    "plug_in" => BChoice::Fixed(BMethod::PlugIn),
                    "multi_regression" => BChoice::Fixed(BMethod::MultiRegression),
                    _ => {
                        return Err(GcrfError::Parse(format!(
                            "b_method: expected auto, plug_in or multi_regression, got '{v}'"
                        )))
                    }
                }
            }
            "p_threshold" => self.p_threshold = num(key, v)?,
            "center" => self.center = boolean(key, v)?,
            "cv_k" => self.cv_k = num(key, v)?,
            "fix_truth" => self.fix_truth = boolean(key, v)?,
            k if SIM_KEYS.contains(&k) => {
                // validated against a scratch config so typos fail early
                let mut scratch = SimConfig::named("setup1", 1, 0)?;
                set_sim(&mut scratch, k, v)?;
                self.sim_overrides.push((k.to_string(), v.to_string()));
            }
            _ => return Err(GcrfError::Parse(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn apply_pairs(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: Option<&Path>) -> Result<()> {
        match path {
            Some(p) => self.apply_pairs(&read_pairs(p)?),
            None => Ok(()),
        }
    }

    pub fn apply_sim_overrides(&self, cfg: &mut SimConfig) -> Result<()> {
        for (k, v) in &self.sim_overrides {
            set_sim(cfg, k, v)?;
        }
        cfg.validate()
    }

    /// All settings in `key = value` form.
    pub fn echo(&self) -> String {
        let mut s = hyperparam_lines(&self.hp);
        let _ = writeln!(s, "armijo_sigma = {}", self.solver.armijo_sigma);
        let _ = writeln!(s, "backtrack_beta = {}", self.solver.backtrack_beta);
        let _ = writeln!(s, "min_step = {}", self.solver.min_step);
        match self.spike_c {
            Some(c) => {
                let _ = writeln!(s, "spike_c = {c}");
            }
            None => {
                let _ = writeln!(s, "spike_c = none");
            }
        }
        let b = match self.b_method {
            BChoice::Auto => "auto",
            BChoice::Fixed(BMethod::PlugIn) => "plug_in",
            BChoice::Fixed(BMethod::MultiRegression) => "multi_regression",
        };
        let _ = writeln!(s, "b_method = {b}");
        let _ = writeln!(s, "p_threshold = {}", self.p_threshold);
        let _ = writeln!(s, "center = {}", self.center);
        let _ = writeln!(s, "cv_k = {}", self.cv_k);
        let _ = writeln!(s, "fix_truth = {}", self.fix_truth);
        s
    }
}

/// Expands `key = v1, v2, ...` lines into the cartesian product over `base`;
/// the first key varies slowest.
pub fn expand_grid(base: &Hyperparams, pairs: &[(String, String)]) -> Result<Vec<Hyperparams>> {
    let mut grid = vec![base.clone()];
    for (key, list) in pairs {
        let values: Vec<&str> = list.split(',').map(str::trim).collect();
        let mut next = Vec::with_capacity(grid.len() * values.len());
        for hp in &grid {
            for v in &values {
                let mut h = hp.clone();
                if !set_hyperparam(&mut h, key, v)? {
                    return Err(GcrfError::Parse(format!("grid: unknown hyperparameter '{key}'")));
                }
                next.push(h);
            }
        }
        grid = next;
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines() {
        let pairs = parse_pairs("# header\n\nnu0 = 0.02  # spike\nrho=0.3\n", "t").unwrap();
        assert_eq!(pairs, vec![("nu0".into(), "0.02".into()), ("rho".into(), "0.3".into())]);
        assert!(parse_pairs("nu0 0.02\n", "t").is_err());
        assert!(parse_pairs("nu0 =\n", "t").is_err());
    }

    #[test]
    fn set_and_echo_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.apply_pairs(&parse_pairs("nu0 = 0.02\neta_theta = 0.9\nspike_c = 3\nb_method = plug_in\ncenter = true\nmin_step = 1e-12\n", "t").unwrap()).unwrap();
        assert_eq!(cfg.hp.nu0_lambda, 0.02);
        assert_eq!(cfg.spike_c, Some(3.0));
        let mut again = RunConfig::default();
        again.apply_pairs(&parse_pairs(&cfg.echo(), "echo").unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_and_malformed_keys() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("nu_zero", "1").is_err());
        assert!(cfg.set("rho", "half").is_err());
        assert!(cfg.set("theta_method", "gaussian").is_err());
        assert!(cfg.set("center", "maybe").is_err());
    }

    #[test]
    fn sim_overrides_apply() {
        let mut cfg = RunConfig::default();
        cfg.set("q", "20").unwrap();
        cfg.set("theta_method", "sphere_rows").unwrap();
        let mut sim = SimConfig::named("setup1", 10, 0).unwrap();
        cfg.apply_sim_overrides(&mut sim).unwrap();
        assert_eq!(sim.q, 20);
        assert_eq!(sim.theta_method, ThetaMethod::SphereRows);
        assert!(sim_lines(&sim).contains("theta_method = sphere_rows"));
    }

    #[test]
    fn grid_product_order() {
        let pairs = parse_pairs("nu0 = 0.001, 0.01\nrho = 0.2,0.5,0.8\n", "g").unwrap();
        let g = expand_grid(&Hyperparams::default(), &pairs).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!((g[0].nu0_theta, g[0].rho), (0.001, 0.2));
        assert_eq!((g[2].nu0_theta, g[2].rho), (0.001, 0.8));
        assert_eq!((g[3].nu0_lambda, g[3].rho), (0.01, 0.2));
        assert!(expand_grid(&Hyperparams::default(), &parse_pairs("bogus = 1", "g").unwrap()).is_err());
    }
}
