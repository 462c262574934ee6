//! Support recovery and scoring against a known truth.

use std::fmt::Write as _;

use crate::error::{GcrfError, Result};
use crate::linalg::{frobenius_diff, Mat};
use crate::penalty::InclusionProbs;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SupportPattern {
    /// q×p.
    pub theta_support: Vec<Vec<bool>>,
    /// p×p, symmetric, diagonal always true.
    pub lambda_support: Vec<Vec<bool>>,
    /// Length q; covariate `i` is kept when any entry of Θ row `i` is.
    pub b_column_support: Vec<bool>,
}

/// Thresholds inclusion probabilities with a strict `> t`.
pub fn recover_support(probs: &InclusionProbs, t: f64) -> SupportPattern {
    let (q, p) = probs.p_theta.shape();
    let theta_support: Vec<Vec<bool>> =
        (0..q).map(|i| (0..p).map(|j| probs.p_theta[(i, j)] > t).collect()).collect();
    let lambda_support = (0..p)
        .map(|i| {
            (0..p)
                .map(|j| {
                    if i == j {
                        return true;
                    }
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    probs.p_lambda[(a, b)] > t
                })
                .collect()
        })
        .collect();
    let b_column_support = theta_support.iter().map(|row| row.iter().any(|v| *v)).collect();
    SupportPattern { theta_support, lambda_support, b_column_support }
}

/// Matthews correlation coefficient; 0 when any marginal count is zero.
pub fn mcc(tp: u64, tn: u64, fp: u64, fn_: u64) -> f64 {
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / denom.sqrt()
}

/// Confusion counts `(tp, tn, fp, fn)` of `predicted` against `truth`.
pub fn confusion<I>(pairs: I) -> (u64, u64, u64, u64)
where
    I: IntoIterator<Item = (bool, bool)>,
{
    let mut c = (0, 0, 0, 0);
    for (pred, truth) in pairs {
        match (pred, truth) {
            (true, true) => c.0 += 1,
            (false, false) => c.1 += 1,
            (true, false) => c.2 += 1,
            (false, true) => c.3 += 1,
        }
    }
    c
}

fn mcc_of<I: IntoIterator<Item = (bool, bool)>>(pairs: I) -> f64 {
    let (tp, tn, fp, fn_) = confusion(pairs);
    mcc(tp, tn, fp, fn_)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReport {
    pub frob_theta: f64,
    pub frob_lambda: f64,
    pub frob_b: f64,
    pub mcc_theta: f64,
    /// Strict upper triangle only.
    pub mcc_lambda: f64,
    /// Exact-zero support of B̂ against B⁰, entrywise.
    pub mcc_b: f64,
    /// Fully zero columns of B̂ against those of B⁰.
    pub mcc_b_columns: f64,
}

impl ScoreReport {
    pub const FIELDS: [&'static str; 7] =
        ["frob_theta", "frob_lambda", "frob_b", "mcc_theta", "mcc_lambda", "mcc_b", "mcc_b_columns"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.frob_theta,
            self.frob_lambda,
            self.frob_b,
            self.mcc_theta,
            self.mcc_lambda,
            self.mcc_b,
            self.mcc_b_columns,
        ]
    }

    pub fn from_values(v: [f64; 7]) -> Self {
        Self {
            frob_theta: v[0],
            frob_lambda: v[1],
            frob_b: v[2],
            mcc_theta: v[3],
            mcc_lambda: v[4],
            mcc_b: v[5],
            mcc_b_columns: v[6],
        }
    }

    /// `name=value` per line, 6 significant digits.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for (k, v) in Self::FIELDS.iter().zip(self.values()) {
            let _ = writeln!(out, "{k}={}", sig6(v));
        }
        out
    }

    pub fn csv_header() -> String {
        Self::FIELDS.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        self.values().iter().map(|v| sig6(*v)).collect::<Vec<_>>().join(",")
    }
}

/// Formats with 6 significant digits, like C's `%.6g`.
pub fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    fn trim(s: &str) -> &str {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.')
        } else {
            s
        }
    }
    // round first so the exponent reflects any carry, e.g. 999999.7
    let sci = format!("{v:.5e}");
    let (mant, e) = sci.split_once('e').expect("exponent form");
    let exp: i32 = e.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim(&format!("{v:.decimals$}")).to_string()
    } else {
        format!("{}e{exp}", trim(mant))
    }
}

/// Fitted quantities entering [`score`].
#[derive(Debug, Clone, Copy)]
pub struct Estimate<'a> {
    pub theta: &'a Mat,
    pub lambda: &'a Mat,
    pub b: &'a Mat,
    pub probs: &'a InclusionProbs,
}

#[derive(Debug, Clone, Copy)]
pub struct Truth<'a> {
    pub theta: &'a Mat,
    pub lambda: &'a Mat,
    pub b: &'a Mat,
}

fn check_shape(name: &str, a: &Mat, b: &Mat) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(GcrfError::DimensionMismatch(format!(
            "{name}: estimate is {:?} but truth is {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn score(est: Estimate<'_>, truth: Truth<'_>, t: f64) -> Result<ScoreReport> {
    check_shape("theta", est.theta, truth.theta)?;
    check_shape("lambda", est.lambda, truth.lambda)?;
    check_shape("b", est.b, truth.b)?;
    check_shape("theta probabilities", &est.probs.p_theta, truth.theta)?;
    check_shape("lambda probabilities", &est.probs.p_lambda, truth.lambda)?;
    let support = recover_support(est.probs, t);
    let (q, p) = truth.theta.shape();

    let mcc_theta = mcc_of(
        (0..q)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .map(|(i, j)| (support.theta_support[i][j], truth.theta[(i, j)] != 0.0)),
    );
    let mcc_lambda = mcc_of(
        (0..p)
            .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
            .map(|(i, j)| (support.lambda_support[i][j], truth.lambda[(i, j)] != 0.0)),
    );
    let mcc_b = mcc_of(est.b.iter().zip(truth.b.iter()).map(|(e, t)| (*e != 0.0, *t != 0.0)));
    let nonzero_col = |m: &Mat, i: usize| m.column(i).iter().any(|v| *v != 0.0);
    let mcc_b_columns = mcc_of((0..q).map(|i| (nonzero_col(est.b, i), nonzero_col(truth.b, i))));

    Ok(ScoreReport {
        frob_theta: frobenius_diff(est.theta, truth.theta),
        frob_lambda: frobenius_diff(est.lambda, truth.lambda),
        frob_b: frobenius_diff(est.b, truth.b),
        mcc_theta,
        mcc_lambda,
        mcc_b,
        mcc_b_columns,
    })
}
