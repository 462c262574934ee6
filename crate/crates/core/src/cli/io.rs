//! Headerless numeric CSV in and out.
//!
//! Values are written with Rust's shortest round-trip formatting, so a matrix
//! written and read back is bit-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{GcrfError, Result};
use crate::linalg::Mat;

fn parse_rows(path: &Path, skip_header: bool) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)
        .map_err(|e| GcrfError::Parse(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    if skip_header {
        lines.next();
    }
    let mut width = None;
    for (lineno, line) in lines {
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(GcrfError::Parse(format!(
                    "{}:{}: expected {w} fields, found {}",
                    path.display(),
                    lineno + 1,
                    fields.len()
                )))
            }
            _ => {}
        }
        rows.push(fields);
    }
    if rows.is_empty() {
        return Err(GcrfError::Parse(format!("{} contains no data rows", path.display())));
    }
    Ok(rows)
}

pub fn read_matrix(path: &Path, skip_header: bool) -> Result<Mat> {
    let rows = parse_rows(path, skip_header)?;
    let (n, m) = (rows.len(), rows[0].len());
    let mut out = Mat::zeros(n, m);
    for (i, row) in rows.iter().enumerate() {
        for (j, field) in row.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                GcrfError::Parse(format!(
                    "{}: row {}, column {}: '{field}' is not a number",
                    path.display(),
                    i + 1,
                    j + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(GcrfError::Parse(format!(
                    "{}: row {}, column {}: non-finite value",
                    path.display(),
                    i + 1,
                    j + 1
                )));
            }
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// 0/1 (or true/false) matrix.
pub fn read_mask(path: &Path, skip_header: bool) -> Result<DMatrix<bool>> {
    let rows = parse_rows(path, skip_header)?;
    let (n, m) = (rows.len(), rows[0].len());
    let mut out = DMatrix::from_element(n, m, false);
    for (i, row) in rows.iter().enumerate() {
        for (j, field) in row.iter().enumerate() {
            out[(i, j)] = match field.as_str() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => {
                    return Err(GcrfError::Parse(format!(
                        "{}: row {}, column {}: mask entries must be 0 or 1, got '{other}'",
                        path.display(),
                        i + 1,
                        j + 1
                    )))
                }
            };
        }
    }
    Ok(out)
}

pub fn format_matrix(m: &Mat) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    write_text(path, &format_matrix(m))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)
        .map_err(|e| GcrfError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}
