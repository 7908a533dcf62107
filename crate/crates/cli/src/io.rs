//! Matrix CSV files and the `system.json` format.
//!
//! CSV matrices are plain rows of comma-separated decimals without a header.
//! Values are written in the shortest form that parses back to the same
//! `f64`, which never needs more than 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ddsparse::simulate::SystemModel;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub fn format_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(',');
            }
            write!(out, "{}", m[(r, c)]).expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .with_context(|| format!("line {}: cannot parse {:?} as a number", i + 1, v.trim()))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                bail!("line {}: expected {} values, found {}", i + 1, first.len(), row.len());
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("no rows");
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

pub fn read_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_csv(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_csv(m)).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        bail!("ragged matrix rows");
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        cols,
        rows.iter().flatten().copied(),
    ))
}

/// `system.json`: matrices as arrays of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    /// Absent when only the input matrix is known.
    #[serde(default)]
    pub a_s: Option<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub n_dims: Option<Vec<usize>>,
    #[serde(default)]
    pub m_dims: Option<Vec<usize>>,
}

impl SystemFile {
    pub fn from_model(sys: &SystemModel) -> Self {
        Self {
            a_s: Some(to_rows(sys.a_s())),
            b: to_rows(sys.b()),
            n_dims: Some(sys.n_dims().to_vec()),
            m_dims: Some(sys.m_dims().to_vec()),
        }
    }

    pub fn b(&self) -> Result<DMatrix<f64>> {
        from_rows(&self.b)
    }

    pub fn a_s(&self) -> Result<Option<DMatrix<f64>>> {
        self.a_s.as_deref().map(from_rows).transpose()
    }
}
