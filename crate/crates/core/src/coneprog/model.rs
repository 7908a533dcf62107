//! Affine expressions over scalar decision variables and the problem carrier.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::linalg;

/// `constant + Σ coef·x[var]`, terms sorted by variable and merged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl Affine {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: usize) -> Self {
        Self {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(v: usize, coef: f64) -> Self {
        if coef == 0.0 {
            return Self::zero();
        }
        Self {
            terms: vec![(v, coef)],
            constant: 0.0,
        }
    }

    pub fn terms(&self) -> &[(usize, f64)] {
        &self.terms
    }

    pub fn constant_part(&self) -> f64 {
        self.constant
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty() && self.constant == 0.0
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Self {
        if s == 0.0 {
            return Self::zero();
        }
        Self {
            terms: self.terms.iter().map(|&(v, c)| (v, c * s)).collect(),
            constant: self.constant * s,
        }
    }

    /// `self + s·other`.
    pub fn add_scaled(&self, other: &Affine, s: f64) -> Self {
        if s == 0.0 || other.is_zero() {
            return self.clone();
        }
        let mut terms = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0, 0);
        while i < self.terms.len() || j < other.terms.len() {
            let next = match (self.terms.get(i), other.terms.get(j)) {
                (Some(&(va, ca)), Some(&(vb, cb))) if va == vb => {
                    i += 1;
                    j += 1;
                    (va, ca + s * cb)
                }
                (Some(&(va, ca)), Some(&(vb, _))) if va < vb => {
                    i += 1;
                    (va, ca)
                }
                (Some(&(va, ca)), None) => {
                    i += 1;
                    (va, ca)
                }
                (_, Some(&(vb, cb))) => {
                    j += 1;
                    (vb, s * cb)
                }
                (None, None) => unreachable!(),
            };
            if next.1 != 0.0 {
                terms.push(next);
            }
        }
        Self {
            terms,
            constant: self.constant + s * other.constant,
        }
    }

    pub fn add(&self, other: &Affine) -> Self {
        self.add_scaled(other, 1.0)
    }

    pub fn sub(&self, other: &Affine) -> Self {
        self.add_scaled(other, -1.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }

    pub fn max_var(&self) -> Option<usize> {
        self.terms.last().map(|&(v, _)| v)
    }
}

/// Dense matrix of affine expressions (column-major).
#[derive(Debug, Clone, PartialEq)]
pub struct LinMat {
    rows: usize,
    cols: usize,
    data: Vec<Affine>,
}

impl LinMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Affine::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Affine) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn constant(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |r, c| Affine::constant(m[(r, c)]))
    }

    /// `s·I`.
    pub fn scalar_identity(n: usize, s: &Affine) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { s.clone() } else { Affine::zero() })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> &Affine {
        &self.data[c * self.rows + r]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Affine) {
        self.data[c * self.rows + r] = v;
    }

    pub fn add(&self, other: &LinMat) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a.add(b)).collect(),
        }
    }

    pub fn sub(&self, other: &LinMat) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a.sub(b)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r).clone())
    }

    /// `m · self` for a constant matrix `m`.
    pub fn left_mul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.ncols(), self.rows);
        Self::from_fn(m.nrows(), self.cols, |r, c| {
            (0..self.rows).fold(Affine::zero(), |acc, k| acc.add_scaled(self.get(k, c), m[(r, k)]))
        })
    }

    /// `self · m` for a constant matrix `m`.
    pub fn right_mul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(self.cols, m.nrows());
        Self::from_fn(self.rows, m.ncols(), |r, c| {
            (0..self.cols).fold(Affine::zero(), |acc, k| acc.add_scaled(self.get(r, k), m[(k, c)]))
        })
    }

    /// `self − a·m` where `a` is an affine scalar and `m` constant.
    pub fn sub_scaled_const(&self, a: &Affine, m: &DMatrix<f64>) -> Self {
        assert_eq!((self.rows, self.cols), m.shape());
        Self::from_fn(self.rows, self.cols, |r, c| {
            let coef = m[(r, c)];
            if coef == 0.0 {
                self.get(r, c).clone()
            } else {
                self.get(r, c).add_scaled(a, -coef)
            }
        })
    }

    /// Sub-matrix copy.
    pub fn slice(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |r, c| self.get(r0 + r, c0 + c).clone())
    }

    /// Assembles a block matrix given as rows of blocks.
    pub fn blocks(rows: &[&[&LinMat]]) -> Self {
        let heights: Vec<usize> = rows.iter().map(|r| r[0].rows).collect();
        let widths: Vec<usize> = rows[0].iter().map(|b| b.cols).collect();
        let mut out = Self::zeros(heights.iter().sum(), widths.iter().sum());
        let mut r0 = 0;
        for (row, &h) in rows.iter().zip(&heights) {
            let mut c0 = 0;
            for (b, &w) in row.iter().zip(&widths) {
                assert_eq!((b.rows, b.cols), (h, w), "inconsistent block shapes");
                for c in 0..w {
                    for r in 0..h {
                        out.set(r0 + r, c0 + c, b.get(r, c).clone());
                    }
                }
                c0 += w;
            }
            r0 += h;
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| self.get(r, c).eval(x))
    }

    pub fn entries(&self) -> impl Iterator<Item = &Affine> {
        self.data.iter()
    }

    /// Whether entry `(r, c)` and `(c, r)` coincide as expressions.
    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && (0..self.rows).all(|r| (0..r).all(|c| self.get(r, c) == self.get(c, r)))
    }
}

/// A symmetric affine matrix constrained to be positive semidefinite.
#[derive(Debug, Clone)]
pub struct PsdConstraint {
    pub name: String,
    pub expr: LinMat,
}

#[derive(Debug, Clone)]
pub struct ScalarConstraint {
    pub name: String,
    pub expr: Affine,
}

/// `weight·‖entries‖₂` (the Frobenius norm of an affine matrix, flattened).
#[derive(Debug, Clone)]
pub struct NormTerm {
    pub weight: f64,
    pub entries: Vec<Affine>,
}

#[derive(Debug, Clone, Default)]
pub struct Objective {
    pub linear: Affine,
    pub norms: Vec<NormTerm>,
}

impl Objective {
    pub fn is_feasibility(&self) -> bool {
        self.linear.is_constant() && self.norms.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.linear.eval(x)
            + self
                .norms
                .iter()
                .map(|t| t.weight * t.entries.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
    }
}

/// Minimize an objective subject to PSD, nonnegativity and equality
/// constraints, all affine in the scalar variables.
#[derive(Debug, Clone, Default)]
pub struct ConeProblem {
    labels: Vec<String>,
    pub psd: Vec<PsdConstraint>,
    pub nonneg: Vec<ScalarConstraint>,
    pub eq: Vec<ScalarConstraint>,
    pub objective: Objective,
}

/// Independent re-evaluation of a candidate point.
#[derive(Debug, Clone)]
pub struct Residuals {
    /// Per PSD constraint: (name, min eigenvalue, spectral norm).
    pub psd: Vec<(String, f64, f64)>,
    pub nonneg_min: f64,
    pub eq_max_abs: f64,
}

impl Residuals {
    /// PSD blocks within `λ_min ≥ −tol·(1 + ‖·‖)`, scalars within `tol`.
    pub fn within(&self, tol: f64) -> bool {
        self.psd.iter().all(|(_, lo, nrm)| *lo >= -tol * (1.0 + nrm))
            && self.nonneg_min >= -tol
            && self.eq_max_abs <= tol
    }

    pub fn worst_psd(&self) -> f64 {
        self.psd.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
    }
}

impl ConeProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, v: usize) -> &str {
        &self.labels[v]
    }

    pub fn add_var(&mut self, label: impl Into<String>) -> usize {
        self.labels.push(label.into());
        self.labels.len() - 1
    }

    pub fn add_psd(&mut self, name: impl Into<String>, expr: LinMat) {
        debug_assert!(expr.is_symmetric(), "PSD expression must be symmetric");
        self.psd.push(PsdConstraint {
            name: name.into(),
            expr,
        });
    }

    pub fn add_nonneg(&mut self, name: impl Into<String>, expr: Affine) {
        self.nonneg.push(ScalarConstraint {
            name: name.into(),
            expr,
        });
    }

    pub fn add_eq(&mut self, name: impl Into<String>, expr: Affine) {
        self.eq.push(ScalarConstraint {
            name: name.into(),
            expr,
        });
    }

    pub fn residuals(&self, x: &[f64]) -> Residuals {
        let psd = self
            .psd
            .iter()
            .map(|c| {
                let m = c.expr.eval(x);
                (c.name.clone(), linalg::min_eig_sym(&m), linalg::sym_norm(&m))
            })
            .collect();
        let nonneg_min = self.nonneg.iter().map(|c| c.expr.eval(x)).fold(f64::INFINITY, f64::min);
        let eq_max_abs = self.eq.iter().map(|c| c.expr.eval(x).abs()).fold(0.0, f64::max);
        Residuals {
            psd,
            nonneg_min,
            eq_max_abs,
        }
    }

    /// Plain-text sparse triplet dump, one section per constraint block.
    ///
    /// PSD sections list `row col var coef` for the upper triangle (var `-`
    /// marks the constant); scalar sections list `var coef`.
    pub fn dump_triplets(&self, out: &mut impl Write) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "# variables {}", self.num_vars()).unwrap();
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(s, "var {i} {l}").unwrap();
        }
        for c in &self.psd {
            writeln!(s, "\n[psd {} dim {}]", c.name, c.expr.nrows()).unwrap();
            for col in 0..c.expr.ncols() {
                for row in 0..=col {
                    let e = c.expr.get(row, col);
                    if e.constant_part() != 0.0 {
                        writeln!(s, "{row} {col} - {:e}", e.constant_part()).unwrap();
                    }
                    for &(v, coef) in e.terms() {
                        writeln!(s, "{row} {col} {v} {coef:e}").unwrap();
                    }
                }
            }
        }
        for (kind, list) in [("nonneg", &self.nonneg), ("eq", &self.eq)] {
            for c in list {
                writeln!(s, "\n[{kind} {}]", c.name).unwrap();
                if c.expr.constant_part() != 0.0 {
                    writeln!(s, "- {:e}", c.expr.constant_part()).unwrap();
                }
                for &(v, coef) in c.expr.terms() {
                    writeln!(s, "{v} {coef:e}").unwrap();
                }
            }
        }
        writeln!(s, "\n[objective linear]").unwrap();
        for &(v, coef) in self.objective.linear.terms() {
            writeln!(s, "{v} {coef:e}").unwrap();
        }
        for (i, t) in self.objective.norms.iter().enumerate() {
            writeln!(s, "\n[objective norm {i} weight {:e}]", t.weight).unwrap();
            for (e_idx, e) in t.entries.iter().enumerate() {
                for &(v, coef) in e.terms() {
                    writeln!(s, "{e_idx} {v} {coef:e}").unwrap();
                }
            }
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_merge() {
        let a = Affine::var(0).add(&Affine::term(2, 3.0));
        let b = Affine::term(1, 2.0)
            .add(&Affine::term(2, -3.0))
            .add(&Affine::constant(1.5));
        let s = a.add(&b);
        assert_eq!(s.terms(), &[(0, 1.0), (1, 2.0)]);
        assert_eq!(s.constant_part(), 1.5);
        assert_eq!(s.eval(&[1.0, 1.0, 7.0]), 4.5);
    }

    #[test]
    fn linmat_products_match_dense() {
        // X is a 2x2 matrix of variables 0..4 (column-major)
        let x = LinMat::from_fn(2, 2, |r, c| Affine::var(c * 2 + r));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let vals = [0.3, -1.2, 2.0, 0.7];
        let xv = x.eval(&vals);
        assert!((x.left_mul(&m).eval(&vals) - &m * &xv).norm() < 1e-15);
        assert!((x.right_mul(&m).eval(&vals) - &xv * &m).norm() < 1e-15);
        assert_eq!(x.transpose().eval(&vals), xv.transpose());
    }

    #[test]
    fn dump_has_sections() {
        let mut p = ConeProblem::new();
        let v = p.add_var("x");
        p.add_psd("c", LinMat::scalar_identity(2, &Affine::var(v)));
        p.add_nonneg("pos", Affine::var(v));
        let mut buf = Vec::new();
        p.dump_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("[psd c dim 2]"));
        assert!(text.contains("[nonneg pos]"));
    }
}
