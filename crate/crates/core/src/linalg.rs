//! Dense helpers shared across modules.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default relative tolerance for PSD tests.
pub const DEFAULT_PSD_TOL: f64 = 1e-8;

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eig_sym(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let s = symmetrize(m);
    s.symmetric_eigenvalues().min()
}

pub fn max_eig_sym(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    let s = symmetrize(m);
    s.symmetric_eigenvalues().max()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Spectral norm of a symmetric matrix (largest eigenvalue magnitude).
pub fn sym_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().amax()
}

/// PSD test with a scale-aware margin: `λ_min ≥ −tol·max(1, ‖m‖)`.
/// Returns the verdict and the raw minimum eigenvalue.
pub fn psd_check(m: &DMatrix<f64>, tol: f64) -> (bool, f64) {
    let s = symmetrize(m);
    let eig = s.symmetric_eigenvalues();
    let lo = eig.min();
    let scale = eig.amax().max(1.0);
    (lo >= -tol * scale, lo)
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).norm() <= rel_tol * m.norm().max(f64::MIN_POSITIVE)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(symmetrize(p))
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))
}

/// Stacks matrices into a block matrix given as rows of blocks.
pub fn block_matrix(rows: &[&[&DMatrix<f64>]]) -> DMatrix<f64> {
    let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = rows[0].iter().map(|b| b.ncols()).collect();
    let mut out = DMatrix::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (row, h) in rows.iter().zip(&heights) {
        let mut c0 = 0;
        for (b, w) in row.iter().zip(&widths) {
            assert_eq!((b.nrows(), b.ncols()), (*h, *w), "inconsistent block shapes");
            out.view_mut((r0, c0), (*h, *w)).copy_from(*b);
            c0 += w;
        }
        r0 += h;
    }
    out
}
