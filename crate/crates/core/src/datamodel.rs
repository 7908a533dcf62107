//! Trajectory data, the quadratic noise model and the consistency set.
//!
//! With measurements `X = [x(0) … x(T)]`, inputs `U = [u(0) … u(T-1)]` and a
//! known input matrix `B`, every state matrix `A` explaining the data leaves a
//! residual `W = X₊ − A X₋ − B U` that must satisfy the noise bound
//!
//! ```text
//! [I; Wᵀ]ᵀ Φ [I; Wᵀ] ⪰ 0,    Φ = [Φ11 Φ12; Φ12ᵀ Φ22],  Φ22 ≺ 0.
//! ```
//!
//! The set of such `A` is the sublevel set of a quadratic matrix inequality
//! in `[I; Aᵀ]` whose coefficient is the `2n × 2n` matrix `N`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, DEFAULT_PSD_TOL};

/// State and input measurements over a window of `T` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    x: DMatrix<f64>,
    u: DMatrix<f64>,
}

impl TrajectoryData {
    /// `x` is `n × (T+1)`, `u` is `m × T`.
    pub fn new(x: DMatrix<f64>, u: DMatrix<f64>) -> Result<Self> {
        if u.ncols() == 0 {
            return Err(Error::InvalidArgument("window length T must be >= 1".into()));
        }
        if x.ncols() != u.ncols() + 1 {
            return dim_err(format!("X has {} columns, expected T+1 = {}", x.ncols(), u.ncols() + 1));
        }
        if x.nrows() == 0 {
            return dim_err("state dimension must be >= 1");
        }
        Ok(Self { x, u })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Columns `1..=T` of `X`.
    pub fn x_plus(&self) -> DMatrix<f64> {
        self.x.columns(1, self.t()).into_owned()
    }

    /// Columns `0..T` of `X`.
    pub fn x_minus(&self) -> DMatrix<f64> {
        self.x.columns(0, self.t()).into_owned()
    }

    pub fn t(&self) -> usize {
        self.u.ncols()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    /// Residual `X₊ − A X₋ − B U` for a candidate state matrix.
    pub fn residual(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.shape() != (self.n(), self.n()) || b.shape() != (self.n(), self.m()) {
            return dim_err("A must be n x n and B must be n x m");
        }
        Ok(self.x_plus() - a * self.x_minus() - b * &self.u)
    }
}

/// The partitioned noise bound Φ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    phi11: DMatrix<f64>,
    phi12: DMatrix<f64>,
    phi22: DMatrix<f64>,
}

impl NoiseModel {
    pub fn new(phi11: DMatrix<f64>, phi12: DMatrix<f64>, phi22: DMatrix<f64>) -> Result<Self> {
        let n = phi11.nrows();
        let t = phi22.nrows();
        if !phi11.is_square() || !phi22.is_square() || phi12.shape() != (n, t) {
            return dim_err("Phi blocks must be n x n, n x T and T x T");
        }
        if !linalg::is_symmetric(&phi11, 1e-12) || !linalg::is_symmetric(&phi22, 1e-12) {
            return Err(Error::NoiseModel("Phi11 and Phi22 must be symmetric".into()));
        }
        if linalg::max_eig_sym(&phi22) >= 0.0 {
            return Err(Error::NoiseModel("Phi22 must be negative definite".into()));
        }
        Ok(Self { phi11, phi12, phi22 })
    }

    /// Energy bound `W Wᵀ ⪯ Q`: `Φ11 = Q`, `Φ12 = 0`, `Φ22 = −I_T`.
    pub fn from_energy_bound(q: &DMatrix<f64>, t: usize) -> Result<Self> {
        if !q.is_square() || t == 0 {
            return dim_err("Q must be square and T >= 1");
        }
        if !linalg::is_symmetric(q, 1e-12) {
            return Err(Error::NoiseModel("Q must be symmetric".into()));
        }
        let (psd, lo) = linalg::psd_check(q, DEFAULT_PSD_TOL);
        if !psd {
            return Err(Error::NoiseModel(format!(
                "Q must be positive semidefinite (min eigenvalue {lo:e})"
            )));
        }
        let n = q.nrows();
        Ok(Self {
            phi11: q.clone(),
            phi12: DMatrix::zeros(n, t),
            phi22: -DMatrix::identity(t, t),
        })
    }

    pub fn phi11(&self) -> &DMatrix<f64> {
        &self.phi11
    }

    pub fn phi12(&self) -> &DMatrix<f64> {
        &self.phi12
    }

    pub fn phi22(&self) -> &DMatrix<f64> {
        &self.phi22
    }

    pub fn n(&self) -> usize {
        self.phi11.nrows()
    }

    pub fn t(&self) -> usize {
        self.phi22.nrows()
    }

    /// The full `(n+T) × (n+T)` matrix Φ.
    pub fn phi(&self) -> DMatrix<f64> {
        let p21 = self.phi12.transpose();
        linalg::block_matrix(&[&[&self.phi11, &self.phi12], &[&p21, &self.phi22]])
    }
}

/// Outcome of a PSD-type test: verdict plus the minimum eigenvalue behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdVerdict {
    pub holds: bool,
    pub min_eig: f64,
}

impl PsdVerdict {
    fn of(m: &DMatrix<f64>, tol: f64) -> Self {
        let (holds, min_eig) = linalg::psd_check(m, tol);
        Self { holds, min_eig }
    }
}

/// Evaluates `Φ11 + Φ12 Wᵀ + W Φ12ᵀ + W Φ22 Wᵀ ⪰ 0`.
pub fn noise_satisfies(w: &DMatrix<f64>, model: &NoiseModel) -> Result<PsdVerdict> {
    noise_satisfies_tol(w, model, DEFAULT_PSD_TOL)
}

pub fn noise_satisfies_tol(w: &DMatrix<f64>, model: &NoiseModel, tol: f64) -> Result<PsdVerdict> {
    if w.shape() != (model.n(), model.t()) {
        return dim_err(format!(
            "W is {}x{}, noise model expects {}x{}",
            w.nrows(),
            w.ncols(),
            model.n(),
            model.t()
        ));
    }
    let cross = &model.phi12 * w.transpose();
    let m = &model.phi11 + &cross + cross.transpose() + w * &model.phi22 * w.transpose();
    Ok(PsdVerdict::of(&m, tol))
}

/// The data-derived matrix `N` describing every state matrix consistent
/// with the measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencySet {
    n_mat: DMatrix<f64>,
    n: usize,
}

/// `N = [I, X₊ − B U; 0, −X₋] Φ [I, X₊ − B U; 0, −X₋]ᵀ`.
pub fn build_n(data: &TrajectoryData, b: &DMatrix<f64>, model: &NoiseModel) -> Result<ConsistencySet> {
    let n = data.n();
    if b.shape() != (n, data.m()) {
        return dim_err(format!("B is {}x{}, expected {}x{}", b.nrows(), b.ncols(), n, data.m()));
    }
    if model.n() != n || model.t() != data.t() {
        return dim_err(format!(
            "noise model is for (n, T) = ({}, {}), data has ({}, {})",
            model.n(),
            model.t(),
            n,
            data.t()
        ));
    }
    let top_right = data.x_plus() - b * data.u();
    let bottom_right = -data.x_minus();
    let id = DMatrix::identity(n, n);
    let zero = DMatrix::zeros(n, n);
    let outer = linalg::block_matrix(&[&[&id, &top_right], &[&zero, &bottom_right]]);
    let n_mat = &outer * model.phi() * outer.transpose();
    // exact symmetry: average away rounding in the triple product
    let n_mat = linalg::symmetrize(&n_mat);
    Ok(ConsistencySet { n_mat, n })
}

impl ConsistencySet {
    /// Wraps an explicit `N`; must be symmetric `2n × 2n`.
    pub fn from_matrix(n_mat: DMatrix<f64>) -> Result<Self> {
        if !n_mat.is_square() || !n_mat.nrows().is_multiple_of(2) || n_mat.nrows() == 0 {
            return dim_err("N must be 2n x 2n");
        }
        if !linalg::is_symmetric(&n_mat, 1e-12) {
            return Err(Error::InvalidArgument("N must be symmetric".into()));
        }
        let n = n_mat.nrows() / 2;
        Ok(Self {
            n_mat: linalg::symmetrize(&n_mat),
            n,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.n_mat
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n11(&self) -> DMatrix<f64> {
        self.n_mat.view((0, 0), (self.n, self.n)).into_owned()
    }

    pub fn n12(&self) -> DMatrix<f64> {
        self.n_mat.view((0, self.n), (self.n, self.n)).into_owned()
    }

    pub fn n22(&self) -> DMatrix<f64> {
        self.n_mat.view((self.n, self.n), (self.n, self.n)).into_owned()
    }

    /// `[I; Aᵀ]ᵀ N [I; Aᵀ]`.
    pub fn quadratic_form(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.shape() != (self.n, self.n) {
            return dim_err(format!("A must be {0}x{0}", self.n));
        }
        let n12 = self.n12();
        let cross = &n12 * a.transpose();
        Ok(self.n11() + &cross + cross.transpose() + a * self.n22() * a.transpose())
    }

    /// Whether `A` lies in the consistency set.
    pub fn membership(&self, a: &DMatrix<f64>) -> Result<PsdVerdict> {
        self.membership_tol(a, DEFAULT_PSD_TOL)
    }

    pub fn membership_tol(&self, a: &DMatrix<f64>, tol: f64) -> Result<PsdVerdict> {
        Ok(PsdVerdict::of(&self.quadratic_form(a)?, tol))
    }

    /// Center `Â = −N12 N22⁻¹` of the matrix ellipsoid; needs `N22 ≺ 0`.
    pub fn center(&self) -> Result<DMatrix<f64>> {
        let n22 = self.n22();
        let neg = -&n22;
        let chol = nalgebra::Cholesky::new(linalg::symmetrize(&neg))
            .ok_or_else(|| Error::DegenerateSet("N22 is not negative definite".into()))?;
        // Â = N12 (−N22)⁻¹ ; solve (−N22) Âᵀ = N21
        let a_t = chol.solve(&self.n12().transpose());
        Ok(a_t.transpose())
    }

    /// `N11 − N12 N22⁻¹ N21`: the ellipsoid's radius matrix.
    pub fn radius(&self) -> Result<DMatrix<f64>> {
        let center = self.center()?;
        Ok(self.n11() - &center * self.n22() * center.transpose())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_bound_blocks() {
        let q = DMatrix::identity(6, 6) / 20.0;
        let m = NoiseModel::from_energy_bound(&q, 10).unwrap();
        assert_eq!(m.phi11(), &q);
        assert_eq!(m.phi12(), &DMatrix::zeros(6, 10));
        assert_eq!(m.phi22(), &-DMatrix::<f64>::identity(10, 10));
    }

    #[test]
    fn energy_bound_rejects_indefinite() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            NoiseModel::from_energy_bound(&q, 3),
            Err(Error::NoiseModel(_))
        ));
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(NoiseModel::from_energy_bound(&q, 3).is_err());
    }

    #[test]
    fn full_phi_requires_negative_phi22() {
        let r = NoiseModel::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 3), DMatrix::identity(3, 3));
        assert!(matches!(r, Err(Error::NoiseModel(_))));
    }

    #[test]
    fn zero_bound_forces_zero_noise() {
        let m = NoiseModel::from_energy_bound(&DMatrix::zeros(2, 2), 3).unwrap();
        assert!(noise_satisfies(&DMatrix::zeros(2, 3), &m).unwrap().holds);
        let w = DMatrix::from_element(2, 3, 0.1);
        assert!(!noise_satisfies(&w, &m).unwrap().holds);
    }

    #[test]
    fn half_ones_violates_unit_bound() {
        // W Wᵀ = 0.75·ones(2,2) has eigenvalues {1.5, 0}; I − W Wᵀ has −0.5.
        let m = NoiseModel::from_energy_bound(&DMatrix::identity(2, 2), 3).unwrap();
        let w = DMatrix::from_element(2, 3, 0.5);
        let v = noise_satisfies(&w, &m).unwrap();
        assert!(!v.holds);
        assert!((v.min_eig + 0.5).abs() < 1e-12);
    }

    #[test]
    fn noise_dimension_mismatch() {
        let m = NoiseModel::from_energy_bound(&DMatrix::identity(2, 2), 3).unwrap();
        assert!(matches!(
            noise_satisfies(&DMatrix::zeros(2, 4), &m),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_data_gives_block_n() {
        let q = DMatrix::identity(2, 2) * 0.3;
        let data = TrajectoryData::new(DMatrix::zeros(2, 5), DMatrix::zeros(1, 4)).unwrap();
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let model = NoiseModel::from_energy_bound(&q, 4).unwrap();
        let cs = build_n(&data, &b, &model).unwrap();
        let mut expect = DMatrix::zeros(4, 4);
        expect.view_mut((0, 0), (2, 2)).copy_from(&q);
        assert_eq!(cs.matrix(), &expect);
    }

    #[test]
    fn trajectory_validation() {
        assert!(TrajectoryData::new(DMatrix::zeros(2, 1), DMatrix::zeros(1, 0)).is_err());
        assert!(TrajectoryData::new(DMatrix::zeros(2, 4), DMatrix::zeros(1, 4)).is_err());
        let d = TrajectoryData::new(DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]), DMatrix::zeros(1, 2)).unwrap();
        assert_eq!(d.x_plus(), DMatrix::from_row_slice(1, 2, &[2.0, 3.0]));
        assert_eq!(d.x_minus(), DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
    }

    #[test]
    fn build_n_dimension_checks() {
        let data = TrajectoryData::new(DMatrix::zeros(2, 5), DMatrix::zeros(1, 4)).unwrap();
        let model = NoiseModel::from_energy_bound(&DMatrix::identity(2, 2), 4).unwrap();
        assert!(build_n(&data, &DMatrix::zeros(2, 2), &model).is_err());
        let model3 = NoiseModel::from_energy_bound(&DMatrix::identity(2, 2), 3).unwrap();
        assert!(build_n(&data, &DMatrix::zeros(2, 1), &model3).is_err());
    }

    #[test]
    fn zero_data_center_is_zero() {
        let n = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, -1.0, 0.0, //
                0.0, 0.0, 0.0, -1.0,
            ],
        );
        let cs = ConsistencySet::from_matrix(n).unwrap();
        assert_eq!(cs.center().unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn singular_n22_is_degenerate() {
        let cs = ConsistencySet::from_matrix(DMatrix::zeros(4, 4)).unwrap();
        assert!(matches!(cs.center(), Err(Error::DegenerateSet(_))));
    }
}
