//! The data-driven stabilization LMI.
//!
//! In variables `P = Pᵀ`, `L`, `α ≥ 0`, `β > 0`:
//!
//! ```text
//! ⎡ P − βI   0   BL ⎤       ⎡ N  0 ⎤
//! ⎢   0      0    P ⎥  − α  ⎣ 0  0 ⎦  ⪰ 0
//! ⎣ LᵀBᵀ     P    P ⎦
//! ```
//!
//! Feasibility certifies that `K = L P⁻¹` satisfies
//! `(A + BK) P (A + BK)ᵀ ≺ P` for every `A` in the consistency set.
//! The inequality is homogeneous in `(P, L, α, β)`, so the assembled problem
//! fixes the scale with `tr P = n`.
//!
//! Raw data make `N` badly conditioned: its data-driven part dwarfs the noise
//! bound by many orders of magnitude. When `N22 ≺ 0` the solver therefore
//! sees the congruent form obtained with `T = diag([I Â; 0 S], I)`,
//! `S = (−N22)^{-1/2}`, which maps `N` to `diag(R, −I)`:
//!
//! ```text
//! ⎡ P − βI − αR    0     BL + ÂP ⎤
//! ⎢     0         αI       S P   ⎥  ⪰ 0
//! ⎣ (BL + ÂP)ᵀ   P S        P    ⎦
//! ```
//!
//! with `Â` the center and `R` the radius of the consistency set. The two
//! forms have the same feasible set. Feasibility forces `N22 ≺ 0` anyway: a
//! singular `(2,2)` block would require `P v = 0`. The centered form is
//! asked to hold with a small margin so that returned points stay feasible
//! for the original matrix despite solver round-off.

use nalgebra::DMatrix;

use super::model::{Affine, ConeProblem, LinMat, NormTerm};
use crate::blockmat::{Partition, SparsityStructure};
use crate::datamodel::ConsistencySet;
use crate::error::{dim_err, Error, Result};
use crate::linalg;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LmiSettings {
    /// Lower bound on `P` (`P ⪰ p_min·I`), realizing `P ≻ 0`.
    pub p_min: f64,
    /// Lower bound on `β`, realizing `β > 0`.
    pub beta_min: f64,
    /// Fix the homogeneous scale with `tr P = n`.
    pub normalize_trace: bool,
    /// Use the centered congruent form when the consistency set is bounded.
    pub centered: bool,
    /// The centered form is constrained `⪰ margin·I`.
    pub margin: f64,
}

impl Default for LmiSettings {
    fn default() -> Self {
        Self {
            p_min: 1e-6,
            beta_min: 1e-6,
            normalize_trace: true,
            centered: true,
            margin: 1e-7,
        }
    }
}

/// Optional structure imposed on the decision variables.
#[derive(Debug, Clone, Default)]
pub enum LmiStructure {
    #[default]
    Free,
    /// Zero row-blocks of `L` where `σ_i1 = 0`; the partition has `ℓ = 1`.
    RowBlocks(SparsityStructure),
    /// `P` block-diagonal along `q` and `L ∈ M^σ`.
    BlockDiagonal(SparsityStructure),
    /// `P` fixed; the gain `K ∈ M^σ` is the variable and `L = K P`.
    FixedP { p: DMatrix<f64>, sigma: SparsityStructure },
    /// The gain is fixed; `P` is the variable and `L = K P`.
    FixedGain(DMatrix<f64>),
}

/// Per-block weights; `f64::INFINITY` marks a block forced to zero.
pub type BlockWeights = Vec<Vec<f64>>;

/// An assembled stabilization problem with handles to its variables.
#[derive(Debug, Clone)]
pub struct StabLmi {
    pub problem: ConeProblem,
    p: LinMat,
    l: LinMat,
    /// The gain itself when it is the decision variable.
    k: Option<LinMat>,
    alpha: usize,
    beta: usize,
    /// `N` is scaled by `n_scale` inside the problem; `α` is reported for the
    /// unscaled `N`.
    n_scale: f64,
}

impl StabLmi {
    pub fn p_value(&self, x: &[f64]) -> DMatrix<f64> {
        self.p.eval(x)
    }

    pub fn l_value(&self, x: &[f64]) -> DMatrix<f64> {
        self.l.eval(x)
    }

    /// `K` when the problem was built with a fixed `P` or a fixed gain.
    pub fn k_value(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        self.k.as_ref().map(|k| k.eval(x))
    }

    pub fn alpha_value(&self, x: &[f64]) -> f64 {
        x[self.alpha] * self.n_scale
    }

    pub fn beta_value(&self, x: &[f64]) -> f64 {
        x[self.beta]
    }

    pub fn k_expr(&self) -> Option<&LinMat> {
        self.k.as_ref()
    }

    pub fn l_expr(&self) -> &LinMat {
        &self.l
    }

    pub fn p_expr(&self) -> &LinMat {
        &self.p
    }

    pub fn beta_var(&self) -> usize {
        self.beta
    }

    pub fn alpha_var(&self) -> usize {
        self.alpha
    }

    pub fn state_dim(&self) -> usize {
        self.p.nrows()
    }

    /// Adds `Σ coeffs[r,c]·L[r,c] = 0`.
    pub fn add_l_equality(&mut self, name: &str, coeffs: &DMatrix<f64>) -> Result<()> {
        if coeffs.shape() != (self.l.nrows(), self.l.ncols()) {
            return dim_err("equality coefficients must match the shape of L");
        }
        let mut e = Affine::zero();
        for c in 0..coeffs.ncols() {
            for r in 0..coeffs.nrows() {
                e = e.add_scaled(self.l.get(r, c), coeffs[(r, c)]);
            }
        }
        self.problem.add_eq(name, e);
        Ok(())
    }
}

/// Dense evaluation of the LMI matrix at given values (used for
/// independent re-checks; does not involve the solver).
pub fn eq8_matrix(
    n_mat: &DMatrix<f64>,
    b: &DMatrix<f64>,
    p: &DMatrix<f64>,
    l: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
) -> DMatrix<f64> {
    let n = p.nrows();
    let bl = b * l;
    let z = DMatrix::zeros(n, n);
    let top = p - DMatrix::identity(n, n) * beta;
    let blt = bl.transpose();
    let mut m = linalg::block_matrix(&[&[&top, &z, &bl], &[&z, &z, p], &[&blt, p, p]]);
    let mut corner = m.view_mut((0, 0), (2 * n, 2 * n));
    corner -= n_mat * alpha;
    m
}

fn check_partition(part: &Partition, m: usize, n: usize) -> Result<()> {
    if part.m() != m || part.n() != n {
        return Err(Error::Structure(format!(
            "partition is {}x{}, gain is {}x{}",
            part.m(),
            part.n(),
            m,
            n
        )));
    }
    Ok(())
}

/// Builds the stabilization LMI for a consistency set and input matrix.
pub fn assemble_stab_lmi(
    cset: &ConsistencySet,
    b: &DMatrix<f64>,
    structure: &LmiStructure,
    settings: &LmiSettings,
) -> Result<StabLmi> {
    let n = cset.n();
    if b.nrows() != n || b.ncols() == 0 {
        return dim_err(format!("B must have {n} rows"));
    }
    let m = b.ncols();

    let mut problem = ConeProblem::new();
    let mut fixed_p = None;
    let mut p_blocks = None;
    let l_sigma = match structure {
        LmiStructure::Free => None,
        LmiStructure::RowBlocks(sigma) => {
            if sigma.partition().l() != 1 {
                return Err(Error::Structure(
                    "row-block structure needs a single column block".into(),
                ));
            }
            Some(sigma)
        }
        LmiStructure::BlockDiagonal(sigma) => {
            p_blocks = Some(sigma.partition().square_cols());
            Some(sigma)
        }
        LmiStructure::FixedP { p, sigma } => {
            if p.shape() != (n, n) {
                return dim_err(format!("fixed P must be {n}x{n}"));
            }
            let (ok, lo) = linalg::psd_check(&(p - DMatrix::identity(n, n) * settings.p_min), 0.0);
            if !ok || !linalg::is_symmetric(p, 1e-12) {
                return Err(Error::NotPositiveDefinite(format!(
                    "fixed P violates P >= p_min I (min eig {lo:.3e})"
                )));
            }
            fixed_p = Some(p);
            Some(sigma)
        }
        LmiStructure::FixedGain(k) => {
            if k.shape() != (m, n) {
                return dim_err(format!("fixed gain must be {m}x{n}"));
            }
            None
        }
    };
    let fixed_gain = match structure {
        LmiStructure::FixedGain(k) => Some(k),
        _ => None,
    };
    if let Some(sigma) = l_sigma {
        check_partition(sigma.partition(), m, n)?;
    }
    let allowed = |r: usize, c: usize| l_sigma.is_none_or(|s| s.entry_allowed(r, c));

    let (p, l, k) = if let Some(p_const) = fixed_p {
        let mut k = LinMat::zeros(m, n);
        for c in 0..n {
            for r in 0..m {
                if allowed(r, c) {
                    let v = problem.add_var(format!("K[{r},{c}]"));
                    k.set(r, c, Affine::var(v));
                }
            }
        }
        let l = k.right_mul(p_const);
        (LinMat::constant(p_const), l, Some(k))
    } else {
        let mut p = LinMat::zeros(n, n);
        for c in 0..n {
            for r in 0..=c {
                let same_block = p_blocks
                    .as_ref()
                    .is_none_or(|sq| sq.row_block_of(r) == sq.col_block_of(c));
                if same_block {
                    let v = problem.add_var(format!("P[{r},{c}]"));
                    p.set(r, c, Affine::var(v));
                    p.set(c, r, Affine::var(v));
                }
            }
        }
        match fixed_gain {
            Some(k) => {
                let l = p.left_mul(k);
                (p, l, Some(LinMat::constant(k)))
            }
            None => {
                let mut l = LinMat::zeros(m, n);
                for c in 0..n {
                    for r in 0..m {
                        if allowed(r, c) {
                            let v = problem.add_var(format!("L[{r},{c}]"));
                            l.set(r, c, Affine::var(v));
                        }
                    }
                }
                (p, l, None)
            }
        }
    };
    let p_is_variable = fixed_p.is_none();
    let alpha = problem.add_var("alpha");
    let beta = problem.add_var("beta");

    let zero = LinMat::zeros(n, n);
    let top_left = p.sub(&LinMat::scalar_identity(n, &Affine::var(beta)));
    let bl = l.left_mul(b);
    let centered = if settings.centered { centered_data(cset) } else { None };
    let (lmi, n_scale) = match centered {
        Some((center, radius, s)) => {
            let top_left = top_left.sub_scaled_const(&Affine::var(alpha), &radius);
            let mid = LinMat::scalar_identity(n, &Affine::var(alpha));
            let corner = bl.add(&p.left_mul(&center));
            let sp = p.left_mul(&s);
            let lmi = LinMat::blocks(&[
                &[&top_left, &zero, &corner],
                &[&zero, &mid, &sp],
                &[&corner.transpose(), &sp.transpose(), &p],
            ]);
            let lmi = lmi.sub(&LinMat::scalar_identity(3 * n, &Affine::constant(settings.margin)));
            (lmi, 1.0)
        }
        None => {
            // Σ is invariant under positive scaling of N; unit spectral norm
            // keeps α well scaled.
            let n_norm = linalg::sym_norm(cset.matrix());
            let n_scale = if n_norm > 0.0 { 1.0 / n_norm } else { 1.0 };
            let mut n_padded = DMatrix::zeros(3 * n, 3 * n);
            n_padded
                .view_mut((0, 0), (2 * n, 2 * n))
                .copy_from(&(cset.matrix() * n_scale));
            let blt = bl.transpose();
            let lmi = LinMat::blocks(&[&[&top_left, &zero, &bl], &[&zero, &zero, &p], &[&blt, &p, &p]])
                .sub_scaled_const(&Affine::var(alpha), &n_padded);
            (lmi, n_scale)
        }
    };
    problem.add_psd("stabilization", lmi);

    if p_is_variable {
        let p_shift = p.sub(&LinMat::scalar_identity(n, &Affine::constant(settings.p_min)));
        problem.add_psd("P >= p_min I", p_shift);
    }
    problem.add_nonneg("alpha >= 0", Affine::var(alpha));
    problem.add_nonneg(
        "beta >= beta_min",
        Affine::var(beta).sub(&Affine::constant(settings.beta_min)),
    );
    if settings.normalize_trace && p_is_variable {
        let tr = (0..n).fold(Affine::zero(), |acc, i| acc.add(p.get(i, i)));
        problem.add_eq("trace P = n", tr.sub(&Affine::constant(n as f64)));
    }

    Ok(StabLmi {
        problem,
        p,
        l,
        k,
        alpha,
        beta,
        n_scale,
    })
}

/// `(Â, R, (−N22)^{-1/2})` when `N22 ≺ 0`.
fn centered_data(cset: &ConsistencySet) -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let center = cset.center().ok()?;
    let radius = linalg::symmetrize(&cset.radius().ok()?);
    let eig = linalg::symmetrize(&-cset.n22()).symmetric_eigen();
    if eig.eigenvalues.iter().any(|&v| v <= 0.0) {
        return None;
    }
    let inv_sqrt = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    let s = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    Some((center, radius, linalg::symmetrize(&s)))
}

/// Sets the objective `Σ w_ij ‖(L P_fixed⁻¹)_ij‖_F` over finite weights and
/// forces `(L P_fixed⁻¹)_ij = 0` wherever the weight is infinite.
pub fn assemble_reweighted_objective(
    mut lmi: StabLmi,
    weights: &BlockWeights,
    p_fixed: &DMatrix<f64>,
    part: &Partition,
) -> Result<StabLmi> {
    let n = lmi.state_dim();
    if p_fixed.shape() != (n, n) {
        return dim_err("P_fixed must be n x n");
    }
    check_partition(part, lmi.l.nrows(), n)?;
    if weights.len() != part.k() || weights.iter().any(|r| r.len() != part.l()) {
        return Err(Error::Structure(format!("weights must be {}x{}", part.k(), part.l())));
    }
    if weights.iter().flatten().any(|w| w.is_nan() || *w < 0.0) {
        return Err(Error::InvalidArgument("weights must be nonnegative".into()));
    }
    let p_inv = linalg::spd_inverse(p_fixed)?;
    let y = lmi.l.right_mul(&p_inv);

    let mut norms = Vec::new();
    for (i, row) in weights.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            let entries: Vec<Affine> = part
                .col_range(j)
                .flat_map(|c| part.row_range(i).map(move |r| (r, c)))
                .map(|(r, c)| y.get(r, c).clone())
                .collect();
            if w.is_infinite() {
                for (idx, e) in entries.into_iter().enumerate() {
                    if !e.is_zero() {
                        lmi.problem.add_eq(format!("K[{i},{j}]#{idx} = 0"), e);
                    }
                }
            } else if w > 0.0 {
                norms.push(NormTerm { weight: w, entries });
            }
        }
    }
    lmi.problem.objective.norms = norms;
    Ok(lmi)
}
