//! Stabilizing gain synthesis: centralized, row-structured,
//! block-diagonal-Lyapunov structured, and exhaustive minimal-pattern search.
//!
//! Only the two structure classes with a linear reformulation are offered as
//! decision procedures. For a general pattern with a free `P` the constraint
//! `L P⁻¹ ∈ M^σ` is not linear; [`exhaustive_min_bcard`] scans patterns
//! through one of the two linear classes instead.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blockmat::{Partition, SparsityStructure};
use crate::coneprog::{
    self, assemble_stab_lmi, eq8_matrix, LmiSettings, LmiStructure, SolveSettings, SolveStatus, StabLmi, FEAS_TOL,
};
use crate::datamodel::ConsistencySet;
use crate::error::{Error, Result};
use crate::linalg;

/// `(P, L, α, β)` satisfying the stabilization LMI, with `K = L P⁻¹`.
/// `V(x) = xᵀ P⁻¹ x` is a common Lyapunov function for the consistency set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabCertificate {
    pub p: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub k: DMatrix<f64>,
    /// Minimum eigenvalue of the re-evaluated LMI matrix.
    pub residual_min_eig: f64,
    pub solver_status: SolveStatus,
}

impl StabCertificate {
    /// Builds a certificate from raw values and re-evaluates the LMI.
    pub fn from_parts(
        cset: &ConsistencySet,
        b: &DMatrix<f64>,
        p: DMatrix<f64>,
        l: DMatrix<f64>,
        alpha: f64,
        beta: f64,
        solver_status: SolveStatus,
    ) -> Result<Self> {
        let p = linalg::symmetrize(&p);
        let k = &l * linalg::spd_inverse(&p)?;
        let residual_min_eig = linalg::min_eig_sym(&eq8_matrix(cset.matrix(), b, &p, &l, alpha, beta));
        Ok(Self {
            p,
            l,
            alpha,
            beta,
            k,
            residual_min_eig,
            solver_status,
        })
    }

    /// Builds a certificate from a gain and `P`, with `L = K P`. Zero blocks
    /// of `K` stay exactly zero.
    pub fn from_gain(
        cset: &ConsistencySet,
        b: &DMatrix<f64>,
        p: DMatrix<f64>,
        k: DMatrix<f64>,
        alpha: f64,
        beta: f64,
        solver_status: SolveStatus,
    ) -> Result<Self> {
        let p = linalg::symmetrize(&p);
        linalg::spd_inverse(&p)?;
        let l = &k * &p;
        let residual_min_eig = linalg::min_eig_sym(&eq8_matrix(cset.matrix(), b, &p, &l, alpha, beta));
        Ok(Self {
            p,
            l,
            alpha,
            beta,
            k,
            residual_min_eig,
            solver_status,
        })
    }

    /// Lyapunov function `xᵀ P⁻¹ x`.
    pub fn lyapunov(&self, x: &[f64]) -> Result<f64> {
        let v = nalgebra::DVector::from_column_slice(x);
        let p_inv = linalg::spd_inverse(&self.p)?;
        Ok((v.transpose() * p_inv * &v)[(0, 0)])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSettings {
    pub lmi: LmiSettings,
    pub solver: SolveSettings,
    /// Admissible negative LMI residual, relative to `1 + ‖M‖`.
    pub feas_tol: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            lmi: LmiSettings::default(),
            solver: SolveSettings::default(),
            feas_tol: FEAS_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthOutcome {
    Feasible(StabCertificate),
    /// The solver certified infeasibility; carries its raw status string.
    Infeasible(String),
}

impl SynthOutcome {
    pub fn certificate(&self) -> Option<&StabCertificate> {
        match self {
            SynthOutcome::Feasible(c) => Some(c),
            SynthOutcome::Infeasible(_) => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, SynthOutcome::Feasible(_))
    }
}

/// Whether the LMI residual is acceptable for a certificate (scale-aware).
pub fn residual_ok(cset: &ConsistencySet, b: &DMatrix<f64>, cert: &StabCertificate, tol: f64) -> bool {
    let m = eq8_matrix(cset.matrix(), b, &cert.p, &cert.l, cert.alpha, cert.beta);
    let scale = 1.0 + linalg::sym_norm(&m);
    cert.residual_min_eig >= -tol * scale
}

/// Checks the solver's point independently and packages it.
///
/// An `Inaccurate` solve is accepted only when the dense re-check passes;
/// the certificate keeps the status so callers can surface it.
pub(crate) fn extract_certificate(
    lmi: &StabLmi,
    result: &coneprog::SolveResult,
    cset: &ConsistencySet,
    b: &DMatrix<f64>,
    feas_tol: f64,
) -> Result<StabCertificate> {
    let x = result
        .values
        .as_ref()
        .ok_or_else(|| Error::Solver(format!("no values ({})", result.solver_status)))?;
    let res = lmi.problem.residuals(x);
    if !res.within(feas_tol) {
        return Err(Error::Solver(format!(
            "solver point violates constraints (status {}, worst PSD {:.3e}, eq {:.3e}, nonneg {:.3e})",
            result.solver_status,
            res.worst_psd(),
            res.eq_max_abs,
            res.nonneg_min
        )));
    }
    let cert = match lmi.k_value(x) {
        Some(k) => StabCertificate::from_gain(
            cset,
            b,
            lmi.p_value(x),
            k,
            lmi.alpha_value(x),
            lmi.beta_value(x),
            result.status,
        )?,
        None => StabCertificate::from_parts(
            cset,
            b,
            lmi.p_value(x),
            lmi.l_value(x),
            lmi.alpha_value(x),
            lmi.beta_value(x),
            result.status,
        )?,
    };
    if !residual_ok(cset, b, &cert, feas_tol) {
        return Err(Error::Solver(format!(
            "certificate fails the LMI re-check (min eig {:.3e})",
            cert.residual_min_eig
        )));
    }
    Ok(cert)
}

fn synthesize(
    cset: &ConsistencySet,
    b: &DMatrix<f64>,
    structure: &LmiStructure,
    settings: &SynthSettings,
) -> Result<SynthOutcome> {
    let lmi = assemble_stab_lmi(cset, b, structure, &settings.lmi)?;
    let result = coneprog::solve(&lmi.problem, &settings.solver);
    match result.status {
        SolveStatus::Infeasible => Ok(SynthOutcome::Infeasible(result.solver_status)),
        SolveStatus::Failed => Err(Error::Solver(result.solver_status)),
        SolveStatus::Optimal | SolveStatus::Inaccurate => {
            extract_certificate(&lmi, &result, cset, b, settings.feas_tol).map(SynthOutcome::Feasible)
        }
    }
}

/// Decides informativity for quadratic stabilization and returns a gain
/// stabilizing every system in the consistency set when it holds.
pub fn synthesize_centralized(
    cset: &ConsistencySet,
    b: &DMatrix<f64>,
    settings: &SynthSettings,
) -> Result<SynthOutcome> {
    synthesize(cset, b, &LmiStructure::Free, settings)
}

/// Gain whose row-blocks vanish where `σ_i1 = 0`; the partition must have a
/// single column block. Zero rows of `L` are exactly zero rows of `L P⁻¹`,
/// so infeasibility rules out any such structured gain.
pub fn synthesize_row_structured(
    cset: &ConsistencySet,
    b: &DMatrix<f64>,
    sigma: &SparsityStructure,
    settings: &SynthSettings,
) -> Result<SynthOutcome> {
    synthesize(cset, b, &LmiStructure::RowBlocks(sigma.clone()), settings)
}

/// Gain in `M^σ` with a Lyapunov matrix block-diagonal along the column
/// partition. Complete only within the block-diagonal `P` class.
pub fn synthesize_blockdiag(
    cset: &ConsistencySet,
    b: &DMatrix<f64>,
    sigma: &SparsityStructure,
    settings: &SynthSettings,
) -> Result<SynthOutcome> {
    synthesize(cset, b, &LmiStructure::BlockDiagonal(sigma.clone()), settings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExhaustiveMode {
    RowStructured,
    Blockdiag,
}

/// Largest pattern size scanned without `force`.
pub const MAX_PATTERN_BITS: usize = 20;

#[derive(Debug, Clone)]
pub struct ExhaustiveOptions {
    pub mode: ExhaustiveMode,
    /// Maximum number of patterns to test.
    pub budget: Option<usize>,
    /// Only scan patterns with at most this many ones.
    pub max_ones: Option<usize>,
    /// Lift the pattern-size guard.
    pub force: bool,
    pub synth: SynthSettings,
}

impl ExhaustiveOptions {
    pub fn new(mode: ExhaustiveMode) -> Self {
        Self {
            mode,
            budget: None,
            max_ones: None,
            force: false,
            synth: SynthSettings::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ExhaustiveOutcome {
    Found {
        sigma: SparsityStructure,
        certificate: StabCertificate,
        enumerated: usize,
        solver_failures: usize,
    },
    /// Every admissible pattern was tested and none is feasible.
    AllInfeasible { enumerated: usize, solver_failures: usize },
    /// The budget ran out before a feasible pattern was found.
    Exhausted { enumerated: usize, solver_failures: usize },
}

impl ExhaustiveOutcome {
    pub fn enumerated(&self) -> usize {
        match self {
            ExhaustiveOutcome::Found { enumerated, .. }
            | ExhaustiveOutcome::AllInfeasible { enumerated, .. }
            | ExhaustiveOutcome::Exhausted { enumerated, .. } => *enumerated,
        }
    }
}

/// Patterns of exactly `ones` ones over `bits` positions, ascending
/// lexicographically on the flattened 0/1 vector.
fn patterns_with_ones(bits: usize, ones: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    // choose positions for the ones from the right so the vectors come out ascending
    let mut pick = |positions: &[usize]| {
        let mut v = vec![0u8; bits];
        for &p in positions {
            v[p] = 1;
        }
        out.push(v);
    };
    fn rec(start: usize, bits: usize, left: usize, acc: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if left == 0 {
            f(acc);
            return;
        }
        for p in start..=bits - left {
            acc.push(p);
            rec(p + 1, bits, left - 1, acc, f);
            acc.pop();
        }
    }
    if ones <= bits {
        rec(0, bits, ones, &mut Vec::new(), &mut pick);
    }
    out.sort();
    out
}

/// All patterns in scan order: ones-count ascending, then lexicographic on
/// the row-major flattening.
pub fn enumerate_patterns(part: &Partition, max_ones: Option<usize>) -> Vec<SparsityStructure> {
    let bits = part.k() * part.l();
    let top = max_ones.unwrap_or(bits).min(bits);
    (0..=top)
        .flat_map(|c| patterns_with_ones(bits, c))
        .map(|v| SparsityStructure::from_bits(part.clone(), &v).expect("bit count matches"))
        .collect()
}

/// Finds a minimum-cardinality pattern whose structured synthesis is
/// feasible. Patterns are tested in parallel in ordered chunks; the first
/// feasible pattern in scan order wins, independent of thread count.
pub fn exhaustive_min_bcard(
    cset: &ConsistencySet,
    b: &DMatrix<f64>,
    part: &Partition,
    opts: &ExhaustiveOptions,
) -> Result<ExhaustiveOutcome> {
    let bits = part.k() * part.l();
    if bits > MAX_PATTERN_BITS && !opts.force {
        return Err(Error::InvalidArgument(format!(
            "{bits} pattern bits exceed the limit of {MAX_PATTERN_BITS}; pass force to scan anyway"
        )));
    }
    if opts.mode == ExhaustiveMode::RowStructured && part.l() != 1 {
        return Err(Error::Structure(
            "row-structured search needs a single column block".into(),
        ));
    }
    if part.m() != b.ncols() || part.n() != cset.n() {
        return Err(Error::Structure("partition does not match the gain dimensions".into()));
    }
    let oracle = |sigma: &SparsityStructure| match opts.mode {
        ExhaustiveMode::RowStructured => synthesize_row_structured(cset, b, sigma, &opts.synth),
        ExhaustiveMode::Blockdiag => synthesize_blockdiag(cset, b, sigma, &opts.synth),
    };

    let patterns = enumerate_patterns(part, opts.max_ones);
    let budget = opts.budget.unwrap_or(usize::MAX);
    let chunk = (2 * rayon::current_num_threads()).max(1);
    let mut enumerated = 0usize;
    let mut solver_failures = 0usize;
    let mut pos = 0usize;
    while pos < patterns.len() {
        if enumerated >= budget {
            return Ok(ExhaustiveOutcome::Exhausted {
                enumerated,
                solver_failures,
            });
        }
        let end = (pos + chunk).min(patterns.len()).min(pos + (budget - enumerated));
        let results: Vec<Result<SynthOutcome>> = patterns[pos..end].par_iter().map(oracle).collect();
        for (offset, r) in results.into_iter().enumerate() {
            enumerated += 1;
            match r {
                Ok(SynthOutcome::Feasible(certificate)) => {
                    return Ok(ExhaustiveOutcome::Found {
                        sigma: patterns[pos + offset].clone(),
                        certificate,
                        enumerated,
                        solver_failures,
                    });
                }
                Ok(SynthOutcome::Infeasible(_)) => {}
                Err(Error::Solver(_)) => solver_failures += 1,
                Err(e) => return Err(e),
            }
        }
        pos = end;
    }
    Ok(ExhaustiveOutcome::AllInfeasible {
        enumerated,
        solver_failures,
    })
}
