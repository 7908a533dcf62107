//! Reweighted block-norm minimization for maximally block-sparse
//! stabilizing gains.
//!
//! Each step minimizes `f_t(L) = Σ w_ij ‖(L P_t⁻¹)_ij‖_F` over the
//! stabilization LMI, with `w_ij = 1/‖(K_t)_ij‖_F` on nonzero blocks of the
//! previous gain and `w_ij = ∞` (a hard zero) elsewhere. A fixed point of the
//! iteration is a minimum-cardinality gain; convergence itself is not
//! guaranteed, only detected.
//!
//! The objective acts on `L P_t⁻¹` while the new gain is `L P_{t+1}⁻¹`, so
//! blocks driven to zero by the solve come back as small nonzeros once `P`
//! moves. After each solve, hard-zero blocks and blocks below
//! `polish_tol·‖K‖_F` are snapped: with either the gain or `P` held, the
//! LMI is linear in the other, and a nearby point with those blocks exactly
//! zero is computed. A snapped certificate replaces the raw one only if it
//! passes the same checks.
//!
//! When a hard zero revives and cannot be snapped back, the step is redone
//! with `P` frozen at a re-centered value, where the weights act on `K`
//! directly. If that also yields no verified point, the iterate is kept,
//! which the convergence test then reports as a fixed point.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::blockmat::{self, Partition, SparsityStructure, DEFAULT_ZERO_TOL};
use crate::coneprog::{
    self, assemble_reweighted_objective, assemble_stab_lmi, Affine, BlockWeights, LmiSettings, LmiStructure, NormTerm,
    SolveStatus, StabLmi,
};
use crate::datamodel::ConsistencySet;
use crate::error::{Error, Result};
use crate::linalg;
use crate::synth::{self, extract_certificate, StabCertificate, SynthOutcome, SynthSettings};
use crate::verify::{self, VerificationReport};

/// Boundary samples used to re-check the final certificate of a run.
pub const FINAL_CHECK_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum WeightMode {
    /// `∞` on zero blocks, enforced as equality constraints.
    #[default]
    Hard,
    /// `1/(‖·‖ + ε)` everywhere; no hard zeros.
    Epsilon { eps: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparsifyOptions {
    pub max_iter: usize,
    pub conv_tol: f64,
    pub zero_tol: f64,
    pub weight_mode: WeightMode,
    /// Relative size below which blocks are snapped to zero; `0` disables.
    pub polish_tol: f64,
    /// Steps without a drop in block count after which only frozen-`P`
    /// steps are taken.
    pub patience: usize,
    /// Weight of `‖K − K_t‖_F` in the frozen-`P` step.
    pub frozen_prox: f64,
    pub synth: SynthSettings,
}

impl Default for SparsifyOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            conv_tol: 1e-6,
            zero_tol: DEFAULT_ZERO_TOL,
            weight_mode: WeightMode::Hard,
            polish_tol: 1e-4,
            patience: 10,
            frozen_prox: 1e-2,
            synth: SynthSettings::default(),
        }
    }
}

mod inf_weights {
    //! JSON has no infinity; `null` stands for an infinite weight.
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(w: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Option<f64>>> = w
            .iter()
            .map(|r| r.iter().map(|v| v.is_finite().then_some(*v)).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let rows: Vec<Vec<Option<f64>>> = Vec::deserialize(d)?;
        Ok(rows
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect())
            .collect())
    }
}

/// One iterate of the reweighting scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightState {
    pub t: usize,
    pub certificate: StabCertificate,
    /// Weights derived from this iterate's gain, used by the next step.
    #[serde(with = "inf_weights")]
    pub weights: BlockWeights,
    /// `f_{t−1}` at this iterate; absent for the initialization.
    pub f_value: Option<f64>,
    /// `bcard` of the previous gain, the bound `f_value` must respect.
    pub f_bound: Option<f64>,
    pub bcard: usize,
    /// Row-major block pattern of `K`.
    pub pattern: Vec<u8>,
    /// Whether small blocks of this iterate were snapped to zero.
    pub polished: bool,
    /// Whether the step revived a hard zero that could not be snapped back,
    /// so it was re-solved with `P` frozen at the previous iterate.
    #[serde(default)]
    pub frozen: bool,
    /// Steps since the block count last dropped.
    #[serde(default)]
    pub stalled: usize,
}

impl ReweightState {
    pub fn k(&self) -> &DMatrix<f64> {
        &self.certificate.k
    }

    fn new(
        t: usize,
        certificate: StabCertificate,
        part: &Partition,
        opts: &SparsifyOptions,
        f_value: Option<f64>,
        f_bound: Option<f64>,
    ) -> Result<Self> {
        let weights = reweight_mode(&certificate.k, part, opts.zero_tol, opts.weight_mode)?;
        let bcard = blockmat::bcard(&certificate.k, part, opts.zero_tol)?;
        let pattern = blockmat::structure_of(&certificate.k, part, opts.zero_tol)?.bits();
        Ok(Self {
            t,
            certificate,
            weights,
            f_value,
            f_bound,
            bcard,
            pattern,
            polished: false,
            frozen: false,
            stalled: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    FixedPoint,
    MaxIterations,
    SolverFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReweightTrace {
    pub states: Vec<ReweightState>,
    pub converged: bool,
    pub reason: StopReason,
    /// Message of the failed step when `reason` is `SolverFailure`.
    pub failure: Option<String>,
    /// Independent check of the final certificate.
    #[serde(default)]
    pub verification: Option<VerificationReport>,
}

impl ReweightTrace {
    pub fn last(&self) -> &ReweightState {
        self.states.last().expect("trace holds the initialization")
    }

    /// Number of reweighting steps taken.
    pub fn iterations(&self) -> usize {
        self.states.len() - 1
    }
}

/// `1/‖K_ij‖_F` on nonzero blocks, `∞` on blocks with norm ≤ `zero_tol`.
pub fn reweight(k: &DMatrix<f64>, part: &Partition, zero_tol: f64) -> Result<BlockWeights> {
    reweight_mode(k, part, zero_tol, WeightMode::Hard)
}

pub fn reweight_mode(k: &DMatrix<f64>, part: &Partition, zero_tol: f64, mode: WeightMode) -> Result<BlockWeights> {
    let norms = blockmat::block_norms(k, part)?;
    Ok(norms
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|v| match mode {
                    WeightMode::Hard if blockmat::phi(v, zero_tol) == 0 => f64::INFINITY,
                    WeightMode::Hard => 1.0 / v,
                    WeightMode::Epsilon { eps } => 1.0 / (v + eps),
                })
                .collect()
        })
        .collect())
}

/// `Σ w_ij ‖(L P⁻¹)_ij‖_F` over finite weights.
pub fn surrogate_value(l: &DMatrix<f64>, p: &DMatrix<f64>, weights: &BlockWeights, part: &Partition) -> Result<f64> {
    let y = l * linalg::spd_inverse(p)?;
    let norms = blockmat::block_norms(&y, part)?;
    Ok(norms
        .iter()
        .flatten()
        .zip(weights.iter().flatten())
        .filter(|(_, w)| w.is_finite())
        .map(|(v, w)| v * w)
        .sum())
}

/// Starting point from the centralized synthesis.
pub fn initialize(
    cset: &ConsistencySet,
    b: &DMatrix<f64>,
    part: &Partition,
    opts: &SparsifyOptions,
) -> Result<ReweightState> {
    part.check_matrix(&DMatrix::zeros(b.ncols(), cset.n()))?;
    match synth::synthesize_centralized(cset, b, &opts.synth)? {
        SynthOutcome::Feasible(cert) => ReweightState::new(0, cert, part, opts, None, None),
        SynthOutcome::Infeasible(status) => Err(Error::NotInformative(status)),
    }
}

/// One reweighted solve.
///
/// The solve's gain is kept when its hard zeros hold, it moves the gain, and
/// the block count dropped within the last `patience` steps. Otherwise the
/// step is redone with `P` frozen, and if that finds no improving verified
/// point the current iterate is kept.
pub fn step(
    cset: &ConsistencySet,
    b: &DMatrix<f64>,
    part: &Partition,
    state: &ReweightState,
    opts: &SparsifyOptions,
) -> Result<ReweightState> {
    let lmi = assemble_stab_lmi(cset, b, &LmiStructure::Free, &opts.synth.lmi)?;
    let lmi = assemble_reweighted_objective(lmi, &state.weights, &state.certificate.p, part)?;
    let result = coneprog::solve(&lmi.problem, &opts.synth.solver);
    let bound = match opts.weight_mode {
        WeightMode::Hard => state.bcard as f64,
        WeightMode::Epsilon { .. } => gain_surrogate(state.k(), &state.weights, part)?,
    };
    let current = gain_surrogate(state.k(), &state.weights, part)?;
    let raw = match result.status {
        SolveStatus::Infeasible => {
            return Err(Error::Solver(format!(
                "reweighted problem infeasible at step {} ({})",
                state.t + 1,
                result.solver_status
            )))
        }
        SolveStatus::Failed => None,
        SolveStatus::Optimal | SolveStatus::Inaccurate => {
            extract_certificate(&lmi, &result, cset, b, opts.synth.feas_tol).ok()
        }
    };
    if let Some(cert) = raw {
        let f = surrogate_value(&cert.l, &state.certificate.p, &state.weights, part)?;
        let (cert, polished) = match polish(cset, b, part, &cert, &state.certificate.p, &state.weights, opts)? {
            Some(snapped) => (snapped, true),
            None => (cert, false),
        };
        let active = state.stalled < opts.patience;
        if active && !revives_hard_zero(&cert.k, &state.weights, part, opts.zero_tol)? {
            let mut next = ReweightState::new(state.t + 1, cert, part, opts, Some(f), Some(bound))?;
            next.polished = polished;
            next.stalled = stalled_after(state, &next);
            if !is_fixed_point(state, &next, opts.conv_tol) {
                return Ok(next);
            }
        }
    }
    let certificate = match frozen_step(cset, b, part, state, opts)? {
        Some(c) if gain_surrogate(&c.k, &state.weights, part)? <= current => c,
        _ => state.certificate.clone(),
    };
    let f = gain_surrogate(&certificate.k, &state.weights, part)?;
    let mut next = ReweightState::new(state.t + 1, certificate, part, opts, Some(f), Some(bound))?;
    next.frozen = true;
    next.stalled = stalled_after(state, &next);
    Ok(next)
}

fn stalled_after(prev: &ReweightState, next: &ReweightState) -> usize {
    if next.bcard < prev.bcard {
        0
    } else {
        prev.stalled + 1
    }
}

/// `Σ w_ij ‖K_ij‖_F` over finite weights.
fn gain_surrogate(k: &DMatrix<f64>, weights: &BlockWeights, part: &Partition) -> Result<f64> {
    surrogate_value(k, &DMatrix::identity(k.ncols(), k.ncols()), weights, part)
}

/// Snaps to exact zeros every block that carried an infinite weight or
/// falls below `polish_tol·‖K‖_F`. Returns `None` when there is nothing to
/// snap or the snapped problem has no verified solution.
///
/// Candidates are tried in order: the snapped `L P_prev⁻¹` and the snapped
/// `K`, each with `P` re-solved, and finally `K` re-solved with `P` held.
pub fn polish(
    cset: &ConsistencySet,
    b: &DMatrix<f64>,
    part: &Partition,
    cert: &StabCertificate,
    p_prev: &DMatrix<f64>,
    weights: &BlockWeights,
    opts: &SparsifyOptions,
) -> Result<Option<StabCertificate>> {
    if opts.polish_tol <= 0.0 {
        return Ok(None);
    }
    let k = &cert.k;
    let Some(sigma) = snap_structure(k, part, weights, opts)? else {
        return Ok(None);
    };

    let shaped = &cert.l * linalg::spd_inverse(p_prev)?;
    let mut gains = Vec::new();
    if let Some(s) = snap_structure(&shaped, part, weights, opts)? {
        gains.push(blockmat::project(&shaped, &s)?);
    }
    gains.push(blockmat::project(k, &sigma)?);
    for gain in gains {
        let mut lmi = assemble_stab_lmi(cset, b, &LmiStructure::FixedGain(gain), &auxiliary_settings(opts))?;
        let n = cert.p.nrows();
        let entries = (0..n)
            .flat_map(|c| (0..=c).map(move |r| (r, c)))
            .map(|(r, c)| lmi.p_expr().get(r, c).sub(&Affine::constant(cert.p[(r, c)])))
            .collect();
        lmi.problem.objective.norms = vec![NormTerm { weight: 1.0, entries }];
        if let Some(c) = solve_and_extract(&lmi, cset, b, opts) {
            return Ok(Some(c));
        }
    }

    let structure = LmiStructure::FixedP {
        p: cert.p.clone(),
        sigma,
    };
    let mut lmi = assemble_stab_lmi(cset, b, &structure, &auxiliary_settings(opts))?;
    let k_expr = lmi.k_expr().expect("fixed-P problem has a gain variable").clone();
    let entries = (0..k.ncols())
        .flat_map(|c| (0..k.nrows()).map(move |r| (r, c)))
        .filter(|&(r, c)| !k_expr.get(r, c).is_zero())
        .map(|(r, c)| k_expr.get(r, c).sub(&Affine::constant(k[(r, c)])))
        .collect();
    lmi.problem.objective.norms = vec![NormTerm { weight: 1.0, entries }];
    Ok(solve_and_extract(&lmi, cset, b, opts))
}

/// Pattern keeping the blocks of `k` that survive snapping, or `None` when
/// snapping would not change the block count.
fn snap_structure(
    k: &DMatrix<f64>,
    part: &Partition,
    weights: &BlockWeights,
    opts: &SparsifyOptions,
) -> Result<Option<SparsityStructure>> {
    let cutoff = opts.polish_tol * k.norm();
    let norms = blockmat::block_norms(k, part)?;
    let keep: Vec<Vec<bool>> = (0..part.k())
        .map(|i| {
            (0..part.l())
                .map(|j| norms[i][j] > cutoff && !weights[i][j].is_infinite())
                .collect()
        })
        .collect();
    let pending = (0..part.k())
        .flat_map(|i| (0..part.l()).map(move |j| (i, j)))
        .any(|(i, j)| !keep[i][j] && blockmat::phi(norms[i][j], opts.zero_tol) == 1);
    if !pending {
        return Ok(None);
    }
    Ok(Some(SparsityStructure::new(part.clone(), keep)?))
}

/// The reweighted solve with `P` frozen, so the weights act on `K` itself
/// and hard zeros hold exactly. `P` is first moved to the most robust
/// choice for the current gain, which keeps the current gain feasible.
/// `None` when no verified point was found.
fn frozen_step(
    cset: &ConsistencySet,
    b: &DMatrix<f64>,
    part: &Partition,
    state: &ReweightState,
    opts: &SparsifyOptions,
) -> Result<Option<StabCertificate>> {
    let mut recenter = assemble_stab_lmi(cset, b, &LmiStructure::FixedGain(state.k().clone()), &opts.synth.lmi)?;
    recenter.problem.objective.linear = Affine::var(recenter.beta_var()).scaled(-1.0);
    let Some(centered) = solve_and_extract(&recenter, cset, b, opts) else {
        return Ok(None);
    };
    let p_frozen = centered.p;
    // Halfway to the re-centered β: the current gain stays strictly feasible.
    let settings = LmiSettings {
        beta_min: 0.5 * (opts.synth.lmi.beta_min + centered.beta.max(opts.synth.lmi.beta_min)),
        ..opts.synth.lmi.clone()
    };

    let keep = state
        .weights
        .iter()
        .map(|r| r.iter().map(|w| w.is_finite()).collect())
        .collect();
    let structure = LmiStructure::FixedP {
        p: p_frozen.clone(),
        sigma: SparsityStructure::new(part.clone(), keep)?,
    };
    let mut lmi = assemble_stab_lmi(cset, b, &structure, &settings)?;
    let k_expr = lmi.k_expr().expect("fixed-P problem has a gain variable").clone();
    for (i, row) in state.weights.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if !w.is_finite() || w == 0.0 {
                continue;
            }
            let entries = part
                .col_range(j)
                .flat_map(|c| part.row_range(i).map(move |r| (r, c)))
                .map(|(r, c)| k_expr.get(r, c).clone())
                .collect();
            lmi.problem.objective.norms.push(NormTerm { weight: w, entries });
        }
    }
    if opts.frozen_prox > 0.0 {
        let k = state.k();
        let entries = (0..k.ncols())
            .flat_map(|c| (0..k.nrows()).map(move |r| (r, c)))
            .filter(|&(r, c)| !k_expr.get(r, c).is_zero())
            .map(|(r, c)| k_expr.get(r, c).sub(&Affine::constant(k[(r, c)])))
            .collect();
        lmi.problem.objective.norms.push(NormTerm {
            weight: opts.frozen_prox,
            entries,
        });
    }
    let Some(cert) = solve_and_extract(&lmi, cset, b, opts) else {
        return Ok(None);
    };
    Ok(Some(
        polish(cset, b, part, &cert, &p_frozen, &state.weights, opts)?.unwrap_or(cert),
    ))
}

/// Polish solves land on degenerate faces; a doubled floor on `β` keeps
/// small solver overshoot inside the certified range.
fn auxiliary_settings(opts: &SparsifyOptions) -> LmiSettings {
    LmiSettings {
        beta_min: 2.0 * opts.synth.lmi.beta_min,
        ..opts.synth.lmi.clone()
    }
}

fn revives_hard_zero(k: &DMatrix<f64>, weights: &BlockWeights, part: &Partition, zero_tol: f64) -> Result<bool> {
    let norms = blockmat::block_norms(k, part)?;
    Ok(norms
        .iter()
        .flatten()
        .zip(weights.iter().flatten())
        .any(|(&v, w)| w.is_infinite() && blockmat::phi(v, zero_tol) == 1))
}

fn solve_and_extract(
    lmi: &StabLmi,
    cset: &ConsistencySet,
    b: &DMatrix<f64>,
    opts: &SparsifyOptions,
) -> Option<StabCertificate> {
    let result = coneprog::solve(&lmi.problem, &opts.synth.solver);
    if !result.status.has_values() {
        return None;
    }
    extract_certificate(lmi, &result, cset, b, opts.synth.feas_tol).ok()
}

fn is_fixed_point(prev: &ReweightState, next: &ReweightState, conv_tol: f64) -> bool {
    let dk = (next.k() - prev.k()).norm();
    dk <= conv_tol * (1.0 + prev.k().norm()) && prev.pattern == next.pattern
}

/// Iterates until the gain and its pattern stop changing or `max_iter`
/// steps have run.
pub fn run(cset: &ConsistencySet, b: &DMatrix<f64>, part: &Partition, opts: &SparsifyOptions) -> Result<ReweightTrace> {
    let init = initialize(cset, b, part, opts)?;
    Ok(run_from(cset, b, part, init, opts))
}

pub fn run_from(
    cset: &ConsistencySet,
    b: &DMatrix<f64>,
    part: &Partition,
    init: ReweightState,
    opts: &SparsifyOptions,
) -> ReweightTrace {
    let mut states = vec![init];
    let mut outcome = (false, StopReason::MaxIterations, None);
    for _ in 0..opts.max_iter {
        let prev = states.last().expect("nonempty");
        match step(cset, b, part, prev, opts) {
            Ok(next) => {
                let done = is_fixed_point(prev, &next, opts.conv_tol);
                states.push(next);
                if done {
                    outcome = (true, StopReason::FixedPoint, None);
                    break;
                }
            }
            Err(e) => {
                outcome = (false, StopReason::SolverFailure, Some(e.to_string()));
                break;
            }
        }
    }
    let last = &states.last().expect("nonempty").certificate;
    let verification = verify::verify_gain(last, cset, b, None, FINAL_CHECK_SAMPLES, 0);
    ReweightTrace {
        states,
        converged: outcome.0,
        reason: outcome.1,
        failure: outcome.2,
        verification: Some(verification),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{build_n, NoiseModel, TrajectoryData};
    use crate::simulate::three_agent_fixture;
    use nalgebra::DVector;

    /// `A = diag(1.5, −1.2)`, `B = I`, exact data.
    fn decoupled_pair() -> (ConsistencySet, DMatrix<f64>, Partition) {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.5, -1.2]));
        let b = DMatrix::identity(2, 2);
        let u = DMatrix::from_row_slice(2, 3, &[0.3, -0.7, 0.2, 0.5, 0.1, -0.4]);
        let mut x = DMatrix::zeros(2, 4);
        x.set_column(0, &DVector::from_vec(vec![1.0, -0.5]));
        for t in 0..3 {
            let next = &a * x.column(t) + &b * u.column(t);
            x.set_column(t + 1, &next);
        }
        let data = TrajectoryData::new(x, u).unwrap();
        let model = NoiseModel::from_energy_bound(&DMatrix::zeros(2, 2), 3).unwrap();
        let cs = build_n(&data, &b, &model).unwrap();
        (cs, b, Partition::new(vec![1, 1], vec![1, 1]).unwrap())
    }

    #[test]
    fn unit_blocks_get_unit_weights() {
        let part = Partition::uniform(2, 2, 1, 2).unwrap();
        let k = DMatrix::from_row_slice(2, 4, &[0.6, 0.8, 1.0, 0.0, 0.0, -1.0, 0.8, -0.6]);
        let w = reweight(&k, &part, DEFAULT_ZERO_TOL).unwrap();
        for v in w.iter().flatten() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn published_sparse_gain_has_five_hard_zeros() {
        let fx = three_agent_fixture();
        let w = reweight(&fx.sparse_gain(), &fx.partition(), DEFAULT_ZERO_TOL).unwrap();
        assert_eq!(w.iter().flatten().filter(|v| v.is_infinite()).count(), 5);
        assert!((w[1][1] - 1.0 / 0.19742).abs() < 1e-3);
    }

    #[test]
    fn zero_gain_is_all_hard_zeros() {
        let part = Partition::uniform(3, 3, 1, 2).unwrap();
        let w = reweight(&DMatrix::zeros(3, 6), &part, DEFAULT_ZERO_TOL).unwrap();
        assert!(w.iter().flatten().all(|v| v.is_infinite()));
    }

    #[test]
    fn epsilon_mode_stays_finite() {
        let part = Partition::uniform(3, 3, 1, 2).unwrap();
        let w = reweight_mode(
            &DMatrix::zeros(3, 6),
            &part,
            DEFAULT_ZERO_TOL,
            WeightMode::Epsilon { eps: 1e-6 },
        )
        .unwrap();
        assert!(w.iter().flatten().all(|v| (v - 1e6).abs() < 1e-3));
    }

    #[test]
    fn weights_serialize_infinity_as_null() {
        let (cs, b, part) = decoupled_pair();
        let state = initialize(&cs, &b, &part, &SparsifyOptions::default()).unwrap();
        let mut state = state;
        state.weights[0][1] = f64::INFINITY;
        let json = serde_json::to_string(&state).unwrap();
        assert!(json.contains("null"));
        let back: ReweightState = serde_json::from_str(&json).unwrap();
        assert!(back.weights[0][1].is_infinite());
        assert_eq!(back.weights[0][0], state.weights[0][0]);
    }

    #[test]
    fn surrogate_of_identity_p_is_weighted_block_norms() {
        let part = Partition::new(vec![1, 1], vec![1, 1]).unwrap();
        let l = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, -4.0, 2.0]);
        let w = vec![vec![1.0, f64::INFINITY], vec![0.5, 2.0]];
        let f = surrogate_value(&l, &DMatrix::identity(2, 2), &w, &part).unwrap();
        assert!((f - (3.0 + 2.0 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_iterations_keep_only_the_start() {
        let (cs, b, part) = decoupled_pair();
        let opts = SparsifyOptions {
            max_iter: 0,
            ..Default::default()
        };
        let tr = run(&cs, &b, &part, &opts).unwrap();
        assert_eq!(tr.states.len(), 1);
        assert!(!tr.converged);
        assert_eq!(tr.reason, StopReason::MaxIterations);
    }

    #[test]
    fn decoupled_pair_converges_to_diagonal() {
        let (cs, b, part) = decoupled_pair();
        let tr = run(&cs, &b, &part, &SparsifyOptions::default()).unwrap();
        assert!(tr.converged, "{:?}", tr.failure);
        let last = tr.last();
        assert_eq!(last.pattern, vec![1, 0, 0, 1]);
        let cl = DMatrix::from_diagonal(&DVector::from_vec(vec![1.5, -1.2])) + &b * last.k();
        assert!(linalg::spectral_radius(&cl) < 1.0);
        assert!(tr.verification.as_ref().unwrap().pass);

        for w in tr.states.windows(2) {
            let (prev, next) = (&w[0], &w[1]);
            assert!(next.f_value.unwrap() <= next.f_bound.unwrap() + 1e-6);
            let norms = blockmat::block_norms(next.k(), &part).unwrap();
            for (v, wt) in norms.iter().flatten().zip(prev.weights.iter().flatten()) {
                if wt.is_infinite() {
                    assert!(*v <= DEFAULT_ZERO_TOL, "hard zero revived at t={}", next.t);
                }
            }
        }
    }

    #[test]
    fn fixed_point_start_stops_quickly() {
        let (cs, b, part) = decoupled_pair();
        let opts = SparsifyOptions::default();
        let tr = run(&cs, &b, &part, &opts).unwrap();
        let mut start = tr.last().clone();
        start.t = 0;
        let again = run_from(&cs, &b, &part, start, &opts);
        assert!(again.converged);
        assert!(again.iterations() <= 2, "{}", again.iterations());
        assert_eq!(again.last().pattern, tr.last().pattern);
    }

    #[test]
    fn uninformative_data_is_reported() {
        // b = 0 and a = 2: no gain can stabilize
        let x = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 4.0]);
        let data = TrajectoryData::new(x, DMatrix::from_row_slice(1, 2, &[0.4, -0.2])).unwrap();
        let model = NoiseModel::from_energy_bound(&DMatrix::from_element(1, 1, 1e-4), 2).unwrap();
        let b = DMatrix::zeros(1, 1);
        let cs = build_n(&data, &b, &model).unwrap();
        let part = Partition::new(vec![1], vec![1]).unwrap();
        let err = run(&cs, &b, &part, &SparsifyOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NotInformative(_)), "{err:?}");
    }

    #[test]
    fn bad_weight_grid_is_rejected() {
        let (cs, b, part) = decoupled_pair();
        let mut state = initialize(&cs, &b, &part, &SparsifyOptions::default()).unwrap();
        state.weights.pop();
        assert!(step(&cs, &b, &part, &state, &SparsifyOptions::default()).is_err());
    }
}
