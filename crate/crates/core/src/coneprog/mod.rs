//! Conic programs: a small modeling layer for affine matrix inequalities,
//! the stabilization LMI and its reweighted objective, and the solver
//! contract.
//!
//! Every solution is re-checked against the assembled constraints with
//! dense eigenvalue computations ([`ConeProblem::residuals`]) before anything
//! downstream trusts it.

mod clarabel_backend;
mod lmi;
mod model;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use lmi::{
    assemble_reweighted_objective, assemble_stab_lmi, eq8_matrix, BlockWeights, LmiSettings, LmiStructure, StabLmi,
};
pub use model::{Affine, ConeProblem, LinMat, NormTerm, Objective, PsdConstraint, Residuals, ScalarConstraint};

/// Feasibility tolerance promised for returned points.
pub const FEAS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Solved to full tolerance (feasible, and optimal when there is an objective).
    Optimal,
    Infeasible,
    /// The solver stopped at reduced accuracy; values are returned but must
    /// not be treated as a certificate without a residual check.
    Inaccurate,
    Failed,
}

impl SolveStatus {
    pub fn has_values(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Inaccurate)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSettings {
    pub max_iter: u32,
    pub tol_feas: f64,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub verbose: bool,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol_feas: 1e-9,
            tol_gap_abs: 1e-9,
            tol_gap_rel: 1e-9,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub values: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub solver_status: String,
    pub solve_time: Duration,
}

impl SolveResult {
    fn failed(msg: String, elapsed: Duration) -> Self {
        Self {
            status: SolveStatus::Failed,
            values: None,
            objective: None,
            iterations: 0,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            solver_status: msg,
            solve_time: elapsed,
        }
    }
}

/// Solves a cone problem with the configured backend.
///
/// Norm terms in the objective are lowered to second-order-cone epigraphs.
/// Deterministic for a fixed problem and settings; safe to call
/// concurrently on independent problems.
pub fn solve(problem: &ConeProblem, settings: &SolveSettings) -> SolveResult {
    clarabel_backend::solve(problem, settings)
}
