//! Lowering to Clarabel's standard form `Ax + s = b, s ∈ K`.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::model::{Affine, ConeProblem};
use super::{SolveResult, SolveSettings, SolveStatus};

/// Accumulates rows of `A` (as `−coef`) and `b` (as the constant).
struct Rows {
    triplets: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
}

impl Rows {
    fn push(&mut self, e: &Affine, scale: f64) {
        let row = self.b.len();
        for &(v, c) in e.terms() {
            self.triplets.push((row, v, -c * scale));
        }
        self.b.push(e.constant_part() * scale);
    }
}

fn csc(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> CscMatrix<f64> {
    triplets.sort_by_key(|&(r, c, _)| (c, r));
    let mut colptr = vec![0usize; ncols + 1];
    let mut rowval = Vec::with_capacity(triplets.len());
    let mut nzval = Vec::with_capacity(triplets.len());
    let mut last: Option<(usize, usize)> = None;
    for (r, c, v) in triplets {
        if last == Some((r, c)) {
            *nzval.last_mut().unwrap() += v;
            continue;
        }
        rowval.push(r);
        nzval.push(v);
        colptr[c + 1] += 1;
        last = Some((r, c));
    }
    for c in 0..ncols {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(nrows, ncols, colptr, rowval, nzval)
}

pub(super) fn solve(problem: &ConeProblem, settings: &SolveSettings) -> SolveResult {
    let start = Instant::now();
    let nvar = problem.num_vars();
    let nnorm = problem.objective.norms.len();
    let ntot = nvar + nnorm;

    let mut rows = Rows {
        triplets: Vec::new(),
        b: Vec::new(),
    };
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    if !problem.eq.is_empty() {
        for c in &problem.eq {
            rows.push(&c.expr, 1.0);
        }
        cones.push(SupportedConeT::ZeroConeT(problem.eq.len()));
    }
    if !problem.nonneg.is_empty() {
        for c in &problem.nonneg {
            rows.push(&c.expr, 1.0);
        }
        cones.push(SupportedConeT::NonnegativeConeT(problem.nonneg.len()));
    }
    // epigraph t_k ≥ ‖entries_k‖ as second-order cones
    for (k, term) in problem.objective.norms.iter().enumerate() {
        rows.push(&Affine::var(nvar + k), 1.0);
        for e in &term.entries {
            rows.push(e, 1.0);
        }
        cones.push(SupportedConeT::SecondOrderConeT(1 + term.entries.len()));
    }
    // upper triangle, column-wise, off-diagonals scaled by √2
    for c in &problem.psd {
        let d = c.expr.nrows();
        for col in 0..d {
            for row in 0..=col {
                let scale = if row == col { 1.0 } else { std::f64::consts::SQRT_2 };
                rows.push(c.expr.get(row, col), scale);
            }
        }
        cones.push(SupportedConeT::PSDTriangleConeT(d));
    }

    let mut q = vec![0.0; ntot];
    for &(v, c) in problem.objective.linear.terms() {
        q[v] += c;
    }
    for (k, term) in problem.objective.norms.iter().enumerate() {
        q[nvar + k] = term.weight;
    }

    let a = csc(rows.b.len(), ntot, rows.triplets);
    let p = CscMatrix::<f64>::zeros((ntot, ntot));

    let clarabel_settings = DefaultSettingsBuilder::default()
        .verbose(settings.verbose)
        .max_iter(settings.max_iter)
        .tol_feas(settings.tol_feas)
        .tol_gap_abs(settings.tol_gap_abs)
        .tol_gap_rel(settings.tol_gap_rel)
        .chordal_decomposition_enable(false)
        .build()
        .expect("valid clarabel settings");

    let mut solver = match DefaultSolver::new(&p, &q, &a, &rows.b, &cones, clarabel_settings) {
        Ok(s) => s,
        Err(e) => {
            return SolveResult::failed(format!("problem setup rejected: {e:?}"), start.elapsed());
        }
    };
    solver.solve();
    let sol = &solver.solution;

    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => SolveStatus::Inaccurate,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        _ => SolveStatus::Failed,
    };
    let values = match status {
        SolveStatus::Optimal | SolveStatus::Inaccurate => Some(sol.x[..nvar].to_vec()),
        _ => None,
    };
    let objective = values.as_ref().map(|x| problem.objective.eval(x));
    SolveResult {
        status,
        values,
        objective,
        iterations: sol.iterations as usize,
        primal_residual: sol.r_prim,
        dual_residual: sol.r_dual,
        solver_status: format!("{:?}", sol.status),
        solve_time: start.elapsed(),
    }
}
