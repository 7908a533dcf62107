//! End-to-end checks on the three-agent benchmark and on generated
//! instances, one function per acceptance criterion.
//!
//! The expensive pieces (the benchmark sparsification and the fuzz corpus)
//! are produced by separate functions so their traces can be shared between
//! the soundness, sparsity and surrogate-bound checks.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::blockmat::{self, Partition, SparsityStructure, DEFAULT_ZERO_TOL};
use crate::datamodel::{build_n, noise_satisfies, ConsistencySet, NoiseModel};
use crate::error::Result;
use crate::linalg;
use crate::simulate::{
    fixture_discrepancy, random_network_system, rollout, sample_noise_within, three_agent_fixture, SystemModel,
    ThreeAgentFixture,
};
use crate::sparsify::{self, ReweightTrace, SparsifyOptions};
use crate::synth::{
    exhaustive_min_bcard, synthesize_centralized, ExhaustiveMode, ExhaustiveOptions, ExhaustiveOutcome,
    StabCertificate, SynthOutcome, SynthSettings,
};
use crate::verify::{verify_gain, VerificationReport, RESIDUAL_TOL};

/// Verdict for one criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Criterion {
    fn new(id: u8, name: &str, pass: bool, detail: String, started: Instant) -> Self {
        Self {
            id,
            name: name.to_string(),
            pass,
            detail,
            seconds: started.elapsed().as_secs_f64(),
        }
    }

    /// `[PASS] 3 sparsification: ...`
    pub fn line(&self) -> String {
        format!(
            "[{}] {} {}: {} ({:.2}s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOptions {
    pub seed: u64,
    /// Options for every sparsification run; `max_iter` is the iteration
    /// budget of the benchmark criterion.
    pub sparsify: SparsifyOptions,
    pub boundary_samples: usize,
    pub fuzz_systems: usize,
    /// Iteration budget of the tiny-instance runs.
    pub oracle_max_iter: usize,
    /// Perturbs one state measurement of the benchmark data.
    pub corrupt_fixture: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 20,
            sparsify: SparsifyOptions {
                max_iter: 50,
                ..SparsifyOptions::default()
            },
            boundary_samples: 100,
            fuzz_systems: 20,
            oracle_max_iter: SparsifyOptions::default().max_iter,
            corrupt_fixture: false,
        }
    }
}

/// The benchmark with its consistency set and gain partition.
#[derive(Debug, Clone)]
pub struct FixtureSetup {
    pub fixture: ThreeAgentFixture,
    pub cset: ConsistencySet,
    pub partition: Partition,
}

pub fn fixture_setup(corrupt: bool) -> Result<FixtureSetup> {
    let mut fixture = three_agent_fixture();
    if corrupt {
        let mut x = fixture.data.x().clone();
        x[(2, 5)] += 0.5;
        fixture.data = crate::datamodel::TrajectoryData::new(x, fixture.data.u().clone())?;
    }
    let model = NoiseModel::from_energy_bound(&fixture.q, fixture.data.t())?;
    let cset = build_n(&fixture.data, fixture.system.b(), &model)?;
    let partition = fixture.partition();
    Ok(FixtureSetup {
        fixture,
        cset,
        partition,
    })
}

/// Criterion 1: the stabilization LMI is feasible on the benchmark and its
/// re-evaluated residual is at least `−1e-8`, within 10 s.
pub fn informativity(setup: &FixtureSetup, settings: &SynthSettings) -> (Criterion, Option<StabCertificate>) {
    const NAME: &str = "informativity";
    let started = Instant::now();
    let outcome = synthesize_centralized(&setup.cset, setup.fixture.system.b(), settings);
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(SynthOutcome::Feasible(cert)) => {
            let pass = cert.residual_min_eig >= -RESIDUAL_TOL && secs < 10.0;
            let detail = format!(
                "feasible ({:?}), residual min-eig {:.3e}, {:.2}s of 10s",
                cert.solver_status, cert.residual_min_eig, secs
            );
            (Criterion::new(1, NAME, pass, detail, started), Some(cert))
        }
        Ok(SynthOutcome::Infeasible(s)) => (
            Criterion::new(1, NAME, false, format!("solver reports infeasible: {s}"), started),
            None,
        ),
        Err(e) => (Criterion::new(1, NAME, false, format!("error: {e}"), started), None),
    }
}

/// Criterion 2: `ρ(A_s + BK) ≤ 1 − 1e-4` for the true benchmark system.
pub fn stabilization(setup: &FixtureSetup, cert: Option<&StabCertificate>) -> Criterion {
    let started = Instant::now();
    let Some(cert) = cert else {
        return Criterion::new(2, "stabilization", false, "no gain to check".into(), started);
    };
    let sys = &setup.fixture.system;
    let rho = linalg::spectral_radius(&(sys.a_s() + sys.b() * &cert.k));
    let detail = format!("rho(A_s + BK) = {rho:.6}, need <= {:.4}", 1.0 - 1e-4);
    Criterion::new(2, "stabilization", rho <= 1.0 - 1e-4, detail, started)
}

pub fn fixture_sparsify(setup: &FixtureSetup, opts: &SparsifyOptions) -> Result<ReweightTrace> {
    sparsify::run(&setup.cset, setup.fixture.system.b(), &setup.partition, opts)
}

/// Criterion 3: the reweighting converges within `max_iter` steps to a
/// verified stabilizing gain with at most 4 nonzero blocks.
pub fn sparsification(
    setup: &FixtureSetup,
    trace: &Result<ReweightTrace>,
    opts: &CheckOptions,
) -> (Criterion, Option<VerificationReport>) {
    const NAME: &str = "sparsification";
    let started = Instant::now();
    let trace = match trace {
        Ok(t) => t,
        Err(e) => return (Criterion::new(3, NAME, false, format!("error: {e}"), started), None),
    };
    let last = trace.last();
    let sys = &setup.fixture.system;
    let report = verify_gain(
        &last.certificate,
        &setup.cset,
        sys.b(),
        Some(sys.a_s()),
        opts.boundary_samples,
        opts.seed,
    );
    let rho = report.true_system_spectral_radius.unwrap_or(f64::INFINITY);
    let pass = trace.converged && trace.iterations() <= opts.sparsify.max_iter && last.bcard <= 4 && report.pass;
    let detail = format!(
        "{} after {} iterations ({:?}), bcard {} (need <= 4), pattern {:?}, verification {}, rho {:.6}",
        if trace.converged { "converged" } else { "not converged" },
        trace.iterations(),
        trace.reason,
        last.bcard,
        last.pattern,
        if report.pass { "PASS" } else { "FAIL" },
        rho
    );
    (Criterion::new(3, NAME, pass, detail, started), Some(report))
}

/// One generated instance of the soundness corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FuzzInstance {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub feasible: bool,
    /// Verification of the centralized certificate.
    pub verification: Option<VerificationReport>,
    /// Verification of the final sparse certificate.
    pub sparse_verification: Option<VerificationReport>,
    #[serde(skip)]
    pub trace: Option<ReweightTrace>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct FuzzCorpus {
    pub instances: Vec<FuzzInstance>,
    pub seconds: f64,
}

/// Random networked system with 1 to 3 agents of 1 or 2 states and one input
/// each, and a noisy trajectory whose noise satisfies `W Wᵀ ⪯ Q`.
pub fn random_instance(seed: u64) -> Result<(SystemModel, crate::datamodel::TrajectoryData, DMatrix<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents = rng.random_range(1..=3usize);
    let n_dims: Vec<usize> = (0..agents).map(|_| rng.random_range(1..=2usize)).collect();
    let m_dims = vec![1; agents];
    let sys = random_network_system(&n_dims, &m_dims, 0.5, rng.random())?;
    let (n, m) = (sys.n(), sys.m());
    let t = 2 * (n + m);
    let q = DMatrix::identity(n, n) * 1e-3;
    let w = sample_noise_within(&q, t, rng.random())?.w;
    let u = DMatrix::from_fn(m, t, |_, _| StandardNormal.sample(&mut rng));
    let x0: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let data = rollout(&sys, &x0, &u, &w)?;
    Ok((sys, data, q))
}

/// Synthesizes, sparsifies and verifies on `count` random instances.
pub fn fuzz_corpus(opts: &CheckOptions) -> FuzzCorpus {
    let started = Instant::now();
    let instances = (0..opts.fuzz_systems as u64)
        .map(|i| fuzz_one(opts.seed.wrapping_mul(1000).wrapping_add(i), opts))
        .collect();
    FuzzCorpus {
        instances,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn fuzz_one(seed: u64, opts: &CheckOptions) -> FuzzInstance {
    let mut inst = FuzzInstance {
        seed,
        n: 0,
        m: 0,
        feasible: false,
        verification: None,
        sparse_verification: None,
        trace: None,
        error: None,
    };
    let run = |inst: &mut FuzzInstance| -> Result<()> {
        let (sys, data, q) = random_instance(seed)?;
        inst.n = sys.n();
        inst.m = sys.m();
        let model = NoiseModel::from_energy_bound(&q, data.t())?;
        let cset = build_n(&data, sys.b(), &model)?;
        let outcome = synthesize_centralized(&cset, sys.b(), &opts.sparsify.synth)?;
        let Some(cert) = outcome.certificate() else {
            return Ok(());
        };
        inst.feasible = true;
        inst.verification = Some(verify_gain(
            cert,
            &cset,
            sys.b(),
            Some(sys.a_s()),
            opts.boundary_samples,
            seed,
        ));
        let part = Partition::new(sys.m_dims().to_vec(), sys.n_dims().to_vec())?;
        let trace = sparsify::run(&cset, sys.b(), &part, &opts.sparsify)?;
        inst.sparse_verification = Some(verify_gain(
            &trace.last().certificate,
            &cset,
            sys.b(),
            Some(sys.a_s()),
            opts.boundary_samples,
            seed,
        ));
        inst.trace = Some(trace);
        Ok(())
    };
    if let Err(e) = run(&mut inst) {
        inst.error = Some(e.to_string());
    }
    inst
}

/// Criterion 4: every certificate produced on the corpus passes
/// verification; the whole corpus runs in under 2 minutes.
pub fn soundness(corpus: &FuzzCorpus) -> Criterion {
    let started = Instant::now();
    let feasible = corpus.instances.iter().filter(|i| i.feasible).count();
    let mut failures = Vec::new();
    let mut checked = 0;
    for inst in &corpus.instances {
        for (what, rep) in [
            ("centralized", &inst.verification),
            ("sparse", &inst.sparse_verification),
        ] {
            if let Some(rep) = rep {
                checked += 1;
                if !rep.pass {
                    failures.push(format!(
                        "seed {} {what}: residual {:.2e}, {} of {} samples failed",
                        inst.seed, rep.residual_min_eig, rep.samples_failed, rep.n_samples
                    ));
                }
            }
        }
    }
    let errors: Vec<String> = corpus
        .instances
        .iter()
        .filter_map(|i| i.error.as_ref().map(|e| format!("seed {}: {e}", i.seed)))
        .collect();
    let pass = failures.is_empty() && errors.is_empty() && corpus.seconds < 120.0;
    let mut detail = format!(
        "{} systems, {feasible} feasible, {checked} certificates verified, {} failures, {} errors, {:.1}s of 120s",
        corpus.instances.len(),
        failures.len(),
        errors.len(),
        corpus.seconds
    );
    for f in failures.iter().chain(errors.iter()) {
        detail.push_str("; ");
        detail.push_str(f);
    }
    Criterion::new(4, "certificate soundness", pass, detail, started)
}

/// Criterion 5: zero row blocks of `L` are exactly those of `L P⁻¹`, and
/// with block-diagonal `P`, `L ∈ M^σ ⟺ L P⁻¹ ∈ M^σ`.
pub fn structural(seed: u64) -> Criterion {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = DEFAULT_ZERO_TOL;
    let mut row_failures = 0;
    let mut diag_failures = 0;
    for _ in 0..50 {
        let p_sizes: Vec<usize> = (0..rng.random_range(1..=4)).map(|_| rng.random_range(1..=3)).collect();
        let n = rng.random_range(1..=8);
        let part = Partition::new(p_sizes, vec![n]).expect("sizes are positive");
        let mut l = random_matrix(&mut rng, part.m(), n);
        for i in 0..part.k() {
            if rng.random_bool(0.5) {
                l.rows_mut(part.row_range(i).start, part.p()[i]).fill(0.0);
            }
        }
        let k = &l * random_spd(&mut rng, n, None);
        let s_l = blockmat::structure_of(&l, &part, tol).expect("conforming");
        let s_k = blockmat::structure_of(&k, &part, tol).expect("conforming");
        if s_l != s_k {
            row_failures += 1;
        }
    }
    for _ in 0..50 {
        let p_sizes: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=2)).collect();
        let q_sizes: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=3)).collect();
        let part = Partition::new(p_sizes, q_sizes).expect("sizes are positive");
        let pattern =
            |rng: &mut ChaCha8Rng| -> Vec<u8> { (0..part.k() * part.l()).map(|_| rng.random_range(0..2)).collect() };
        let sigma = SparsityStructure::from_bits(part.clone(), &pattern(&mut rng)).expect("sized");
        let support = SparsityStructure::from_bits(part.clone(), &pattern(&mut rng)).expect("sized");
        let l = blockmat::project(&random_matrix(&mut rng, part.m(), part.n()), &support).expect("sized");
        let p = random_spd(&mut rng, part.n(), Some(&part.square_cols()));
        let k = &l * linalg::spd_inverse(&p).expect("P is positive definite");
        let in_l = blockmat::conforms(&l, &sigma, tol).expect("sized");
        let in_k = blockmat::conforms(&k, &sigma, tol).expect("sized");
        if in_l != in_k {
            diag_failures += 1;
        }
    }
    let detail =
        format!("row pattern mismatches {row_failures}/50, block-diagonal membership mismatches {diag_failures}/50");
    Criterion::new(
        5,
        "structural correctness",
        row_failures + diag_failures == 0,
        detail,
        started,
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut *rng))
}

/// `G Gᵀ + I`, restricted to the diagonal blocks of `blocks` when given.
fn random_spd(rng: &mut ChaCha8Rng, n: usize, blocks: Option<&Partition>) -> DMatrix<f64> {
    let g = random_matrix(rng, n, n);
    let mut p = &g * g.transpose() + DMatrix::identity(n, n);
    if let Some(sq) = blocks {
        for r in 0..n {
            for c in 0..n {
                if sq.row_block_of(r) != sq.col_block_of(c) {
                    p[(r, c)] = 0.0;
                }
            }
        }
    }
    p
}

/// Criterion 6: `f_t(L_{t+1}) ≤ bcard(K_t) + 1e-6` on every step of the
/// given traces.
pub fn surrogate_bound(traces: &[&ReweightTrace]) -> Criterion {
    let started = Instant::now();
    let mut steps = 0;
    let mut violations = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for (ti, trace) in traces.iter().enumerate() {
        for s in &trace.states {
            if let (Some(f), Some(bound)) = (s.f_value, s.f_bound) {
                steps += 1;
                worst = worst.max(f - bound);
                if f > bound + 1e-6 {
                    violations.push(format!("trace {ti} step {}: {f:.6} > {bound}", s.t));
                }
            }
        }
    }
    let mut detail = format!(
        "{} traces, {steps} steps, {} violations, max f - bound {:.3e}",
        traces.len(),
        violations.len(),
        worst
    );
    for v in &violations {
        detail.push_str("; ");
        detail.push_str(v);
    }
    Criterion::new(
        6,
        "surrogate bound",
        violations.is_empty() && steps > 0,
        detail,
        started,
    )
}

/// A two-agent scalar instance with a known minimum block count.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub name: &'static str,
    pub a_s: DMatrix<f64>,
    pub expected_min: usize,
}

/// Scalar agents with `B = I`: every unstable agent needs its own feedback
/// block and nothing else does.
pub fn tiny_instances() -> Vec<TinyInstance> {
    let mk = |name, a: [f64; 4], expected_min| TinyInstance {
        name,
        a_s: DMatrix::from_row_slice(2, 2, &a),
        expected_min,
    };
    vec![
        mk("decoupled, both unstable", [1.2, 0.0, 0.0, 1.1], 2),
        mk("decoupled, one unstable", [0.5, 0.0, 0.0, 1.2], 1),
        mk("decoupled, both stable", [0.5, 0.0, 0.0, 0.3], 0),
        mk("unstable drives stable", [1.2, 0.0, 0.5, 0.4], 1),
        mk("cascade, both unstable", [1.2, 0.0, 0.3, 1.1], 2),
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleRow {
    pub name: String,
    pub exhaustive_min: Option<usize>,
    pub enumerated: usize,
    pub reweighted_bcard: Option<usize>,
    pub converged: bool,
    pub error: Option<String>,
}

pub fn oracle_rows(opts: &CheckOptions) -> Vec<OracleRow> {
    tiny_instances()
        .into_iter()
        .enumerate()
        .map(|(i, inst)| oracle_row(&inst, opts.seed.wrapping_add(i as u64), opts))
        .collect()
}

fn oracle_row(inst: &TinyInstance, seed: u64, opts: &CheckOptions) -> OracleRow {
    let mut row = OracleRow {
        name: inst.name.to_string(),
        exhaustive_min: None,
        enumerated: 0,
        reweighted_bcard: None,
        converged: false,
        error: None,
    };
    let run = |row: &mut OracleRow| -> Result<()> {
        let sys = SystemModel::new(inst.a_s.clone(), DMatrix::identity(2, 2), vec![1, 1], vec![1, 1])?;
        let t = 8;
        let q = DMatrix::identity(2, 2) * 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = sample_noise_within(&q, t, rng.random())?.w;
        let u = random_matrix(&mut rng, 2, t);
        let data = rollout(&sys, &[1.0, -1.0], &u, &w)?;
        let cset = build_n(&data, sys.b(), &NoiseModel::from_energy_bound(&q, t)?)?;
        let part = Partition::uniform(2, 2, 1, 1)?;
        let mut ex = ExhaustiveOptions::new(ExhaustiveMode::Blockdiag);
        ex.synth = opts.sparsify.synth.clone();
        let outcome = exhaustive_min_bcard(&cset, sys.b(), &part, &ex)?;
        row.enumerated = outcome.enumerated();
        if let ExhaustiveOutcome::Found { sigma, .. } = &outcome {
            row.exhaustive_min = Some(sigma.count_ones());
        }
        let sp = SparsifyOptions {
            max_iter: opts.oracle_max_iter,
            ..opts.sparsify.clone()
        };
        let trace = sparsify::run(&cset, sys.b(), &part, &sp)?;
        row.converged = trace.converged;
        row.reweighted_bcard = Some(trace.last().bcard);
        Ok(())
    };
    if let Err(e) = run(&mut row) {
        row.error = Some(e.to_string());
    }
    row
}

/// Criterion 7: on converged runs the reweighted block count is never below
/// the exhaustive minimum and equals it on at least 4 of 5 instances.
pub fn oracle_equivalence(rows: &[OracleRow]) -> Criterion {
    let started = Instant::now();
    let mut matches = 0;
    let mut below = 0;
    let mut excluded = Vec::new();
    let mut parts = Vec::new();
    for r in rows {
        let ok_run = r.converged && r.error.is_none() && r.exhaustive_min.is_some();
        match (ok_run, r.exhaustive_min, r.reweighted_bcard) {
            (true, Some(min), Some(b)) => {
                if b == min {
                    matches += 1;
                }
                if b < min {
                    below += 1;
                }
                parts.push(format!("{}: {b} vs {min}", r.name));
            }
            _ => excluded.push(format!(
                "{} (converged {}, exhaustive {:?}{})",
                r.name,
                r.converged,
                r.exhaustive_min,
                r.error.as_ref().map(|e| format!(", error {e}")).unwrap_or_default()
            )),
        }
    }
    let pass = below == 0 && matches >= 4;
    let mut detail = format!(
        "{matches}/{} match, {below} below the minimum, {} excluded [{}]",
        rows.len(),
        excluded.len(),
        parts.join("; ")
    );
    if !excluded.is_empty() {
        detail.push_str(&format!(" excluded: {}", excluded.join("; ")));
    }
    Criterion::new(7, "oracle equivalence", pass, detail, started)
}

/// Criterion 8: `bcard` agrees with an entrywise scan on 200 random
/// partitioned matrices.
pub fn bcard_oracle(seed: u64) -> Criterion {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = DEFAULT_ZERO_TOL;
    let mut mismatches = 0;
    for _ in 0..200 {
        let p: Vec<usize> = (0..rng.random_range(1..=4)).map(|_| rng.random_range(1..=3)).collect();
        let q: Vec<usize> = (0..rng.random_range(1..=4)).map(|_| rng.random_range(1..=3)).collect();
        let part = Partition::new(p.clone(), q.clone()).expect("sizes are positive");
        let mut m = random_matrix(&mut rng, part.m(), part.n());
        for v in m.iter_mut() {
            match rng.random_range(0..4) {
                0 => *v = 0.0,
                1 => *v *= 1e-12,
                _ => {}
            }
        }
        // zero whole blocks too, so that empty blocks are common
        let mut expected = 0;
        let mut r0 = 0;
        for &pi in &p {
            let mut c0 = 0;
            for &qj in &q {
                if rng.random_bool(0.4) {
                    for r in r0..r0 + pi {
                        for c in c0..c0 + qj {
                            m[(r, c)] = 0.0;
                        }
                    }
                }
                let mut ss = 0.0;
                for r in r0..r0 + pi {
                    for c in c0..c0 + qj {
                        ss += m[(r, c)] * m[(r, c)];
                    }
                }
                if ss.sqrt() > tol {
                    expected += 1;
                }
                c0 += qj;
            }
            r0 += pi;
        }
        if blockmat::bcard(&m, &part, tol).expect("conforming") != expected {
            mismatches += 1;
        }
    }
    Criterion::new(
        8,
        "bcard oracle",
        mismatches == 0,
        format!("{mismatches}/200 mismatches"),
        started,
    )
}

/// Criterion 9: `‖X_+ − A_s X_− − B U_− − W_−‖_∞ ≤ 5e-5` and the listed
/// noise satisfies the bound.
pub fn fixture_consistency(setup: &FixtureSetup) -> Criterion {
    let started = Instant::now();
    let fx = &setup.fixture;
    let gap = fixture_discrepancy(fx).amax();
    let noise_ok = NoiseModel::from_energy_bound(&fx.q, fx.data.t())
        .and_then(|m| noise_satisfies(&fx.noise.w, &m))
        .map(|v| v.holds)
        .unwrap_or(false);
    let detail = format!("max discrepancy {gap:.3e} (need <= 5e-5), noise within bound: {noise_ok}");
    Criterion::new(9, "fixture self-consistency", gap <= 5e-5 && noise_ok, detail, started)
}

/// All criteria in order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub criteria: Vec<Criterion>,
    pub all_pass: bool,
    pub sparse_gain: Option<DMatrix<f64>>,
    pub sparse_bcard: Option<usize>,
    pub iterations: Option<usize>,
    pub oracle: Vec<OracleRow>,
}

pub fn run_all(opts: &CheckOptions) -> Result<CheckReport> {
    let setup = fixture_setup(opts.corrupt_fixture)?;
    let mut criteria = Vec::new();
    let (c1, cert) = informativity(&setup, &opts.sparsify.synth);
    criteria.push(c1);
    criteria.push(stabilization(&setup, cert.as_ref()));
    let trace = fixture_sparsify(&setup, &opts.sparsify);
    criteria.push(sparsification(&setup, &trace, opts).0);
    let corpus = fuzz_corpus(opts);
    criteria.push(soundness(&corpus));
    criteria.push(structural(opts.seed));
    let mut traces: Vec<&ReweightTrace> = corpus.instances.iter().filter_map(|i| i.trace.as_ref()).collect();
    if let Ok(t) = &trace {
        traces.insert(0, t);
    }
    criteria.push(surrogate_bound(&traces));
    let oracle = oracle_rows(opts);
    criteria.push(oracle_equivalence(&oracle));
    criteria.push(bcard_oracle(opts.seed));
    criteria.push(fixture_consistency(&setup));
    let all_pass = criteria.iter().all(|c| c.pass);
    let last = trace.as_ref().ok().map(|t| t.last());
    Ok(CheckReport {
        all_pass,
        sparse_gain: last.map(|s| s.k().clone()),
        sparse_bcard: last.map(|s| s.bcard),
        iterations: trace.as_ref().ok().map(|t| t.iterations()),
        criteria,
        oracle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structural_and_bcard_checks_pass() {
        assert!(structural(1).pass);
        assert!(bcard_oracle(1).pass);
    }

    #[test]
    fn corrupted_fixture_fails_self_consistency() {
        let setup = fixture_setup(true).unwrap();
        let c = fixture_consistency(&setup);
        assert!(!c.pass);
        assert!(c.detail.contains("max discrepancy"));
    }

    #[test]
    fn random_instances_are_small_and_deterministic() {
        for seed in 0..20 {
            let (sys, data, q) = random_instance(seed).unwrap();
            assert!(sys.agents() <= 3 && sys.n() <= 6);
            assert_eq!(data.t(), 2 * (sys.n() + sys.m()));
            let w = data.residual(sys.a_s(), sys.b()).unwrap();
            let model = NoiseModel::from_energy_bound(&q, data.t()).unwrap();
            assert!(noise_satisfies(&w, &model).unwrap().holds);
            assert_eq!(random_instance(seed).unwrap().1.x(), data.x());
        }
    }

    #[test]
    fn surrogate_bound_flags_violations() {
        let setup = fixture_setup(false).unwrap();
        let opts = SparsifyOptions {
            max_iter: 1,
            ..SparsifyOptions::default()
        };
        let mut trace = fixture_sparsify(&setup, &opts).unwrap();
        assert!(surrogate_bound(&[&trace]).pass);
        let s = trace.states.last_mut().unwrap();
        s.f_value = Some(s.f_bound.unwrap() + 1.0);
        assert!(!surrogate_bound(&[&trace]).pass);
    }

    #[test]
    fn criterion_line_format() {
        let c = Criterion {
            id: 9,
            name: "x".into(),
            pass: false,
            detail: "d".into(),
            seconds: 0.5,
        };
        assert_eq!(c.line(), "[FAIL] 9 x: d (0.50s)");
    }
}
