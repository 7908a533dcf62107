use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use ddsparse::blockmat::{self, Partition, SparsityStructure};
use ddsparse::datamodel::{build_n, ConsistencySet, NoiseModel, TrajectoryData};
use ddsparse::reproduce::{self, CheckOptions};
use ddsparse::simulate;
use ddsparse::sparsify::{self, SparsifyOptions, StopReason, WeightMode};
use ddsparse::synth::{
    self, ExhaustiveMode, ExhaustiveOptions, ExhaustiveOutcome, StabCertificate, SynthOutcome, SynthSettings,
};
use ddsparse::verify::verify_gain;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{config_err, ConfigError, ExperimentConfig, Fixture, ScanMode, SynthMode, Weights};
use crate::io::{self, SystemFile};
use crate::report::{self, RunReport};
use crate::{ReproduceArgs, EXIT_CRITERIA, EXIT_INFEASIBLE, EXIT_NO_CONVERGENCE, EXIT_OK, EXIT_SOLVER};

/// Everything a solve needs.
struct Problem {
    data: TrajectoryData,
    b: DMatrix<f64>,
    a_true: Option<DMatrix<f64>>,
    cset: ConsistencySet,
    partition: Partition,
}

fn input_err(e: anyhow::Error) -> anyhow::Error {
    ConfigError(format!("{e:#}")).into()
}

fn load_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let (data, b, a_true, dims) = match cfg.fixture {
        Some(Fixture::Paper) => {
            let fx = simulate::three_agent_fixture();
            let dims = (fx.system.m_dims().to_vec(), fx.system.n_dims().to_vec());
            (
                fx.data,
                fx.system.b().clone(),
                Some(fx.system.a_s().clone()),
                Some(dims),
            )
        }
        None => {
            let (Some(x), Some(u)) = (&cfg.x, &cfg.u) else {
                return config_err("both x and u data files are required (or --fixture paper)");
            };
            let x = io::read_csv(x).map_err(input_err)?;
            let u = io::read_csv(u).map_err(input_err)?;
            let data = TrajectoryData::new(x, u).map_err(|e| input_err(e.into()))?;
            let (b, a_true, dims) = if let Some(path) = &cfg.system {
                let sys: SystemFile = io::read_json(path).map_err(input_err)?;
                let dims = sys.m_dims.clone().zip(sys.n_dims.clone());
                (sys.b().map_err(input_err)?, sys.a_s().map_err(input_err)?, dims)
            } else if let Some(path) = &cfg.b {
                (io::read_csv(path).map_err(input_err)?, None, None)
            } else {
                return config_err("the input matrix is required: pass system or b");
            };
            (data, b, a_true, dims)
        }
    };
    let n = data.n();
    if b.shape() != (n, data.m()) {
        return config_err(format!("B must be {n}x{}", data.m()));
    }
    if let Some(a) = &a_true {
        if a.shape() != (n, n) {
            return config_err(format!("a_s must be {n}x{n}"));
        }
    }
    let q = match &cfg.noise_q {
        Some(rows) => io::from_rows(rows).map_err(input_err)?,
        None => DMatrix::identity(n, n) * cfg.noise_scale,
    };
    let model = NoiseModel::from_energy_bound(&q, data.t()).map_err(|e| input_err(e.into()))?;
    let cset = build_n(&data, &b, &model)?;
    let (p, q) = match (&cfg.p, &cfg.q, dims) {
        (Some(p), Some(q), _) => (p.clone(), q.clone()),
        (None, None, Some(d)) => d,
        (None, None, None) => (vec![b.ncols()], vec![n]),
        _ => return config_err("give both p and q"),
    };
    let partition = Partition::new(p, q).map_err(|e| input_err(e.into()))?;
    if partition.m() != b.ncols() || partition.n() != n {
        return config_err(format!(
            "partition is {}x{}, the gain is {}x{n}",
            partition.m(),
            partition.n(),
            b.ncols()
        ));
    }
    Ok(Problem {
        data,
        b,
        a_true,
        cset,
        partition,
    })
}

fn ensure_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn finish(report: &RunReport, out: &Path, json: bool, summary: &[String]) -> Result<()> {
    io::write_json(&out.join("report.json"), report)?;
    if json {
        println!("{}", serde_json::to_string_pretty(report)?);
    } else {
        for line in summary {
            println!("{line}");
        }
    }
    Ok(())
}

fn write_certificate(out: &Path, cert: &StabCertificate) -> Result<()> {
    io::write_csv(&out.join("K.csv"), &cert.k)?;
    io::write_json(&out.join("certificate.json"), cert)
}

fn per_agent(v: &[usize], agents: usize, what: &str) -> Result<Vec<usize>> {
    match v.len() {
        1 => Ok(vec![v[0]; agents]),
        l if l == agents => Ok(v.to_vec()),
        l => config_err(format!("{what} has {l} entries for {agents} agents")),
    }
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path, json: bool) -> Result<u8> {
    let (sys, data, w) = match cfg.fixture {
        Some(Fixture::Paper) => {
            let fx = simulate::three_agent_fixture();
            (fx.system, fx.data, fx.noise.w)
        }
        None => {
            if cfg.t == 0 {
                return config_err("t must be at least 1");
            }
            if cfg.agents == 0 {
                return config_err("agents must be at least 1");
            }
            let n_i = per_agent(&cfg.n_i, cfg.agents, "n_i")?;
            let m_i = per_agent(&cfg.m_i, cfg.agents, "m_i")?;
            let sys =
                simulate::random_network_system(&n_i, &m_i, cfg.density, cfg.seed).map_err(|e| input_err(e.into()))?;
            let (n, m) = (sys.n(), sys.m());
            let q = DMatrix::identity(n, n) * cfg.noise_scale;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
            let w = simulate::sample_noise_within(&q, cfg.t, cfg.seed)?.w;
            let u = DMatrix::from_fn(m, cfg.t, |_, _| StandardNormal.sample(&mut rng));
            let x0: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let data = simulate::rollout(&sys, &x0, &u, &w)?;
            (sys, data, w)
        }
    };
    ensure_out(out)?;
    io::write_csv(&out.join("X.csv"), data.x())?;
    io::write_csv(&out.join("U.csv"), data.u())?;
    io::write_csv(&out.join("W.csv"), &w)?;
    io::write_json(&out.join("system.json"), &SystemFile::from_model(&sys))?;
    if json {
        let summary = serde_json::json!({
            "command": "simulate",
            "config_hash": cfg.hash()?,
            "n": sys.n(),
            "m": sys.m(),
            "t": data.t(),
            "files": ["X.csv", "U.csv", "W.csv", "system.json"],
        });
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!(
            "wrote X.csv, U.csv, W.csv, system.json to {} (n = {}, m = {}, T = {})",
            out.display(),
            sys.n(),
            sys.m(),
            data.t()
        );
    }
    Ok(EXIT_OK)
}

fn sigma_of(cfg: &ExperimentConfig, part: &Partition) -> Result<SparsityStructure> {
    match &cfg.sigma {
        None => Ok(SparsityStructure::full(part.clone())),
        Some(rows) => {
            let sigma = rows.iter().map(|r| r.iter().map(|&v| v == 1).collect()).collect();
            SparsityStructure::new(part.clone(), sigma).map_err(|e| input_err(e.into()))
        }
    }
}

pub fn synthesize(cfg: &ExperimentConfig, out: &Path, json: bool) -> Result<u8> {
    let started = Instant::now();
    let problem = load_problem(cfg)?;
    let mut report = RunReport::new("synthesize", cfg, cfg.hash()?);
    report.timings.insert("load".into(), started.elapsed().as_secs_f64());
    let settings = SynthSettings::default();
    if cfg.mode == SynthMode::Rows && problem.partition.l() != 1 {
        return config_err("mode rows needs a partition with a single column block");
    }
    let sigma = sigma_of(cfg, &problem.partition)?;
    let t0 = Instant::now();
    let outcome = match cfg.mode {
        SynthMode::Centralized => synth::synthesize_centralized(&problem.cset, &problem.b, &settings)?,
        SynthMode::Rows => synth::synthesize_row_structured(&problem.cset, &problem.b, &sigma, &settings)?,
        SynthMode::Blockdiag => synth::synthesize_blockdiag(&problem.cset, &problem.b, &sigma, &settings)?,
    };
    report.timings.insert("solve".into(), t0.elapsed().as_secs_f64());
    report.detail("mode", cfg.mode);
    ensure_out(out)?;
    let code = match outcome {
        SynthOutcome::Feasible(cert) => {
            let t1 = Instant::now();
            let ver = verify_gain(
                &cert,
                &problem.cset,
                &problem.b,
                problem.a_true.as_ref(),
                cfg.samples,
                cfg.seed,
            );
            report.timings.insert("verify".into(), t1.elapsed().as_secs_f64());
            report.outcome = "feasible".into();
            report.bcard = Some(blockmat::bcard(&cert.k, &problem.partition, cfg.zero_tol)?);
            write_certificate(out, &cert)?;
            report.verification = Some(ver);
            report.certificate = Some(cert);
            EXIT_OK
        }
        SynthOutcome::Infeasible(status) => {
            report.outcome = "infeasible".into();
            report.detail("solver_status", status);
            EXIT_INFEASIBLE
        }
    };
    let mut summary = vec![format!("synthesize ({:?}): {}", cfg.mode, report.outcome)];
    if let Some(v) = &report.verification {
        summary.push(format!(
            "verification {}: residual {:.3e}, {} samples, {} failed{}",
            if v.pass { "PASS" } else { "FAIL" },
            v.residual_min_eig,
            v.n_samples,
            v.samples_failed,
            v.true_system_spectral_radius
                .map(|r| format!(", rho(A_s + BK) = {r:.6}"))
                .unwrap_or_default()
        ));
    }
    finish(&report, out, json, &summary)?;
    Ok(code)
}

fn sparsify_options(cfg: &ExperimentConfig) -> SparsifyOptions {
    SparsifyOptions {
        max_iter: cfg.max_iter,
        conv_tol: cfg.conv_tol,
        zero_tol: cfg.zero_tol,
        weight_mode: match cfg.weights {
            Weights::Hard => WeightMode::Hard,
            Weights::Epsilon => WeightMode::Epsilon { eps: cfg.eps },
        },
        polish_tol: cfg.polish_tol,
        patience: cfg.patience,
        ..SparsifyOptions::default()
    }
}

pub fn sparsify(cfg: &ExperimentConfig, out: &Path, json: bool) -> Result<u8> {
    let problem = load_problem(cfg)?;
    let mut report = RunReport::new("sparsify", cfg, cfg.hash()?);
    let opts = sparsify_options(cfg);
    report.detail("provenance", serde_json::json!({ "weight_mode": opts.weight_mode }));
    let t0 = Instant::now();
    let trace = sparsify::run(&problem.cset, &problem.b, &problem.partition, &opts)?;
    report.timings.insert("sparsify".into(), t0.elapsed().as_secs_f64());
    ensure_out(out)?;
    io::write_json(&out.join("trace.json"), &trace)?;
    fs::write(out.join("trace.csv"), report::trace_csv(&trace))?;
    fs::write(out.join("trace.svg"), report::bcard_svg(&trace))?;

    let last = trace.last();
    let t1 = Instant::now();
    let ver = verify_gain(
        &last.certificate,
        &problem.cset,
        &problem.b,
        problem.a_true.as_ref(),
        cfg.samples,
        cfg.seed,
    );
    report.timings.insert("verify".into(), t1.elapsed().as_secs_f64());
    write_certificate(out, &last.certificate)?;
    report.outcome = if trace.converged { "converged" } else { "not_converged" }.into();
    report.bcard = Some(last.bcard);
    report.trace = Some("trace.json".into());
    report.detail("iterations", trace.iterations());
    report.detail("converged", trace.converged);
    report.detail("reason", trace.reason);
    report.detail("failure", &trace.failure);
    report.detail("pattern", &last.pattern);
    report.detail(
        "bcard_by_iteration",
        trace.states.iter().map(|s| s.bcard).collect::<Vec<_>>(),
    );
    report.verification = Some(ver);
    report.certificate = Some(last.certificate.clone());
    let summary = vec![
        format!(
            "sparsify: {} after {} iterations ({:?}), bcard {} -> {}",
            report.outcome,
            trace.iterations(),
            trace.reason,
            trace.states[0].bcard,
            last.bcard
        ),
        format!(
            "verification {}",
            if report.verification.as_ref().is_some_and(|v| v.pass) {
                "PASS"
            } else {
                "FAIL"
            }
        ),
    ];
    finish(&report, out, json, &summary)?;
    Ok(match trace.reason {
        StopReason::FixedPoint => EXIT_OK,
        StopReason::MaxIterations => EXIT_NO_CONVERGENCE,
        StopReason::SolverFailure => EXIT_SOLVER,
    })
}

pub fn exhaustive(cfg: &ExperimentConfig, out: &Path, json: bool) -> Result<u8> {
    let problem = load_problem(cfg)?;
    let mut report = RunReport::new("exhaustive", cfg, cfg.hash()?);
    let mode = match cfg.scan {
        ScanMode::Rows => ExhaustiveMode::RowStructured,
        ScanMode::Blockdiag => ExhaustiveMode::Blockdiag,
    };
    let mut opts = ExhaustiveOptions::new(mode);
    opts.budget = cfg.budget;
    opts.max_ones = cfg.max_ones;
    opts.force = cfg.force;
    let t0 = Instant::now();
    let outcome =
        synth::exhaustive_min_bcard(&problem.cset, &problem.b, &problem.partition, &opts).map_err(|e| match e {
            ddsparse::Error::InvalidArgument(_) | ddsparse::Error::Structure(_) => input_err(e.into()),
            other => other.into(),
        })?;
    report.timings.insert("scan".into(), t0.elapsed().as_secs_f64());
    report.detail("enumerated", outcome.enumerated());
    report.detail("mode", mode);
    ensure_out(out)?;
    let code = match &outcome {
        ExhaustiveOutcome::Found {
            sigma,
            certificate,
            solver_failures,
            ..
        } => {
            report.outcome = "found".into();
            report.detail("sigma", sigma.rows());
            report.detail("solver_failures", solver_failures);
            report.bcard = Some(sigma.count_ones());
            report.verification = Some(verify_gain(
                certificate,
                &problem.cset,
                &problem.b,
                problem.a_true.as_ref(),
                cfg.samples,
                cfg.seed,
            ));
            write_certificate(out, certificate)?;
            report.certificate = Some(certificate.clone());
            EXIT_OK
        }
        ExhaustiveOutcome::AllInfeasible { solver_failures, .. } => {
            report.outcome = "all_infeasible".into();
            report.detail("solver_failures", solver_failures);
            EXIT_INFEASIBLE
        }
        ExhaustiveOutcome::Exhausted { solver_failures, .. } => {
            report.outcome = "budget_exhausted".into();
            report.detail("solver_failures", solver_failures);
            EXIT_NO_CONVERGENCE
        }
    };
    let summary = vec![format!(
        "exhaustive: {} after {} patterns{}",
        report.outcome,
        outcome.enumerated(),
        report.bcard.map(|b| format!(", minimum bcard {b}")).unwrap_or_default()
    )];
    finish(&report, out, json, &summary)?;
    Ok(code)
}

fn read_certificate(path: &Path) -> Result<StabCertificate> {
    let value: serde_json::Value = io::read_json(path)?;
    let cert = value.get("certificate").cloned().unwrap_or(value);
    serde_json::from_value(cert).with_context(|| format!("{} holds no certificate", path.display()))
}

pub fn verify(cfg: &ExperimentConfig, out: &Path, json: bool) -> Result<u8> {
    let Some(path) = &cfg.certificate else {
        return config_err("certificate is required");
    };
    let cert = read_certificate(path).map_err(input_err)?;
    let problem = load_problem(cfg)?;
    let n = problem.data.n();
    if cert.p.shape() != (n, n) || cert.k.shape() != (problem.b.ncols(), n) {
        return config_err("certificate dimensions do not match the data");
    }
    let mut report = RunReport::new("verify", cfg, cfg.hash()?);
    let t0 = Instant::now();
    let ver = verify_gain(
        &cert,
        &problem.cset,
        &problem.b,
        problem.a_true.as_ref(),
        cfg.samples,
        cfg.seed,
    );
    report.timings.insert("verify".into(), t0.elapsed().as_secs_f64());
    report.outcome = if ver.pass { "pass" } else { "fail" }.into();
    report.bcard = Some(blockmat::bcard(&cert.k, &problem.partition, cfg.zero_tol)?);
    let summary = vec![format!(
        "verify: {} (residual {:.3e}, {} samples, {} failed, {} skipped directions)",
        if ver.pass { "PASS" } else { "FAIL" },
        ver.residual_min_eig,
        ver.n_samples,
        ver.samples_failed,
        ver.skipped_directions
    )];
    let code = if ver.pass { EXIT_OK } else { EXIT_INFEASIBLE };
    report.verification = Some(ver);
    report.certificate = Some(cert);
    ensure_out(out)?;
    finish(&report, out, json, &summary)?;
    Ok(code)
}

pub fn reproduce(args: &ReproduceArgs) -> Result<u8> {
    let mut opts = CheckOptions {
        corrupt_fixture: args.corrupt_fixture,
        ..CheckOptions::default()
    };
    if let Some(s) = args.seed {
        opts.seed = s;
    }
    if let Some(n) = args.fuzz_systems {
        opts.fuzz_systems = n;
    }
    let result = reproduce::run_all(&opts)?;
    if let Some(out) = &args.out {
        ensure_out(out)?;
        io::write_json(&out.join("report.json"), &result)?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
    } else {
        for c in &result.criteria {
            println!("{}", c.line());
        }
        let failed: Vec<String> = result
            .criteria
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{} {}", c.id, c.name))
            .collect();
        if failed.is_empty() {
            println!("all criteria PASS");
        } else {
            println!("FAILED: {}", failed.join(", "));
        }
    }
    Ok(if result.all_pass { EXIT_OK } else { EXIT_CRITERIA })
}
