//! `ddsparse`: data-driven synthesis of stabilizing, block-sparse gains.
//!
//! Exit codes: 0 success, 1 failed acceptance criteria or unexpected error,
//! 2 infeasible / not informative / verification failed, 3 no convergence
//! or budget exhausted, 4 configuration or input error, 5 solver failure.

mod commands;
mod config;
mod io;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, ExperimentConfig, Fixture, ScanMode, SynthMode, Weights};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CRITERIA: u8 = 1;
pub const EXIT_INFEASIBLE: u8 = 2;
pub const EXIT_NO_CONVERGENCE: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;
pub const EXIT_SOLVER: u8 = 5;

#[derive(Parser, Debug)]
#[command(
    name = "ddsparse",
    version,
    about = "Stabilizing and block-sparse state feedback from noisy data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random networked system and a noisy trajectory.
    Simulate(SimulateArgs),
    /// Synthesize a stabilizing gain for every system consistent with the data.
    Synthesize(SynthesizeArgs),
    /// Reweighted block-norm minimization towards a block-sparse gain.
    Sparsify(SparsifyArgs),
    /// Search block patterns by increasing size for a feasible structured gain.
    Exhaustive(ExhaustiveArgs),
    /// Re-check a certificate against the data.
    Verify(VerifyArgs),
    /// Run the benchmark pipeline and every acceptance check.
    ReproducePaper(ReproduceArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON file whose keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
struct DataArgs {
    /// State measurements, n×(T+1).
    #[arg(long)]
    x: Option<PathBuf>,
    /// Inputs, m×T.
    #[arg(long)]
    u: Option<PathBuf>,
    /// Noise samples, n×T (reference only).
    #[arg(long)]
    w: Option<PathBuf>,
    /// system.json with `b` and optionally the true `a_s`.
    #[arg(long)]
    system: Option<PathBuf>,
    /// Input matrix as CSV, when no system.json is given.
    #[arg(long)]
    b: Option<PathBuf>,
    /// Use the embedded benchmark dataset.
    #[arg(long, value_enum)]
    fixture: Option<Fixture>,
    /// Noise energy bound `W Wᵀ ⪯ s·I`.
    #[arg(long)]
    noise_scale: Option<f64>,
    /// Row block sizes of the gain, e.g. `1,1,1`.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<usize>>,
    /// Column block sizes of the gain, e.g. `2,2,2`.
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<usize>>,
    /// Boundary samples for verification.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Write the embedded benchmark dataset instead of a random one.
    #[arg(long, value_enum)]
    fixture: Option<Fixture>,
    #[arg(long)]
    agents: Option<usize>,
    /// States per agent; one value applies to all agents.
    #[arg(long, value_delimiter = ',')]
    n_i: Option<Vec<usize>>,
    /// Inputs per agent; one value applies to all agents.
    #[arg(long, value_delimiter = ',')]
    m_i: Option<Vec<usize>>,
    /// Probability that an off-diagonal agent block is populated.
    #[arg(long)]
    density: Option<f64>,
    /// Number of time steps.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    noise_scale: Option<f64>,
}

#[derive(Args, Debug)]
struct SynthesizeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    mode: Option<SynthMode>,
    /// Block pattern, rows separated by `;`, e.g. `1,0;0,1`.
    #[arg(long)]
    sigma: Option<String>,
}

#[derive(Args, Debug)]
struct SparsifyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    conv_tol: Option<f64>,
    #[arg(long)]
    zero_tol: Option<f64>,
    #[arg(long, value_enum)]
    weights: Option<Weights>,
    /// Regularization of the epsilon weights `1/(‖K_ij‖ + ε)`.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    polish_tol: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args, Debug)]
struct ExhaustiveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    scan: Option<ScanMode>,
    /// Maximum number of patterns to test.
    #[arg(long)]
    budget: Option<usize>,
    /// Only test patterns with at most this many nonzero blocks.
    #[arg(long)]
    max_ones: Option<usize>,
    /// Allow more than 20 pattern bits.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// certificate.json, or a report.json holding a certificate.
    #[arg(long)]
    certificate: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// Print the verdicts as JSON.
    #[arg(long)]
    json: bool,
    /// Also write report.json here.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Perturb one benchmark measurement (negative control).
    #[arg(long, hide = true)]
    corrupt_fixture: bool,
    /// Size of the random soundness corpus.
    #[arg(long, hide = true)]
    fuzz_systems: Option<usize>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_common(cfg: &mut ExperimentConfig, c: &Common) {
    set(&mut cfg.seed, c.seed);
}

fn apply_data(cfg: &mut ExperimentConfig, d: &DataArgs) {
    cfg.x = d.x.clone().or(cfg.x.take());
    cfg.u = d.u.clone().or(cfg.u.take());
    cfg.w = d.w.clone().or(cfg.w.take());
    cfg.system = d.system.clone().or(cfg.system.take());
    cfg.b = d.b.clone().or(cfg.b.take());
    cfg.fixture = d.fixture.or(cfg.fixture);
    set(&mut cfg.noise_scale, d.noise_scale);
    cfg.p = d.p.clone().or(cfg.p.take());
    cfg.q = d.q.clone().or(cfg.q.take());
    set(&mut cfg.samples, d.samples);
}

/// Flags, then the config file on top.
fn resolve(mut cfg: ExperimentConfig, common: &Common) -> anyhow::Result<ExperimentConfig> {
    apply_common(&mut cfg, common);
    if let Some(file) = &common.config {
        cfg = cfg.overridden_by(file)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Simulate(a) => {
            let mut cfg = ExperimentConfig {
                fixture: a.fixture,
                ..Default::default()
            };
            set(&mut cfg.agents, a.agents);
            set(&mut cfg.n_i, a.n_i);
            set(&mut cfg.m_i, a.m_i);
            set(&mut cfg.density, a.density);
            set(&mut cfg.t, a.t);
            set(&mut cfg.noise_scale, a.noise_scale);
            let cfg = resolve(cfg, &a.common)?;
            commands::simulate(&cfg, &a.common.out, a.common.json)
        }
        Command::Synthesize(a) => {
            let mut cfg = ExperimentConfig::default();
            apply_data(&mut cfg, &a.data);
            set(&mut cfg.mode, a.mode);
            if let Some(s) = &a.sigma {
                cfg.sigma = Some(config::parse_pattern(s)?);
            }
            let cfg = resolve(cfg, &a.common)?;
            commands::synthesize(&cfg, &a.common.out, a.common.json)
        }
        Command::Sparsify(a) => {
            let mut cfg = ExperimentConfig::default();
            apply_data(&mut cfg, &a.data);
            set(&mut cfg.max_iter, a.max_iter);
            set(&mut cfg.conv_tol, a.conv_tol);
            set(&mut cfg.zero_tol, a.zero_tol);
            set(&mut cfg.weights, a.weights);
            set(&mut cfg.eps, a.eps);
            set(&mut cfg.polish_tol, a.polish_tol);
            set(&mut cfg.patience, a.patience);
            let cfg = resolve(cfg, &a.common)?;
            commands::sparsify(&cfg, &a.common.out, a.common.json)
        }
        Command::Exhaustive(a) => {
            let mut cfg = ExperimentConfig::default();
            apply_data(&mut cfg, &a.data);
            set(&mut cfg.scan, a.scan);
            cfg.budget = a.budget.or(cfg.budget);
            cfg.max_ones = a.max_ones.or(cfg.max_ones);
            cfg.force |= a.force;
            let cfg = resolve(cfg, &a.common)?;
            commands::exhaustive(&cfg, &a.common.out, a.common.json)
        }
        Command::Verify(a) => {
            let mut cfg = ExperimentConfig::default();
            apply_data(&mut cfg, &a.data);
            cfg.certificate = a.certificate.clone();
            let cfg = resolve(cfg, &a.common)?;
            commands::verify(&cfg, &a.common.out, a.common.json)
        }
        Command::ReproducePaper(a) => commands::reproduce(&a),
    }
}

/// Maps an error to its exit code.
fn exit_code(err: &anyhow::Error) -> u8 {
    use ddsparse::Error as E;
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    if let Some(e) = err.downcast_ref::<E>() {
        return match e {
            E::Solver(_) => EXIT_SOLVER,
            E::NotInformative(_) | E::DegenerateSet(_) => EXIT_INFEASIBLE,
            E::Dimension(_)
            | E::Partition(_)
            | E::NoiseModel(_)
            | E::NotPositiveDefinite(_)
            | E::InvalidArgument(_)
            | E::Structure(_)
            | E::Io(_)
            | E::Parse(_) => EXIT_CONFIG,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() || err.downcast_ref::<serde_json::Error>().is_some() {
        return EXIT_CONFIG;
    }
    EXIT_CRITERIA
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn error_codes() {
        let e: anyhow::Error = ddsparse::Error::Solver("x".into()).into();
        assert_eq!(exit_code(&e), EXIT_SOLVER);
        let e: anyhow::Error = ddsparse::Error::NotInformative("x".into()).into();
        assert_eq!(exit_code(&e), EXIT_INFEASIBLE);
        let e: anyhow::Error = ConfigError("x".into()).into();
        assert_eq!(exit_code(&e.context("while loading")), EXIT_CONFIG);
        let e: anyhow::Error = std::io::Error::new(std::io::ErrorKind::NotFound, "x").into();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), EXIT_CRITERIA);
    }

    #[test]
    fn subcommand_names() {
        let names: Vec<String> = Cli::command()
            .get_subcommands()
            .map(|c| c.get_name().to_string())
            .collect();
        assert_eq!(
            names,
            [
                "simulate",
                "synthesize",
                "sparsify",
                "exhaustive",
                "verify",
                "reproduce-paper"
            ]
        );
    }
}
