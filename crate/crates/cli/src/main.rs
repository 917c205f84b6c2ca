//! `kawarada` command-line driver.
//!
//! Exit codes: 0 success, 1 invalid config or input, 2 blocked by a strict
//! guard, 3 numeric failure, 4 grid too large for the dense oracle,
//! 5 a verification check failed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use kawarada_core::harness::{self, Checkpoint, Perturbation, TauSchedule, LIVE_MAX_V_CAP};
use kawarada_core::spectral::{self, OracleCap, ORACLE_CAP_ENV};
use kawarada_core::{Error, RunConfig, RunSetup, StabilityMode};

#[derive(Parser)]
#[command(name = "kawarada", version, about = "Semi-adaptive LOD solver for degenerate quenching problems")]
struct Cli {
    /// Dense-oracle unknown cap (also read from KAWARADA_ORACLE_CAP).
    #[arg(long, global = true, env = ORACLE_CAP_ENV, value_parser = parse_cap)]
    oracle_cap: Option<OracleCap>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate until quench or the horizon and write the trace.
    Run(RunArgs),
    /// Check the matrix properties of the scheme on the config grid.
    Verify(VerifyArgs),
    /// Twin-run perturbation study.
    Stability(StabilityArgs),
    /// Fixed-step runs under step refinement.
    Convergence(ConvergenceArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Refuse to start when a blocking guard fails.
    #[arg(long)]
    strict: bool,
    /// JSON-lines trace path (overrides output.trace).
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV export path (overrides output.csv).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Checkpoint path (overrides output.checkpoint).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint instead of the initial state.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Step size for the factor checks (defaults to stepping.tau0).
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Frozen,
    Live,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "frozen")]
    mode: Mode,
    /// Perturbation magnitude.
    #[arg(long, default_value_t = 1e-8)]
    mag: f64,
    /// Step size (defaults to stepping.tau0).
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Live runs stop once either twin reaches this value.
    #[arg(long, default_value_t = LIVE_MAX_V_CAP)]
    max_v: f64,
    /// Result path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated step sizes, at least three.
    #[arg(long, value_delimiter = ',', required = true)]
    taus: Vec<f64>,
    /// Common comparison time measured from t0.
    #[arg(long)]
    t_common: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_cap(s: &str) -> Result<OracleCap, String> {
    OracleCap::parse(s).map_err(|e| e.to_string())
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::EmptyGrid
            | Error::InvalidGrid(_)
            | Error::InvalidInput(_)
            | Error::Config(_)
            | Error::Io(_)
            | Error::Json(_) => 1,
            Error::GuardBlocked { .. } => 2,
            Error::GridTooLarge { .. } => 4,
            _ => 3,
        };
        Failure { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cap = cli.oracle_cap.unwrap_or_default();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => cmd_verify(args, cap),
        Command::Stability(args) => cmd_stability(args, cap),
        Command::Convergence(args) => cmd_convergence(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load(common: &Common) -> Result<(RunConfig, RunSetup), Failure> {
    let mut config = RunConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let setup = config.setup()?;
    Ok((config, setup))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn emit_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            let mut w = create(path)?;
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let (config, mut setup) = load(&args.common)?;
    setup.strict |= args.strict;
    let trace = match &args.resume {
        Some(path) => harness::resume(&setup, &Checkpoint::load(path)?),
        None => harness::run(&setup),
    };
    let trace = match trace {
        Err(e @ Error::GuardBlocked { .. }) => {
            if let Error::GuardBlocked { report, .. } = &e {
                eprintln!("{}", serde_json::to_string_pretty(report).unwrap_or_default());
            }
            return Err(e.into());
        }
        other => other?,
    };

    let out = &config.output;
    if let Some(path) = args.out.as_ref().or(out.trace.as_ref()) {
        trace.save_jsonl(path)?;
    }
    if let Some(path) = args.csv.as_ref().or(out.csv.as_ref()) {
        trace.save_csv(path)?;
    }
    if let Some(path) = args.checkpoint.as_ref().or(out.checkpoint.as_ref()) {
        trace.checkpoint().save(path)?;
    }

    let footer = trace.footer();
    println!("{}", serde_json::to_string(&footer).map_err(Error::from)?);
    if trace.outcome.is_error() {
        return Err(Failure { code: 3, error: anyhow::anyhow!("run stopped with {:?}", trace.outcome) });
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs, cap: OracleCap) -> CmdResult {
    let (_, setup) = load(&args.common)?;
    let tau = args.tau.unwrap_or(setup.tau0);
    let report = match spectral::verify(&setup.mesh, &setup.spec, tau, cap) {
        Err(e @ Error::GridTooLarge { .. }) => {
            return Err(Failure {
                code: 4,
                error: anyhow::Error::from(e)
                    .context(format!("use a smaller verification grid or raise {ORACLE_CAP_ENV}")),
            })
        }
        other => other?,
    };
    print!("{}", report.table());
    if report.any_failed() {
        return Err(Failure { code: 5, error: anyhow::anyhow!("verification failed") });
    }
    Ok(())
}

fn cmd_stability(args: StabilityArgs, cap: OracleCap) -> CmdResult {
    let (config, setup) = load(&args.common)?;
    let tau = args.tau.unwrap_or(setup.tau0);
    let mode = match args.mode {
        Mode::Frozen => StabilityMode::Frozen,
        Mode::Live => StabilityMode::Live,
    };
    let perturbation = Perturbation { seed: config.seed, magnitude: args.mag };
    let schedule = TauSchedule::Fixed { tau, steps: args.steps };
    let result = harness::stability_run(&setup, &schedule, mode, perturbation, args.max_v, cap)?;
    emit_json(&result, args.out.as_deref())?;
    if result.degenerate {
        return Err(Failure { code: 1, error: anyhow::anyhow!("zero perturbation: the stability ratio is undefined") });
    }
    if !result.within_envelope {
        log::warn!("perturbation growth left the envelope");
    }
    Ok(())
}

fn cmd_convergence(args: ConvergenceArgs) -> CmdResult {
    let (_, setup) = load(&args.common)?;
    let table = harness::convergence_study(&setup, &args.taus, args.t_common)?;
    emit_json(&table, args.out.as_deref())?;
    Ok(())
}
