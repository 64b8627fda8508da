use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dckernel_cli::commands::{self, Context};
use dckernel_cli::config::RunConfig;
use dckernel_cli::error::{CliError, CliResult, EXIT_INPUT_ERROR};

/// Thread count for the internal pool; nothing else is read from the environment.
const THREADS_VAR: &str = "DCKERNEL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dckernel", version, about = "DC kernel toolkit: estimation, sampling and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// CSV data file with time, y and optional u columns.
    #[arg(long, global = true)]
    data: Option<PathBuf>,

    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Replaces every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Log progress at debug level.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Regularized impulse-response estimate from data.
    Estimate,
    /// Run the invariant suite and write a pass/fail report.
    Verify,
    /// Draw Gaussian process paths and their covariances.
    Sample,
    /// Truncated Mercer expansion against the exact kernel.
    Expand,
    /// RKHS norm of a configured function.
    Norm,
    /// Kernel matrix, its inverse and band structure.
    Tridiag,
}

fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Input(format!("{THREADS_VAR} must be a non-negative integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Input(format!("cannot configure {threads} threads: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    let ctx = Context::new(config, cli.out, cli.data);
    log::debug!("config hash {}", ctx.hash);
    let written = match cli.command {
        Command::Estimate => commands::estimate(&ctx),
        Command::Verify => commands::verify(&ctx),
        Command::Sample => commands::sample(&ctx),
        Command::Expand => commands::expand(&ctx),
        Command::Norm => commands::norm(&ctx),
        Command::Tridiag => commands::tridiag(&ctx),
    }?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT_ERROR as u8 } else { 0 });
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
