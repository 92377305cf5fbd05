use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod error;
mod run;

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(
    name = "neqfdt",
    version,
    about = "Nonequilibrium response spectra, curl-flux reports and FDR checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides output.directory)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweeps
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override model.junction.strict_paper_rates
    #[arg(long, global = true, action = clap::ArgAction::Set)]
    strict_paper_rates: Option<bool>,
}

#[derive(Subcommand)]
enum Command {
    /// Response spectra with the equilibrium/nonequilibrium split
    Spectrum,
    /// Curl-flux decomposition and detailed-balance verdict
    Flux,
    /// Coth fluctuation-dissipation check for a thermal model
    FdrCheck,
    /// Invariant suite
    Validate,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let cfg = RunConfig::load(&path)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start thread pool: {e}")))?;
    }
    if cli.strict_paper_rates.is_some() && cfg.model.junction.is_none() {
        log::warn!("--strict-paper-rates has no effect on a generic model");
    }
    let points = run::points(&cfg, cli.strict_paper_rates)?;
    let out = cli.out.unwrap_or_else(|| cfg.output.directory.clone());
    let written = match cli.command {
        Command::Spectrum => run::run_spectrum(&cfg, &points, &out)?,
        Command::Flux => run::run_flux(&points, &cfg.output.prefix, &out)?,
        Command::FdrCheck => run::run_fdr(&cfg, &points, &out)?,
        Command::Validate => {
            run::run_validate(&cfg, &points)?;
            Vec::new()
        }
    };
    for p in written {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
