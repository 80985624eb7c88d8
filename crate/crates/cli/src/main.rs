//! `branchspec` — command-line front end for the spectral, counting and
//! averaging pipelines.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 numerical
//! failure, 4 a `--check` assertion failed.

mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<branchspec_core::Error> for CliError {
    fn from(e: branchspec_core::Error) -> Self {
        use branchspec_core::Error as E;
        match e {
            E::InvalidInput(_) | E::DegenerateInput(_) | E::NotAdmissible(_) | E::Regime { .. } | E::Sector { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "branchspec", version, about = "Spectra, zero counts and flow averages near a saddle level")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file (defaults are used for absent blocks).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run the command's acceptance assertions; exit 4 if one fails.
    #[arg(long, global = true)]
    check: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Also write an SVG plot.
    #[arg(long, global = true)]
    svg: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Chebyshev spectrum of (hD)² + V + iεW with the resolution filter.
    Spectrum,
    /// Skeleton, zeros of G, Bohr–Sommerfeld roots and their matching.
    Model,
    /// Skeleton curves and the body around them.
    Skeleton,
    /// Number of zeros of G in the model rectangle.
    Count,
    /// Bohr–Sommerfeld roots of the selected branches.
    Bs,
    /// Flow average, homological solution and correlations of a polynomial.
    Average,
    /// Critical points of the reduced function, or a region scan.
    Classify,
}

/// Result of one `--check` assertion.
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("BRANCHSPEC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("BRANCHSPEC_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    configure_threads()?;
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let run = commands::run(cli.command, &cfg, cli.check, cli.svg)?;
    run.outputs.write(&cli.out)?;
    if let Some(text) = &run.stdout {
        print!("{text}");
    }
    for name in run.outputs.names() {
        eprintln!("wrote {}", cli.out.join(name).display());
    }
    let mut ok = true;
    for c in &run.checks {
        eprintln!("check {}: {} {}", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
        ok &= c.pass;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("branchspec: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
