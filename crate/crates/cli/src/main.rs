//! `dpnc`: batch runner for the private decentralized optimizer.
//!
//! Exit codes: 0 success, 1 configuration or validation error, 2 numerical
//! divergence.

mod commands;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpnc_core::config::ConfigError;

/// Output directory override when `--out` is absent.
pub const OUT_DIR_ENV: &str = "DPNC_OUT_DIR";

#[derive(Parser)]
#[command(name = "dpnc", version, about = "Differentially-private decentralized nonconvex optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run and write its trace CSV and summary JSON.
    Run(CommonArgs),
    /// Final optimization error across a noise-variance sweep.
    Table1(CommonArgs),
    /// Coupled-trajectory saddle-escape experiment.
    Coupling(CommonArgs),
    /// Per-iteration ε for the configured schedule and variance.
    PrivacyReport(CommonArgs),
    /// Built-in property checks.
    Verify {
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Args, Clone, Debug)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; falls back to $DPNC_OUT_DIR, then the current directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Overrides the config's record_every (run only).
    #[arg(long)]
    pub record_every: Option<usize>,
}

impl CommonArgs {
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, ConfigError>
where
    T: Send,
{
    match jobs {
        None => Ok(f()),
        Some(0) => Err(ConfigError::Invalid("--jobs must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| ConfigError::Invalid(format!("cannot start thread pool: {e}"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => with_jobs(a.jobs, || commands::cmd_run(a)).and_then(|r| r),
        Command::Table1(a) => with_jobs(a.jobs, || commands::cmd_table1(a)).and_then(|r| r),
        Command::Coupling(a) => with_jobs(a.jobs, || commands::cmd_coupling(a)).and_then(|r| r),
        Command::PrivacyReport(a) => commands::cmd_privacy_report(a),
        Command::Verify { jobs } => {
            return match with_jobs(*jobs, verify::cmd_verify) {
                Ok(code) => code,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_divergence() { 2 } else { 1 })
        }
    }
}
