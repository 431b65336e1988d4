//! Command-line driver for the `clar` solvers, simulator and benchmark harness.
//!
//! Exit codes: `0` on success or convergence, `1` on any error (including usage
//! errors), `2` when a solve stopped at its sweep cap.

pub mod commands;
pub mod io;
pub mod manifest;

use std::ffi::OsString;

use anyhow::{Context, Result};
use clap::Parser;

use crate::commands::{manifest_threads, Command, Outcome};

/// Environment variable capping the worker thread count.
pub const THREADS_VAR: &str = "CLAR_THREADS";

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_ITERATION_CAP: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "clar", version, about = "Concomitant lasso with repetitions: solve, simulate, benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn env_threads() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Ok(raw) => {
            let threads: usize = raw.trim().parse().with_context(|| format!("{THREADS_VAR}={raw:?}"))?;
            anyhow::ensure!(threads > 0, "{THREADS_VAR} must be positive");
            Ok(Some(threads))
        }
        Err(_) => Ok(None),
    }
}

/// Worker count: `CLAR_THREADS`, else the count recorded in a replayed manifest,
/// else the available parallelism.
fn thread_count(command: &Command) -> Result<usize> {
    if let Some(threads) = env_threads()? {
        return Ok(threads);
    }
    if let Command::Replay(args) = command {
        if let Some(threads) = manifest_threads(&args.manifest)? {
            return Ok(threads);
        }
    }
    Ok(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let threads = thread_count(&cli.command)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    pool.install(|| cli.command.run(threads))
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(Outcome::Converged) => EXIT_OK,
        Ok(Outcome::IterationCap) => {
            log::warn!("stopped at the sweep cap before meeting the stopping rule");
            EXIT_ITERATION_CAP
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            EXIT_ERROR
        }
    }
}
