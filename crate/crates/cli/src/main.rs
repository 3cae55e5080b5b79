//! Command-line interface for marginal hazard ratio estimation in
//! high-dimensional survival data: Monte Carlo simulation, dataset
//! analysis, generator calibration, and weight diagnostics.

mod analyze_cmd;
mod cache;
mod calibrate_cmd;
mod config;
mod dataset;
mod diagnostics_cmd;
mod interrupt;
mod simulate_cmd;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

/// Marginal hazard ratio estimation for high-dimensional survival data.
#[derive(Parser)]
#[command(name = "mhr", version, about)]
struct Cli {
    /// Worker threads for replicate-level parallelism; defaults to the
    /// MHR_WORKERS environment variable, then to the number of CPUs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Monte Carlo scenarios from a config file and write reports.
    Simulate(simulate_cmd::SimulateArgs),
    /// Select covariates and estimate the marginal hazard ratio on a CSV
    /// dataset.
    Analyze(analyze_cmd::AnalyzeArgs),
    /// Resolve generator parameters hitting target effect and censoring
    /// levels.
    Calibrate(calibrate_cmd::CalibrateArgs),
    /// Summarize the weight distributions of the selected designs on a
    /// CSV dataset.
    Diagnostics(diagnostics_cmd::DiagnosticsArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .init();
    let cli = Cli::parse();
    interrupt::install();
    let outcome = configure_workers(cli.workers).and_then(|_| match &cli.command {
        Command::Simulate(args) => simulate_cmd::run(args),
        Command::Analyze(args) => analyze_cmd::run(args).map(|_| 0),
        Command::Calibrate(args) => calibrate_cmd::run(args).map(|_| 0),
        Command::Diagnostics(args) => diagnostics_cmd::run(args).map(|_| 0),
    });
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}

/// Builds the global worker pool. An explicit `--workers` wins, then the
/// `MHR_WORKERS` environment variable; with neither, the pool keeps its
/// default size (one thread per CPU).
fn configure_workers(flag: Option<usize>) -> Result<()> {
    let requested = match flag {
        Some(workers) => Some(workers),
        None => match std::env::var("MHR_WORKERS") {
            Ok(value) => {
                Some(value.parse().context("MHR_WORKERS must be a positive integer")?)
            }
            Err(_) => None,
        },
    };
    if let Some(workers) = requested {
        if workers == 0 {
            bail!("worker count must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("worker pool already configured")?;
    }
    Ok(())
}
