//! The `simulate` subcommand: run Monte Carlo scenarios from a config
//! file, write aggregate and replicate-level CSV reports, and record a
//! manifest describing exactly what produced them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::Args;
use mhr_core::{
    prepare_scenario, run_replicate, summarize_replicates, write_replicates_csv,
    write_results_csv, write_selection_csv, ReplicateRecord, ScenarioConfig, ScenarioResult,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::cache::{fnv1a64, CalibrationCache};
use crate::calibrate_cmd::filter_scenarios;
use crate::config;
use crate::interrupt;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario configuration: a file path or the built-in name "paper".
    #[arg(long, default_value = "paper")]
    pub config: String,
    /// Output directory for the CSV reports and run manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict the run to these scenario ids (repeatable or comma
    /// separated).
    #[arg(long = "scenario", value_delimiter = ',')]
    pub scenarios: Vec<u32>,
    /// Override the base seed of every scenario.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the replicate count of every scenario.
    #[arg(long)]
    pub replicates: Option<usize>,
}

/// Everything needed to reproduce or audit a run. Written as
/// `manifest.json` next to the CSV reports it describes.
#[derive(Serialize)]
struct RunManifest {
    version: String,
    config: String,
    config_hash: String,
    seed_override: Option<u64>,
    replicates_override: Option<usize>,
    scenario_filter: Vec<u32>,
    workers: usize,
    started_unix_seconds: u64,
    elapsed_seconds: f64,
    interrupted: bool,
    scenarios: Vec<ScenarioEntry>,
    outputs: Vec<OutputEntry>,
}

#[derive(Serialize)]
struct ScenarioEntry {
    id: u32,
    base_seed: u64,
    replicates_requested: usize,
    replicates_completed: usize,
    runtime_seconds: f64,
    alpha_z_star: f64,
    /// Censoring bound; absent means censoring is disabled.
    theta: Option<f64>,
    /// Estimator-level failure counts by estimator label.
    failures: BTreeMap<String, usize>,
}

#[derive(Serialize)]
struct OutputEntry {
    name: String,
    fnv1a64: String,
}

pub fn run(args: &SimulateArgs) -> Result<i32> {
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);

    let text = config::resolve_config_text(&args.config)?;
    let mut scenarios = config::load_scenarios(&text)?;
    filter_scenarios(&mut scenarios, &args.scenarios)?;
    for scenario in &mut scenarios {
        if let Some(seed) = args.seed {
            scenario.base_seed = seed;
        }
        if let Some(replicates) = args.replicates {
            scenario.replicates = replicates;
        }
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let mut cache = CalibrationCache::load(&args.out);

    let mut results: Vec<ScenarioResult> = Vec::new();
    let mut entries: Vec<ScenarioEntry> = Vec::new();
    let mut interrupted = false;
    let mut failure: Option<anyhow::Error> = None;

    for scenario in &scenarios {
        if interrupt::requested() {
            interrupted = true;
            break;
        }
        let scenario_start = Instant::now();
        let mut config = scenario.clone();
        let cached = cache.fill(&mut config.params, config.base_seed)
            && config.params.alpha_z_star.is_some()
            && config.params.theta.is_some();
        if cached {
            eprintln!("scenario {}: calibration loaded from cache", config.id);
        } else {
            eprintln!("scenario {}: calibrating generator", config.id);
        }
        let prepared = match prepare_scenario(&config) {
            Ok(prepared) => prepared,
            Err(err) => {
                failure = Some(
                    anyhow::Error::new(err).context(format!("scenario {} failed", config.id)),
                );
                break;
            }
        };
        cache.record(&prepared.params, prepared.base_seed)?;
        if let Err(err) = cache.save() {
            log::warn!("cannot persist calibration cache: {err:#}");
        }

        eprintln!(
            "scenario {}: running {} replicates on {} workers",
            prepared.id,
            prepared.replicates,
            rayon::current_num_threads()
        );
        let records: Vec<ReplicateRecord> = (0..prepared.replicates)
            .into_par_iter()
            .filter_map(|replicate| {
                if interrupt::requested() {
                    return None;
                }
                Some(run_replicate(&prepared, replicate))
            })
            .collect();
        let completed = records.len();
        if interrupt::requested() {
            interrupted = true;
        }

        let result = match summarize_replicates(&prepared, records.clone()) {
            Ok(result) => result,
            Err(err) if interrupted => {
                eprintln!(
                    "scenario {}: interrupted with too few replicates to aggregate; \
                     keeping the raw records",
                    prepared.id
                );
                let _ = err;
                shell_result(&prepared, records)
            }
            Err(err) => {
                // Keep the raw records of the failing scenario for a
                // postmortem, then stop the run.
                let shell = shell_result(&prepared, records);
                entries.push(entry_for(
                    &prepared,
                    completed,
                    scenario_start.elapsed().as_secs_f64(),
                    &shell,
                ));
                results.push(shell);
                failure = Some(
                    anyhow::Error::new(err)
                        .context(format!("scenario {} failed", prepared.id)),
                );
                break;
            }
        };
        print_scenario_report(&prepared, &result);
        entries.push(entry_for(
            &prepared,
            completed,
            scenario_start.elapsed().as_secs_f64(),
            &result,
        ));
        results.push(result);
        // Flush after every scenario so a hard crash later loses at most
        // the scenario in flight.
        write_reports(&args.out, &results)?;
        if interrupted {
            break;
        }
    }

    let outputs = write_reports(&args.out, &results)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: args.config.clone(),
        config_hash: format!("{:016x}", fnv1a64(text.as_bytes())),
        seed_override: args.seed,
        replicates_override: args.replicates,
        scenario_filter: args.scenarios.clone(),
        workers: rayon::current_num_threads(),
        started_unix_seconds: started_unix,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        interrupted,
        scenarios: entries,
        outputs,
    };
    let manifest_path = args.out.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).context("cannot render manifest")?;
    std::fs::write(&manifest_path, json)
        .with_context(|| format!("cannot write {}", manifest_path.display()))?;

    if let Some(err) = failure {
        eprintln!("partial results written to {}", args.out.display());
        return Err(err);
    }
    if interrupted {
        eprintln!("interrupted; partial results written to {}", args.out.display());
        return Ok(interrupt::EXIT_INTERRUPTED);
    }
    println!();
    println!("wrote {}", args.out.join("results.csv").display());
    Ok(0)
}

/// A result that carries raw replicate records but no aggregates, used
/// when a scenario ends with fewer than two usable replicates.
fn shell_result(config: &ScenarioConfig, records: Vec<ReplicateRecord>) -> ScenarioResult {
    ScenarioResult {
        id: config.id,
        true_mhr: config.params.target_mhr,
        alpha_z_star: config.params.resolved_alpha_z().unwrap_or(f64::NAN),
        theta: config.params.resolved_theta().unwrap_or(f64::NAN),
        estimators: Vec::new(),
        selection: Vec::new(),
        replicates: records,
    }
}

fn entry_for(
    config: &ScenarioConfig,
    completed: usize,
    runtime_seconds: f64,
    result: &ScenarioResult,
) -> ScenarioEntry {
    let mut failures: BTreeMap<String, usize> = BTreeMap::new();
    for record in &result.replicates {
        for estimate in &record.estimates {
            if estimate.outcome.is_err() {
                *failures.entry(estimate.estimator.label().to_string()).or_insert(0) += 1;
            }
        }
    }
    ScenarioEntry {
        id: config.id,
        base_seed: config.base_seed,
        replicates_requested: config.replicates,
        replicates_completed: completed,
        runtime_seconds,
        alpha_z_star: result.alpha_z_star,
        theta: if result.theta.is_finite() { Some(result.theta) } else { None },
        failures,
    }
}

fn print_scenario_report(config: &ScenarioConfig, result: &ScenarioResult) {
    println!();
    println!(
        "scenario {} (n = {}, p = {}): true mhr {:.3}, alpha_z {:.3}, theta {:.3}",
        result.id,
        config.params.n,
        config.params.p,
        result.true_mhr,
        result.alpha_z_star,
        result.theta
    );
    println!(
        "{:<9} {:>5} {:>6} {:>9} {:>8} {:>9} {:>8} {:>8} {:>9}",
        "estimator", "reps", "failed", "mean_mhr", "bias", "rel_bias", "sd", "rmse", "coverage"
    );
    for summary in &result.estimators {
        let s = &summary.stats;
        println!(
            "{:<9} {:>5} {:>6} {:>9.3} {:>8.3} {:>9.3} {:>8.3} {:>8.3} {:>9.3}",
            summary.estimator.label(),
            summary.n_success,
            summary.n_failed,
            s.mean_mhr,
            s.bias,
            s.rel_bias,
            s.sd,
            s.rmse,
            s.coverage
        );
    }
    if !result.selection.is_empty() {
        println!(
            "{:<8} {:>5} {:>8} {:>8} {:>8} {:>10}",
            "set", "reps", "mean_tp", "mean_f1", "max_f1", "mean_card"
        );
        for set in &result.selection {
            println!(
                "{:<8} {:>5} {:>8.3} {:>8.3} {:>8.3} {:>10.3}",
                set.set,
                set.n_replicates,
                set.mean_true_positives,
                set.mean_f1,
                set.max_f1,
                set.mean_cardinality
            );
        }
    }
}

/// Writes the three CSV reports and returns their content digests.
fn write_reports(dir: &Path, results: &[ScenarioResult]) -> Result<Vec<OutputEntry>> {
    let mut outputs = Vec::with_capacity(3);
    let mut buffer = Vec::new();
    write_results_csv(&mut buffer, results).context("cannot render results.csv")?;
    flush_report(dir, "results.csv", &buffer, &mut outputs)?;

    buffer.clear();
    write_replicates_csv(&mut buffer, results).context("cannot render replicates.csv")?;
    flush_report(dir, "replicates.csv", &buffer, &mut outputs)?;

    buffer.clear();
    write_selection_csv(&mut buffer, results).context("cannot render selection.csv")?;
    flush_report(dir, "selection.csv", &buffer, &mut outputs)?;
    Ok(outputs)
}

fn flush_report(
    dir: &Path,
    name: &str,
    content: &[u8],
    outputs: &mut Vec<OutputEntry>,
) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, content)
        .with_context(|| format!("cannot write {}", path.display()))?;
    outputs.push(OutputEntry {
        name: name.to_string(),
        fnv1a64: format!("{:016x}", fnv1a64(content)),
    });
    Ok(())
}
