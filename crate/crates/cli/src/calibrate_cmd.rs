//! The `calibrate` subcommand: resolve the generator parameters that hit
//! each scenario's target effect size and censoring rate, validate them
//! on a fresh population, and emit a parameter file.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use mhr_core::{
    ensure_calibrated, realized_censoring_rate, realized_mhr, RngStream, ScenarioConfig,
    STREAM_VALIDATION,
};

use crate::cache::CalibrationCache;
use crate::config;

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Scenario configuration: a file path or the built-in name "paper".
    #[arg(long, default_value = "paper")]
    pub config: String,
    /// Restrict to these scenario ids (repeatable or comma separated).
    #[arg(long = "scenario", value_delimiter = ',')]
    pub scenarios: Vec<u32>,
    /// Override the base seed of every scenario.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file for the calibrated parameters; printed to stdout when
    /// omitted. The calibration cache lives next to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &CalibrateArgs) -> Result<()> {
    let text = config::resolve_config_text(&args.config)?;
    let mut scenarios = config::load_scenarios(&text)?;
    filter_scenarios(&mut scenarios, &args.scenarios)?;
    if let Some(seed) = args.seed {
        for scenario in &mut scenarios {
            scenario.base_seed = seed;
        }
    }

    let cache_dir = args.out.as_deref().and_then(|p| p.parent()).map(|d| {
        if d.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            d.to_path_buf()
        }
    });
    if let Some(dir) = &cache_dir {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let mut cache = cache_dir.as_deref().map(CalibrationCache::load);

    let mut entries = toml::Table::new();
    println!(
        "{:>8} {:>12} {:>12} {:>12} {:>14}",
        "scenario", "alpha_z", "theta", "mhr", "censoring"
    );
    for scenario in &scenarios {
        let mut params = scenario.params.clone();
        let from_cache = cache
            .as_ref()
            .map(|c| c.fill(&mut params, scenario.base_seed))
            .unwrap_or(false);
        if from_cache && params.alpha_z_star.is_some() && params.theta.is_some() {
            eprintln!("scenario {}: calibration loaded from cache", scenario.id);
        }
        ensure_calibrated(&mut params, scenario.base_seed)
            .with_context(|| format!("calibration for scenario {} failed", scenario.id))?;
        if let Some(cache) = cache.as_mut() {
            cache.record(&params, scenario.base_seed)?;
            if let Err(err) = cache.save() {
                log::warn!("cannot persist calibration cache: {err:#}");
            }
        }

        // Validate on a fresh population: the stream is distinct from both
        // calibration streams, so these draws never overlap the fit.
        let mut rng = RngStream::new(scenario.base_seed, STREAM_VALIDATION);
        let achieved_mhr = realized_mhr(&params, params.calibration_size, &mut rng)
            .with_context(|| format!("validation for scenario {} failed", scenario.id))?;
        let achieved_rate =
            realized_censoring_rate(&params, params.calibration_size, &mut rng)
                .with_context(|| format!("validation for scenario {} failed", scenario.id))?;

        let alpha_z = params.resolved_alpha_z()?;
        let theta = params.resolved_theta()?;
        println!(
            "{:>8} {:>12.3} {:>12.3} {:>12.3} {:>14.3}",
            scenario.id, alpha_z, theta, achieved_mhr, achieved_rate
        );

        let mut entry = toml::Table::new();
        entry.insert("target_mhr".into(), params.target_mhr.into());
        entry.insert("alpha_z_star".into(), alpha_z.into());
        entry.insert("target_censoring_rate".into(), params.censoring_rate.into());
        entry.insert("theta".into(), theta.into());
        entry.insert("achieved_mhr".into(), achieved_mhr.into());
        entry.insert("achieved_censoring_rate".into(), achieved_rate.into());
        entries.insert(scenario.id.to_string(), toml::Value::Table(entry));
    }

    let mut root = toml::Table::new();
    root.insert("scenario".into(), toml::Value::Table(entries));
    let rendered = toml::to_string_pretty(&root).context("cannot render parameter file")?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, rendered)
                .with_context(|| format!("cannot write {}", path.display()))?;
            println!();
            println!("wrote {}", path.display());
        }
        None => {
            println!();
            print!("{rendered}");
        }
    }
    Ok(())
}

/// Retains only the requested scenario ids, erroring on unknown ones.
pub fn filter_scenarios(scenarios: &mut Vec<ScenarioConfig>, requested: &[u32]) -> Result<()> {
    if requested.is_empty() {
        return Ok(());
    }
    for id in requested {
        if !scenarios.iter().any(|s| s.id == *id) {
            bail!("scenario {id} is not defined in the config");
        }
    }
    scenarios.retain(|s| requested.contains(&s.id));
    Ok(())
}
