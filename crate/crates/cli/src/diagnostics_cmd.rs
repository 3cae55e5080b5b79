//! The `diagnostics` subcommand: weight distribution summaries for the
//! selected designs on a CSV dataset.

use std::fs::File;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use mhr_core::{
    estimate_ps, iptw_weights, multiply_robust_weights, weight_diagnostics, ArmWeightSummary,
    CsvSchema, WeightVector,
};

use crate::analyze_cmd::{labeled_sets, run_selection};
use crate::dataset;

#[derive(Debug, Args)]
pub struct DiagnosticsArgs {
    /// CSV dataset with time, event, and treatment columns.
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the treatment indicator column.
    #[arg(long, default_value = "treatment")]
    pub treatment_col: String,
    /// Name of the follow-up time column.
    #[arg(long, default_value = "time")]
    pub time_col: String,
    /// Name of the event indicator column.
    #[arg(long, default_value = "event")]
    pub event_col: String,
    /// Seed for the cross-validation folds of the selection step.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for a per-subject weights CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &DiagnosticsArgs) -> Result<()> {
    let schema = CsvSchema {
        time: args.time_col.clone(),
        event: args.event_col.clone(),
        treatment: args.treatment_col.clone(),
    };
    let loaded = dataset::load_dataset(&args.data, &schema)?;
    let data = &loaded.data;
    let sets = run_selection(data, args.seed)?;

    let mut models = Vec::with_capacity(4);
    for (label, set) in labeled_sets(&sets) {
        let model = estimate_ps(data, set)
            .with_context(|| format!("propensity model for {label} failed"))?;
        models.push(model);
    }
    let mut weightings: Vec<(&'static str, WeightVector)> = Vec::with_capacity(4);
    for (index, label) in [(0, "xhat_z"), (1, "xhat_y"), (2, "xhat_ds")] {
        let weights = iptw_weights(&models[index].fitted_ps, data.z())
            .with_context(|| format!("weights for {label} failed"))?;
        weightings.push((label, weights));
    }
    let robust = multiply_robust_weights(&models, data.z())
        .context("multiply robust weights failed")?;
    weightings.push(("xhat_rob", robust));

    println!("weight diagnostics by treatment arm");
    println!(
        "{:<9} {:<9} {:>5} {:>10} {:>9} {:>9}",
        "weighting", "arm", "n", "max", "ess", "extreme"
    );
    for (label, weights) in &weightings {
        let diag = weight_diagnostics(weights, data.z());
        print_arm(label, "treated", &diag.treated);
        print_arm(label, "untreated", &diag.untreated);
    }

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join("weights.csv");
        write_weights(&path, data.z(), &models, &weightings)?;
        println!();
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn print_arm(label: &str, arm: &str, summary: &ArmWeightSummary) {
    println!(
        "{:<9} {:<9} {:>5} {:>10.3} {:>9.3} {:>9}",
        label, arm, summary.n, summary.max_weight, summary.ess, summary.n_extreme
    );
}

/// Writes one row per subject: fitted propensities of the three
/// single-model designs, their inverse-probability weights, and the
/// multiply robust weight.
fn write_weights(
    path: &std::path::Path,
    z: &[u8],
    models: &[mhr_core::PropensityModel],
    weightings: &[(&'static str, WeightVector)],
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(File::create(path)?);
    writer.write_record([
        "subject", "treatment", "ps_xhat_z", "w_xhat_z", "ps_xhat_y", "w_xhat_y", "ps_xhat_ds",
        "w_xhat_ds", "w_xhat_rob",
    ])?;
    for i in 0..z.len() {
        writer.write_record([
            (i + 1).to_string(),
            z[i].to_string(),
            models[0].fitted_ps[i].to_string(),
            weightings[0].1.values()[i].to_string(),
            models[1].fitted_ps[i].to_string(),
            weightings[1].1.values()[i].to_string(),
            models[2].fitted_ps[i].to_string(),
            weightings[2].1.values()[i].to_string(),
            weightings[3].1.values()[i].to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
