//! The `analyze` subcommand: covariate selection and marginal hazard
//! ratio estimation on a user-supplied CSV dataset.

use std::fs::File;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use mhr_core::{
    derive_sets, estimate_mhr, estimate_ps, iptw_weights, multiply_robust_weights, select_xy,
    select_xz, CovariateSet, CsvSchema, MhrEstimate, RngStream, SelectedSets, SurvivalDataset,
};

use crate::dataset::{self, LoadedData};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// CSV dataset with time, event, and treatment columns; every other
    /// column is treated as a covariate.
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
    /// Append independent noise covariates until there are as many
    /// covariates as subjects.
    #[arg(long)]
    pub augment: bool,
    /// Seed for the appended noise covariates.
    #[arg(long, default_value_t = 0)]
    pub augment_seed: u64,
    /// Seed for the cross-validation folds of the selection step.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for full-precision CSV copies of the printed tables.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl AnalyzeArgs {
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            time: self.time_col.clone(),
            event: self.event_col.clone(),
            treatment: self.treatment_col.clone(),
        }
    }
}

/// Selection output paired with display labels, in report order.
pub fn labeled_sets(sets: &SelectedSets) -> [(&'static str, &CovariateSet); 4] {
    [
        ("xhat_z", &sets.xz_hat),
        ("xhat_y", &sets.xy_hat),
        ("xhat_ds", &sets.ds_hat),
        ("xhat_i", &sets.i_hat),
    ]
}

/// Runs the lasso selection steps on the shared fold stream.
///
/// The convention matches the simulation runner: the treatment-model
/// selection consumes the stream first, then the outcome-model selection,
/// so results are reproducible by direct library calls on stream 0 of the
/// seed.
pub fn run_selection(data: &SurvivalDataset, seed: u64) -> Result<SelectedSets> {
    let mut rng = RngStream::new(seed, 0);
    let xz = select_xz(data, &mut rng).context("treatment-model selection failed")?;
    let xy = select_xy(data, &mut rng).context("outcome-model selection failed")?;
    Ok(derive_sets(&xz, &xy))
}

/// Estimates the marginal hazard ratio once per selected design:
/// inverse-probability weights for the three single-model sets, then the
/// multiply robust weights over all four.
pub fn run_estimates(
    data: &SurvivalDataset,
    sets: &SelectedSets,
) -> Result<Vec<(&'static str, MhrEstimate)>> {
    let mut models = Vec::with_capacity(4);
    for (label, set) in labeled_sets(sets) {
        let model = estimate_ps(data, set)
            .with_context(|| format!("propensity model for {label} failed"))?;
        models.push(model);
    }

    let mut estimates = Vec::with_capacity(4);
    for (index, label) in [(0, "xhat_z"), (1, "xhat_y"), (2, "xhat_ds")] {
        let weights = iptw_weights(&models[index].fitted_ps, data.z())
            .with_context(|| format!("weights for {label} failed"))?;
        let estimate = estimate_mhr(data, &weights)
            .with_context(|| format!("estimate for {label} failed"))?;
        estimates.push((label, estimate));
    }
    let robust = multiply_robust_weights(&models, data.z())
        .context("multiply robust weights failed")?;
    let estimate =
        estimate_mhr(data, &robust).context("estimate for xhat_rob failed")?;
    estimates.push(("xhat_rob", estimate));
    Ok(estimates)
}

pub fn run(args: &AnalyzeArgs) -> Result<()> {
    let mut loaded = dataset::load_dataset(&args.data, &args.schema())?;
    println!(
        "dataset: {} subjects, {} covariates, {} events, {} treated",
        loaded.data.n(),
        loaded.data.p(),
        loaded.data.n_events(),
        loaded.data.n_treated()
    );
    if args.augment {
        let added = dataset::augment(&mut loaded, args.augment_seed)?;
        if added > 0 {
            println!("appended {} noise covariates; now {} covariates", added, loaded.data.p());
        }
    }

    let sets = run_selection(&loaded.data, args.seed)?;
    println!();
    println!("selected covariate sets");
    println!("{:<8} {:>4}  covariates", "set", "size");
    for (label, set) in labeled_sets(&sets) {
        let names = loaded.names_of(set.indices());
        println!("{:<8} {:>4}  {}", label, set.len(), names.join(", "));
    }

    let estimates = run_estimates(&loaded.data, &sets)?;
    println!();
    println!("marginal hazard ratio estimates (95% confidence intervals)");
    println!("{:<9} {:>8} {:>9} {:>9}", "estimator", "mhr", "ci_lower", "ci_upper");
    for (label, est) in &estimates {
        println!(
            "{:<9} {:>8.3} {:>9.3} {:>9.3}",
            label, est.mhr, est.ci_lower, est.ci_upper
        );
    }

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))?;
        write_outputs(dir, &loaded, &sets, &estimates)?;
        println!();
        println!("wrote {}", dir.join("estimates.csv").display());
    }
    Ok(())
}

/// Writes full-precision copies of the printed tables.
fn write_outputs(
    dir: &std::path::Path,
    loaded: &LoadedData,
    sets: &SelectedSets,
    estimates: &[(&'static str, MhrEstimate)],
) -> Result<()> {
    let path = dir.join("selected_sets.csv");
    let mut writer = csv::Writer::from_writer(File::create(&path)?);
    writer.write_record(["set", "cardinality", "covariates"])?;
    for (label, set) in labeled_sets(sets) {
        let names = loaded.names_of(set.indices());
        writer.write_record([label, &set.len().to_string(), &names.join(";")])?;
    }
    writer.flush()?;

    let path = dir.join("estimates.csv");
    let mut writer = csv::Writer::from_writer(File::create(&path)?);
    writer.write_record(["estimator", "mhr", "alpha_z", "robust_se", "ci_lower", "ci_upper"])?;
    for (label, est) in estimates {
        writer.write_record([
            label.to_string(),
            est.mhr.to_string(),
            est.alpha_z.to_string(),
            est.robust_se.to_string(),
            est.ci_lower.to_string(),
            est.ci_upper.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
