//! Replicated scenario execution, aggregation, and CSV reports.
//!
//! Each replicate owns the random stream whose id equals its index, so
//! results do not depend on the scheduling order of the worker pool and a
//! rerun of the same configuration is byte-identical. Per-estimator
//! failures inside a replicate are recorded alongside the successes and
//! surface as failure counts in the aggregate, never as dropped rows.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::data::{CovariateSet, SurvivalDataset};
use crate::rng::RngStream;
use crate::selection::{derive_sets, select_xy, select_xz, SelectionDiagnostics};
use crate::selection::SelectedSets;
use crate::survival::{estimate_mhr, MhrEstimate};
use crate::weights::{estimate_ps, iptw_weights, multiply_robust_weights, PropensityModel};

use super::calibrate::ensure_calibrated;
use super::generate::generate_dataset;
use super::SimulateError;

/// Weighting strategies the runner can evaluate.
///
/// Oracle variants adjust for fixed covariate sets derived from the
/// generator's nonzero coefficients; selected variants adjust for sets
/// chosen by cross-validated lasso on the replicate's own data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    /// Inverse propensity weights on the treatment model support.
    OracleTreatment,
    /// Inverse propensity weights on the outcome model support.
    OracleOutcome,
    /// Inverse propensity weights on the intersection of the two supports
    /// (the true confounders).
    OracleIntersection,
    /// Inverse propensity weights on the union of the two supports.
    OracleUnion,
    /// Inverse propensity weights on every covariate; requires more
    /// subjects than covariates.
    OracleAll,
    /// Inverse propensity weights on the lasso-selected treatment set.
    SelectedTreatment,
    /// Inverse propensity weights on the lasso-selected outcome set.
    SelectedOutcome,
    /// Inverse propensity weights on the union of the selected sets.
    SelectedDouble,
    /// Multiply robust weights over all four selected sets.
    MultiplyRobust,
}

impl Estimator {
    /// Every estimator, in report order.
    pub const ALL: [Estimator; 9] = [
        Estimator::OracleTreatment,
        Estimator::OracleOutcome,
        Estimator::OracleIntersection,
        Estimator::OracleUnion,
        Estimator::OracleAll,
        Estimator::SelectedTreatment,
        Estimator::SelectedOutcome,
        Estimator::SelectedDouble,
        Estimator::MultiplyRobust,
    ];

    /// Short token used in configuration files and reports.
    pub fn label(self) -> &'static str {
        match self {
            Estimator::OracleTreatment => "x_z",
            Estimator::OracleOutcome => "x_y",
            Estimator::OracleIntersection => "x_int",
            Estimator::OracleUnion => "x_union",
            Estimator::OracleAll => "x_all",
            Estimator::SelectedTreatment => "xhat_z",
            Estimator::SelectedOutcome => "xhat_y",
            Estimator::SelectedDouble => "xhat_ds",
            Estimator::MultiplyRobust => "xhat_rob",
        }
    }

    /// Parses a configuration token; the inverse of [`Estimator::label`].
    pub fn parse_token(token: &str) -> Option<Estimator> {
        Estimator::ALL.into_iter().find(|e| e.label() == token)
    }

    /// Whether the estimator needs the per-replicate lasso selections.
    pub fn needs_selection(self) -> bool {
        matches!(
            self,
            Estimator::SelectedTreatment
                | Estimator::SelectedOutcome
                | Estimator::SelectedDouble
                | Estimator::MultiplyRobust
        )
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One replicated scenario: a generator configuration, a replicate count,
/// and the estimators to evaluate on each replicate.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    /// Identifier echoed into every report row.
    pub id: u32,
    /// Generator parameters; unresolved calibration fields are filled when
    /// the scenario runs.
    pub params: super::GeneratorParams,
    /// Number of Monte Carlo replicates (at least 1).
    pub replicates: usize,
    /// Estimators to evaluate, in report order (nonempty, no duplicates).
    pub estimators: Vec<Estimator>,
    /// Seed of the stream family; replicate `r` draws from stream `r`.
    pub base_seed: u64,
    /// Covariates counted as true positives in selection diagnostics.
    pub true_confounders: CovariateSet,
}

impl ScenarioConfig {
    /// Builds a configuration whose true confounders default to the
    /// intersection of the generator's treatment and outcome supports.
    pub fn new(
        id: u32,
        params: super::GeneratorParams,
        replicates: usize,
        estimators: Vec<Estimator>,
        base_seed: u64,
    ) -> Self {
        let true_confounders =
            params.treatment_support().intersection(&params.outcome_support());
        Self { id, params, replicates, estimators, base_seed, true_confounders }
    }

    fn validate(&self) -> Result<(), SimulateError> {
        self.params.validate()?;
        if self.replicates == 0 {
            return Err(SimulateError::InvalidParams(
                "a scenario needs at least one replicate".into(),
            ));
        }
        if self.estimators.is_empty() {
            return Err(SimulateError::InvalidParams(
                "a scenario needs at least one estimator".into(),
            ));
        }
        for (i, est) in self.estimators.iter().enumerate() {
            if self.estimators[..i].contains(est) {
                return Err(SimulateError::InvalidParams(format!(
                    "estimator {est} is listed twice"
                )));
            }
        }
        self.true_confounders
            .validate_for_width(self.params.p)
            .map_err(|e| SimulateError::InvalidParams(e.to_string()))?;
        Ok(())
    }
}

/// Outcome of one estimator on one replicate; failures keep their message.
#[derive(Debug, Clone)]
pub struct EstimateRecord {
    pub estimator: Estimator,
    pub outcome: Result<MhrEstimate, String>,
}

/// Lasso selections of one replicate with diagnostics against the true
/// confounders, ordered treatment, outcome, union, intersection.
#[derive(Debug, Clone)]
pub struct SelectionRecord {
    pub sets: SelectedSets,
    pub diagnostics: [SelectionDiagnostics; 4],
}

/// Labels for the four selected sets, matching the diagnostics order.
const SET_LABELS: [&str; 4] = ["xhat_z", "xhat_y", "xhat_ds", "xhat_i"];

/// Everything observed on one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimates: Vec<EstimateRecord>,
    pub selection: Option<SelectionRecord>,
}

/// Runs every configured estimator on replicate `replicate`.
///
/// The replicate draws all of its randomness from stream `replicate` of
/// the scenario's seed: first the dataset, then the selection folds, so
/// two configurations with the same generator and seed see identical data
/// regardless of which estimators they request. A dataset-level failure
/// marks every estimator failed; estimator-level failures are recorded
/// individually.
pub fn run_replicate(config: &ScenarioConfig, replicate: usize) -> ReplicateRecord {
    let mut rng = RngStream::new(config.base_seed, replicate as u64);
    let data = match generate_dataset(&config.params, &mut rng) {
        Ok(data) => data,
        Err(e) => return failed_replicate(config, replicate, &e.to_string()),
    };

    let mut selection = None;
    let mut selection_error = None;
    if config.estimators.iter().any(|e| e.needs_selection()) {
        match run_selection(config, &data, &mut rng) {
            Ok(record) => selection = Some(record),
            Err(message) => selection_error = Some(message),
        }
    }

    let mut ps_cache: Vec<(CovariateSet, Result<PropensityModel, String>)> = Vec::new();
    let estimates = config
        .estimators
        .iter()
        .map(|&estimator| EstimateRecord {
            estimator,
            outcome: run_estimator(
                estimator,
                config,
                &data,
                selection.as_ref(),
                selection_error.as_deref(),
                &mut ps_cache,
            ),
        })
        .collect();

    ReplicateRecord { replicate, estimates, selection }
}

fn failed_replicate(config: &ScenarioConfig, replicate: usize, message: &str) -> ReplicateRecord {
    let estimates = config
        .estimators
        .iter()
        .map(|&estimator| EstimateRecord { estimator, outcome: Err(message.to_string()) })
        .collect();
    ReplicateRecord { replicate, estimates, selection: None }
}

fn run_selection(
    config: &ScenarioConfig,
    data: &SurvivalDataset,
    rng: &mut RngStream,
) -> Result<SelectionRecord, String> {
    let xz = select_xz(data, rng).map_err(|e| format!("treatment selection: {e}"))?;
    let xy = select_xy(data, rng).map_err(|e| format!("outcome selection: {e}"))?;
    let sets = derive_sets(&xz, &xy);
    let diagnostics = sets.diagnostics(&config.true_confounders);
    Ok(SelectionRecord { sets, diagnostics })
}

fn run_estimator(
    estimator: Estimator,
    config: &ScenarioConfig,
    data: &SurvivalDataset,
    selection: Option<&SelectionRecord>,
    selection_error: Option<&str>,
    ps_cache: &mut Vec<(CovariateSet, Result<PropensityModel, String>)>,
) -> Result<MhrEstimate, String> {
    let weights = if estimator == Estimator::MultiplyRobust {
        let sets = &selected(estimator, selection, selection_error)?.sets;
        let models: Vec<PropensityModel> =
            [&sets.xz_hat, &sets.xy_hat, &sets.ds_hat, &sets.i_hat]
                .into_iter()
                .map(|set| propensity_for(set, data, ps_cache))
                .collect::<Result<_, _>>()?;
        multiply_robust_weights(&models, data.z()).map_err(|e| e.to_string())?
    } else {
        let set = design_set(estimator, config, selection, selection_error)?;
        let model = propensity_for(&set, data, ps_cache)?;
        iptw_weights(&model.fitted_ps, data.z()).map_err(|e| e.to_string())?
    };
    estimate_mhr(data, &weights).map_err(|e| e.to_string())
}

fn selected<'a>(
    estimator: Estimator,
    selection: Option<&'a SelectionRecord>,
    selection_error: Option<&str>,
) -> Result<&'a SelectionRecord, String> {
    selection.ok_or_else(|| {
        selection_error
            .map(str::to_string)
            .unwrap_or_else(|| format!("{estimator} requires the selection step"))
    })
}

fn design_set(
    estimator: Estimator,
    config: &ScenarioConfig,
    selection: Option<&SelectionRecord>,
    selection_error: Option<&str>,
) -> Result<CovariateSet, String> {
    let params = &config.params;
    match estimator {
        Estimator::OracleTreatment => Ok(params.treatment_support()),
        Estimator::OracleOutcome => Ok(params.outcome_support()),
        Estimator::OracleIntersection => {
            Ok(params.treatment_support().intersection(&params.outcome_support()))
        }
        Estimator::OracleUnion => {
            Ok(params.treatment_support().union(&params.outcome_support()))
        }
        Estimator::OracleAll => {
            if params.n <= params.p {
                return Err(format!(
                    "adjusting for all {} covariates requires more than {} subjects",
                    params.p, params.n
                ));
            }
            Ok(CovariateSet::new(1..=params.p).expect("contiguous positive range"))
        }
        Estimator::SelectedTreatment => {
            Ok(selected(estimator, selection, selection_error)?.sets.xz_hat.clone())
        }
        Estimator::SelectedOutcome => {
            Ok(selected(estimator, selection, selection_error)?.sets.xy_hat.clone())
        }
        Estimator::SelectedDouble => {
            Ok(selected(estimator, selection, selection_error)?.sets.ds_hat.clone())
        }
        Estimator::MultiplyRobust => unreachable!("handled by the multiply robust branch"),
    }
}

/// Fits the propensity model for `set`, reusing an earlier fit on the same
/// set within the replicate (several estimators often share a set).
fn propensity_for(
    set: &CovariateSet,
    data: &SurvivalDataset,
    cache: &mut Vec<(CovariateSet, Result<PropensityModel, String>)>,
) -> Result<PropensityModel, String> {
    if let Some((_, cached)) = cache.iter().find(|(s, _)| s == set) {
        return cached.clone();
    }
    let result = estimate_ps(data, set).map_err(|e| e.to_string());
    cache.push((set.clone(), result.clone()));
    result
}

/// Moments of the successful replicate estimates for one estimator.
#[derive(Debug, Clone, Copy)]
pub struct AggregateStats {
    /// Mean of the hazard ratio estimates.
    pub mean_mhr: f64,
    /// `mean_mhr` minus the true ratio.
    pub bias: f64,
    /// Bias divided by the true ratio.
    pub rel_bias: f64,
    /// Sample standard deviation of the estimates.
    pub sd: f64,
    /// `sqrt(bias^2 + sd^2)`.
    pub rmse: f64,
    /// Fraction of confidence intervals containing the true ratio.
    pub coverage: f64,
}

/// Summarizes successful estimates against the true marginal hazard ratio.
///
/// Needs at least two estimates; the standard deviation uses the `n - 1`
/// divisor and the root mean squared error is defined as
/// `sqrt(bias^2 + sd^2)`.
pub fn aggregate(
    estimates: &[MhrEstimate],
    true_mhr: f64,
) -> Result<AggregateStats, SimulateError> {
    if estimates.len() < 2 {
        return Err(SimulateError::TooFewReplicates {
            estimator: "(unnamed)".into(),
            successes: estimates.len(),
        });
    }
    let n = estimates.len() as f64;
    let mean_mhr = estimates.iter().map(|e| e.mhr).sum::<f64>() / n;
    let bias = mean_mhr - true_mhr;
    let sd = (estimates.iter().map(|e| (e.mhr - mean_mhr).powi(2)).sum::<f64>() / (n - 1.0))
        .sqrt();
    let covered = estimates.iter().filter(|e| e.covers(true_mhr)).count();
    Ok(AggregateStats {
        mean_mhr,
        bias,
        rel_bias: bias / true_mhr,
        sd,
        rmse: bias.hypot(sd),
        coverage: covered as f64 / n,
    })
}

/// Aggregate results of one estimator across a scenario's replicates.
#[derive(Debug, Clone)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub n_success: usize,
    pub n_failed: usize,
    pub stats: AggregateStats,
}

/// Selection quality of one selected set averaged across replicates.
#[derive(Debug, Clone)]
pub struct SetSummary {
    /// Which set: `xhat_z`, `xhat_y`, `xhat_ds`, or `xhat_i`.
    pub set: &'static str,
    pub mean_true_positives: f64,
    pub mean_f1: f64,
    pub max_f1: f64,
    pub mean_cardinality: f64,
    /// Replicates whose selection step succeeded.
    pub n_replicates: usize,
}

/// A completed scenario: aggregates plus every per-replicate record.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub id: u32,
    /// The target ratio the generator was calibrated to.
    pub true_mhr: f64,
    /// Calibrated treatment coefficient used by the generator.
    pub alpha_z_star: f64,
    /// Calibrated censoring bound used by the generator.
    pub theta: f64,
    pub estimators: Vec<EstimatorSummary>,
    /// Empty unless a selected estimator ran.
    pub selection: Vec<SetSummary>,
    pub replicates: Vec<ReplicateRecord>,
}

/// Validates a configuration, resolves its calibration fields, and drops
/// the all-covariate estimator with a warning when the cohort is not
/// taller than it is wide (that regression is infeasible).
///
/// The returned configuration is what [`run_replicate`] and
/// [`summarize_replicates`] expect.
pub fn prepare_scenario(config: &ScenarioConfig) -> Result<ScenarioConfig, SimulateError> {
    config.validate()?;
    let mut config = config.clone();
    ensure_calibrated(&mut config.params, config.base_seed)?;
    if config.params.n <= config.params.p
        && config.estimators.contains(&Estimator::OracleAll)
    {
        log::warn!(
            "scenario {}: dropping {} (n = {} <= p = {})",
            config.id,
            Estimator::OracleAll,
            config.params.n,
            config.params.p
        );
        config.estimators.retain(|e| *e != Estimator::OracleAll);
        if config.estimators.is_empty() {
            return Err(SimulateError::InvalidParams(
                "no estimator is feasible for this scenario".into(),
            ));
        }
    }
    Ok(config)
}

/// Runs a scenario: calibrates the generator if needed, executes the
/// replicates on the worker pool, and aggregates per estimator.
///
/// Fails if any estimator ends with fewer than two successes.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult, SimulateError> {
    let config = prepare_scenario(config)?;
    let replicates: Vec<ReplicateRecord> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(&config, r))
        .collect();
    summarize_replicates(&config, replicates)
}

/// Aggregates completed replicate records into a scenario result.
///
/// Expects a configuration from [`prepare_scenario`]. Failure counts are
/// relative to the records given, so a partial record list (for example
/// after an interrupted run) summarizes what completed.
pub fn summarize_replicates(
    config: &ScenarioConfig,
    replicates: Vec<ReplicateRecord>,
) -> Result<ScenarioResult, SimulateError> {
    let true_mhr = config.params.target_mhr;
    let mut estimators = Vec::with_capacity(config.estimators.len());
    for &estimator in &config.estimators {
        let successes: Vec<MhrEstimate> = replicates
            .iter()
            .flat_map(|record| &record.estimates)
            .filter(|er| er.estimator == estimator)
            .filter_map(|er| er.outcome.as_ref().ok().copied())
            .collect();
        let stats = aggregate(&successes, true_mhr).map_err(|e| match e {
            SimulateError::TooFewReplicates { successes, .. } => {
                SimulateError::TooFewReplicates {
                    estimator: estimator.label().into(),
                    successes,
                }
            }
            other => other,
        })?;
        estimators.push(EstimatorSummary {
            estimator,
            n_success: successes.len(),
            n_failed: replicates.len() - successes.len(),
            stats,
        });
    }

    let with_selection: Vec<&SelectionRecord> =
        replicates.iter().filter_map(|r| r.selection.as_ref()).collect();
    let selection = if with_selection.is_empty() {
        Vec::new()
    } else {
        let count = with_selection.len() as f64;
        (0..4)
            .map(|k| {
                let diag = with_selection.iter().map(|s| &s.diagnostics[k]);
                SetSummary {
                    set: SET_LABELS[k],
                    mean_true_positives: diag
                        .clone()
                        .map(|d| d.true_positive_count)
                        .sum::<f64>()
                        / count,
                    mean_f1: diag.clone().map(|d| d.f1).sum::<f64>() / count,
                    max_f1: diag.clone().map(|d| d.f1).fold(0.0, f64::max),
                    mean_cardinality: diag.map(|d| d.cardinality as f64).sum::<f64>() / count,
                    n_replicates: with_selection.len(),
                }
            })
            .collect()
    };

    Ok(ScenarioResult {
        id: config.id,
        true_mhr,
        alpha_z_star: config.params.resolved_alpha_z()?,
        theta: config.params.resolved_theta()?,
        estimators,
        selection,
        replicates,
    })
}

/// Writes the per-estimator aggregate table: one row per scenario and
/// estimator.
pub fn write_results_csv<W: Write>(
    writer: W,
    results: &[ScenarioResult],
) -> Result<(), SimulateError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "scenario", "estimator", "replicates", "failed", "mean_mhr", "bias", "rel_bias", "sd",
        "rmse", "coverage",
    ])?;
    for result in results {
        for summary in &result.estimators {
            let s = summary.stats;
            out.write_record([
                result.id.to_string(),
                summary.estimator.label().to_string(),
                (summary.n_success + summary.n_failed).to_string(),
                summary.n_failed.to_string(),
                s.mean_mhr.to_string(),
                s.bias.to_string(),
                s.rel_bias.to_string(),
                s.sd.to_string(),
                s.rmse.to_string(),
                s.coverage.to_string(),
            ])?;
        }
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes the raw per-replicate estimates, including failed rows.
pub fn write_replicates_csv<W: Write>(
    writer: W,
    results: &[ScenarioResult],
) -> Result<(), SimulateError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "scenario", "replicate", "estimator", "status", "mhr", "alpha_z", "robust_se",
        "ci_lower", "ci_upper", "covers_truth", "error",
    ])?;
    for result in results {
        for record in &result.replicates {
            for estimate in &record.estimates {
                let scenario = result.id.to_string();
                let replicate = record.replicate.to_string();
                let label = estimate.estimator.label().to_string();
                match &estimate.outcome {
                    Ok(e) => out.write_record([
                        scenario,
                        replicate,
                        label,
                        "ok".to_string(),
                        e.mhr.to_string(),
                        e.alpha_z.to_string(),
                        e.robust_se.to_string(),
                        e.ci_lower.to_string(),
                        e.ci_upper.to_string(),
                        u8::from(e.covers(result.true_mhr)).to_string(),
                        String::new(),
                    ])?,
                    Err(message) => out.write_record([
                        scenario,
                        replicate,
                        label,
                        "failed".to_string(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        message.clone(),
                    ])?,
                }
            }
        }
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes per-replicate selection diagnostics: one row per replicate and
/// selected set.
pub fn write_selection_csv<W: Write>(
    writer: W,
    results: &[ScenarioResult],
) -> Result<(), SimulateError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "scenario", "replicate", "set", "cardinality", "true_positives", "f1",
    ])?;
    for result in results {
        for record in &result.replicates {
            let Some(selection) = &record.selection else { continue };
            for (k, diag) in selection.diagnostics.iter().enumerate() {
                out.write_record([
                    result.id.to_string(),
                    record.replicate.to_string(),
                    SET_LABELS[k].to_string(),
                    diag.cardinality.to_string(),
                    diag.true_positive_count.to_string(),
                    diag.f1.to_string(),
                ])?;
            }
        }
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::GeneratorParams;
    use approx::assert_abs_diff_eq;

    fn estimate(mhr: f64, half_width: f64) -> MhrEstimate {
        MhrEstimate {
            alpha_z: mhr.ln(),
            mhr,
            robust_se: 0.1,
            ci_lower: mhr - half_width,
            ci_upper: mhr + half_width,
        }
    }

    #[test]
    fn estimator_tokens_round_trip() {
        let expected = [
            "x_z", "x_y", "x_int", "x_union", "x_all", "xhat_z", "xhat_y", "xhat_ds",
            "xhat_rob",
        ];
        for (est, token) in Estimator::ALL.into_iter().zip(expected) {
            assert_eq!(est.label(), token);
            assert_eq!(Estimator::parse_token(token), Some(est));
        }
        assert_eq!(Estimator::parse_token("xhat_q"), None);
    }

    #[test]
    fn aggregate_matches_hand_worked_examples() {
        let constant = vec![estimate(2.0, 0.5); 3];
        let stats = aggregate(&constant, 2.0).unwrap();
        assert_eq!(stats.mean_mhr, 2.0);
        assert_eq!(stats.bias, 0.0);
        assert_eq!(stats.rel_bias, 0.0);
        assert_eq!(stats.sd, 0.0);
        assert_eq!(stats.rmse, 0.0);
        assert_eq!(stats.coverage, 1.0);

        let pair = vec![estimate(1.9, 0.05), estimate(2.1, 0.2)];
        let stats = aggregate(&pair, 2.0).unwrap();
        assert_abs_diff_eq!(stats.mean_mhr, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(stats.sd, 0.02_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(stats.rmse, 0.02_f64.sqrt(), epsilon = 1e-12);
        // Only the second interval contains the truth.
        assert_abs_diff_eq!(stats.coverage, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn aggregate_satisfies_error_decomposition() {
        let values = [1.7, 2.2, 2.05, 1.95, 2.4, 1.6];
        let estimates: Vec<MhrEstimate> =
            values.iter().map(|v| estimate(*v, 0.3)).collect();
        let stats = aggregate(&estimates, 2.0).unwrap();
        assert_abs_diff_eq!(
            stats.rmse * stats.rmse,
            stats.bias * stats.bias + stats.sd * stats.sd,
            epsilon = 1e-10
        );
    }

    #[test]
    fn aggregate_rejects_single_estimate() {
        let err = aggregate(&[estimate(2.0, 0.5)], 2.0).unwrap_err();
        assert!(matches!(err, SimulateError::TooFewReplicates { successes: 1, .. }));
    }

    #[test]
    fn aggregation_is_order_invariant() {
        let values = [1.7, 2.2, 2.05, 1.95, 2.4, 1.6, 2.33];
        let forward: Vec<MhrEstimate> = values.iter().map(|v| estimate(*v, 0.3)).collect();
        let mut reversed = forward.clone();
        reversed.reverse();
        let a = aggregate(&forward, 2.0).unwrap();
        let b = aggregate(&reversed, 2.0).unwrap();
        assert_abs_diff_eq!(a.mean_mhr, b.mean_mhr, epsilon = 1e-12);
        assert_abs_diff_eq!(a.sd, b.sd, epsilon = 1e-12);
        assert_abs_diff_eq!(a.rmse, b.rmse, epsilon = 1e-12);
        assert_eq!(a.coverage, b.coverage);
    }

    fn oracle_config() -> ScenarioConfig {
        let mut params = GeneratorParams::new(400, 10);
        params.alpha_z_star = Some(std::f64::consts::LN_2);
        ScenarioConfig::new(
            1,
            params,
            4,
            vec![
                Estimator::OracleTreatment,
                Estimator::OracleOutcome,
                Estimator::OracleIntersection,
                Estimator::OracleUnion,
            ],
            31,
        )
    }

    #[test]
    fn oracle_scenario_runs_and_reruns_identically() {
        let config = oracle_config();
        assert_eq!(config.true_confounders.indices(), &[1, 2, 3, 4]);
        let result = run_scenario(&config).unwrap();
        assert_eq!(result.true_mhr, 2.0);
        assert!(result.theta.is_infinite());
        assert_eq!(result.replicates.len(), 4);
        assert!(result.selection.is_empty());
        assert_eq!(result.estimators.len(), 4);
        for summary in &result.estimators {
            assert_eq!(summary.n_success, 4, "{} failed", summary.estimator);
            assert_eq!(summary.n_failed, 0);
            assert!(
                summary.stats.mean_mhr > 1.0 && summary.stats.mean_mhr < 4.0,
                "{} mean {}",
                summary.estimator,
                summary.stats.mean_mhr
            );
        }

        // Reruns are byte-identical in every report.
        let again = run_scenario(&config).unwrap();
        let render = |r: &ScenarioResult| {
            let mut results = Vec::new();
            let mut reps = Vec::new();
            write_results_csv(&mut results, std::slice::from_ref(r)).unwrap();
            write_replicates_csv(&mut reps, std::slice::from_ref(r)).unwrap();
            (results, reps)
        };
        assert_eq!(render(&result), render(&again));
    }

    #[test]
    fn selected_scenario_records_selection_diagnostics() {
        let mut params = GeneratorParams::new(150, 10);
        params.alpha_z_star = Some(std::f64::consts::LN_2);
        let config = ScenarioConfig::new(
            2,
            params,
            8,
            vec![
                Estimator::SelectedTreatment,
                Estimator::SelectedDouble,
                Estimator::MultiplyRobust,
            ],
            32,
        );
        let result = run_scenario(&config).unwrap();
        assert_eq!(result.selection.len(), 4);
        for summary in &result.selection {
            assert_eq!(summary.n_replicates, 8);
            assert!(summary.mean_cardinality <= 10.0);
            assert!(summary.max_f1 >= summary.mean_f1);
        }
        assert_eq!(
            result.selection.iter().map(|s| s.set).collect::<Vec<_>>(),
            vec!["xhat_z", "xhat_y", "xhat_ds", "xhat_i"]
        );
        for summary in &result.estimators {
            assert!(
                summary.n_success >= 7,
                "{} succeeded only {} times",
                summary.estimator,
                summary.n_success
            );
        }

        let mut buffer = Vec::new();
        write_selection_csv(&mut buffer, std::slice::from_ref(&result)).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        // Header plus four rows per replicate with a successful selection.
        assert_eq!(text.lines().count(), 1 + 4 * 8);
    }

    #[test]
    fn infeasible_full_adjustment_is_dropped() {
        let mut params = GeneratorParams::new(100, 120);
        params.alpha_z_star = Some(std::f64::consts::LN_2);
        let config = ScenarioConfig::new(
            3,
            params.clone(),
            3,
            vec![Estimator::OracleAll, Estimator::OracleIntersection],
            33,
        );
        let result = run_scenario(&config).unwrap();
        assert_eq!(result.estimators.len(), 1);
        assert_eq!(result.estimators[0].estimator, Estimator::OracleIntersection);

        let only_all =
            ScenarioConfig::new(4, params, 3, vec![Estimator::OracleAll], 33);
        assert!(matches!(
            run_scenario(&only_all),
            Err(SimulateError::InvalidParams(_))
        ));
    }

    #[test]
    fn replicate_failures_are_recorded_not_dropped() {
        // Unset calibration makes dataset generation fail, so every
        // estimator on the replicate carries the failure message.
        let params = GeneratorParams::new(60, 10);
        let config = ScenarioConfig::new(
            5,
            params,
            2,
            vec![Estimator::OracleIntersection, Estimator::OracleTreatment],
            34,
        );
        let record = run_replicate(&config, 0);
        assert_eq!(record.estimates.len(), 2);
        for estimate in &record.estimates {
            let message = estimate.outcome.as_ref().unwrap_err();
            assert!(message.contains("alpha_z_star"), "message: {message}");
        }

        // A wide cohort fails only the full-adjustment estimator when the
        // runner is bypassed and the replicate is asked for it directly.
        let mut wide = GeneratorParams::new(50, 60);
        wide.alpha_z_star = Some(0.0);
        let config = ScenarioConfig::new(
            6,
            wide,
            2,
            vec![Estimator::OracleAll, Estimator::OracleIntersection],
            35,
        );
        let record = run_replicate(&config, 1);
        assert!(record.estimates[0].outcome.is_err());
        assert!(record.estimates[1].outcome.is_ok());
    }

    #[test]
    fn results_csv_has_one_row_per_estimator() {
        let result = run_scenario(&oracle_config()).unwrap();
        let mut buffer = Vec::new();
        write_results_csv(&mut buffer, std::slice::from_ref(&result)).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(
            lines[0],
            "scenario,estimator,replicates,failed,mean_mhr,bias,rel_bias,sd,rmse,coverage"
        );
        assert!(lines[1].starts_with("1,x_z,4,0,"));

        let mut buffer = Vec::new();
        write_replicates_csv(&mut buffer, std::slice::from_ref(&result)).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        // Header plus one row per replicate and estimator.
        assert_eq!(text.lines().count(), 1 + 4 * 4);
        assert!(text.lines().skip(1).all(|line| line.contains(",ok,")));
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let mut params = GeneratorParams::new(100, 10);
        params.alpha_z_star = Some(0.0);
        let base = ScenarioConfig::new(
            7,
            params,
            2,
            vec![Estimator::OracleIntersection],
            36,
        );

        let mut none = base.clone();
        none.estimators.clear();
        assert!(run_scenario(&none).is_err());

        let mut zero = base.clone();
        zero.replicates = 0;
        assert!(run_scenario(&zero).is_err());

        let mut dup = base.clone();
        dup.estimators =
            vec![Estimator::OracleIntersection, Estimator::OracleIntersection];
        assert!(run_scenario(&dup).is_err());

        let mut wide_truth = base;
        wide_truth.true_confounders = CovariateSet::new([11]).unwrap();
        assert!(run_scenario(&wide_truth).is_err());
    }
}
