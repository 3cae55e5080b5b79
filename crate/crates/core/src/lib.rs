//! Marginal hazard ratio (MHR) estimation for high-dimensional observational
//! survival data.
//!
//! The crate implements the full estimation pipeline: lasso-based covariate
//! selection for treatment and outcome models, inverse-probability and
//! multiply robust weighting, weighted Cox regression for the marginal
//! hazard ratio with a robust sandwich variance, and a Monte Carlo harness
//! for evaluating the estimators on synthetic cohorts.

pub mod data;
pub mod lasso;
mod linalg;
pub mod rng;
pub mod selection;
pub mod simulate;
pub mod survival;
pub mod weights;

pub use data::{
    read_csv_dataset, read_csv_dataset_from, write_csv_dataset, CovariateSet, CsvDataset,
    CsvSchema, DataError, SurvivalDataset, WeightKind, WeightVector,
};
pub use lasso::{
    cross_validate, fit_cox_lasso, fit_logistic, fit_logistic_lasso, CvKind, CvResult,
    LassoError, LassoPath, LogisticFit,
};
pub use rng::{
    RngStream, RESERVED_STREAM_BASE, STREAM_AUGMENT, STREAM_CALIBRATE_CENSORING,
    STREAM_CALIBRATE_MHR, STREAM_VALIDATION,
};
pub use selection::{
    derive_sets, select_all, select_xy, select_xz, selection_diagnostics, SelectedSets,
    SelectionDiagnostics, SelectionError,
};
pub use simulate::{
    aggregate, apply_censoring, augment_noise_columns, calibrate_alpha_z, calibrate_theta,
    calibrated_alpha_z, calibrated_theta, ensure_calibrated, generate_covariates, generate_dataset,
    generate_event_times, generate_treatment, prepare_scenario, realized_censoring_rate,
    realized_mhr, run_replicate, run_scenario, summarize_replicates,
    treatment_probabilities, write_replicates_csv, write_results_csv, write_selection_csv,
    AggregateStats, EstimateRecord, Estimator, EstimatorSummary, GeneratorParams,
    ReplicateRecord, ScenarioConfig, ScenarioResult, SelectionRecord, SetSummary,
    SimulateError, DEFAULT_ALPHA, DEFAULT_BETA_BASE, DEFAULT_CALIBRATION_SIZE, DEFAULT_ETA,
    DEFAULT_GAMMA,
};
pub use survival::{
    estimate_mhr, fit_weighted_cox, harrell_concordance, partial_loglik, partial_score,
    robust_sandwich_variance, CoxDesign, CoxFit, MhrEstimate, SurvivalError,
};
pub use weights::{
    estimate_ps, iptw_weights, multiply_robust_weights, multiply_robust_weights_with_state,
    weight_diagnostics, ArmWeightSummary, MrSolverState, PropensityModel, WeightDiagnostics,
    WeightError,
};
