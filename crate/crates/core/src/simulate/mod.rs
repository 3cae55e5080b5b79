//! Synthetic data generation and the Monte Carlo study driver.
//!
//! The generator produces high-dimensional covariates with a repeating
//! block pattern, assigns treatment from a logistic model with adjustable
//! overlap, and draws Weibull event times whose treatment coefficient is
//! calibrated so the population marginal hazard ratio hits a requested
//! target. The runner executes replicated scenarios over a list of
//! estimators, records every per-replicate outcome, and aggregates bias,
//! variability, and confidence interval coverage.

mod calibrate;
mod generate;
mod runner;

pub use calibrate::{
    calibrate_alpha_z, calibrate_theta, calibrated_alpha_z, calibrated_theta,
    ensure_calibrated, realized_censoring_rate, realized_mhr,
};
pub use generate::{
    apply_censoring, augment_noise_columns, event_time_from_uniform, generate_covariates,
    generate_dataset, generate_event_times, generate_treatment, treatment_probabilities,
};
pub use runner::{
    aggregate, prepare_scenario, run_replicate, run_scenario, summarize_replicates,
    write_replicates_csv, write_results_csv, write_selection_csv, AggregateStats,
    EstimateRecord, Estimator, EstimatorSummary, ReplicateRecord, ScenarioConfig,
    ScenarioResult, SelectionRecord, SetSummary,
};

use crate::data::{CovariateSet, DataError};
use crate::survival::SurvivalError;
use crate::weights::WeightError;
use thiserror::Error;

/// Default treatment model coefficients; indices past the end act as zero.
pub const DEFAULT_BETA_BASE: [f64; 7] = [0.8, -0.25, 0.6, -0.4, -0.8, -0.5, 0.7];

/// Default outcome model coefficients; indices past the end act as zero.
pub const DEFAULT_ALPHA: [f64; 10] =
    [0.3, -0.36, -0.73, -0.2, 0.0, 0.0, 0.0, 0.71, -0.19, 0.26];

/// Default Weibull shape parameter.
pub const DEFAULT_ETA: f64 = 2.0;

/// Default Weibull rate parameter.
pub const DEFAULT_GAMMA: f64 = 2e-5;

/// Default number of subjects in calibration populations.
pub const DEFAULT_CALIBRATION_SIZE: usize = 200_000;

/// Errors raised by data generation, calibration, and the scenario runner.
#[derive(Debug, Error)]
pub enum SimulateError {
    /// A generator or scenario parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    /// The bisection endpoints do not straddle the calibration target.
    #[error(
        "calibration bracket [{lo}, {hi}] maps to [{f_lo:.4}, {f_hi:.4}], \
         which does not straddle the target {target}"
    )]
    BracketFailure { lo: f64, hi: f64, f_lo: f64, f_hi: f64, target: f64 },
    /// No finite censoring bound reaches the requested rate.
    #[error("no censoring bound reaches the target rate {target}")]
    RateUnreachable { target: f64 },
    /// Fewer than two replicates succeeded for an estimator, so spread and
    /// coverage are undefined.
    #[error("estimator {estimator} succeeded in only {successes} replicate(s); need at least 2")]
    TooFewReplicates { estimator: String, successes: usize },
    /// Dataset construction rejected generated values.
    #[error(transparent)]
    Data(#[from] DataError),
    /// A calibration model fit failed.
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    /// Weight construction failed outside the per-replicate recording path.
    #[error(transparent)]
    Weight(#[from] WeightError),
    /// A CSV report could not be written.
    #[error("report output failed: {0}")]
    Csv(#[from] csv::Error),
}

/// Parameters of the synthetic cohort generator.
///
/// Covariates repeat a ten-column block (four standard normal, six
/// Bernoulli(0.5)); treatment follows a logistic model in the covariates
/// with the linear predictor scaled by `k`; event times are Weibull with
/// shape `eta` and rate `gamma` under a proportional hazards model whose
/// treatment coefficient `alpha_z_star` and censoring bound `theta` are
/// usually calibrated rather than chosen directly.
#[derive(Debug, Clone)]
pub struct GeneratorParams {
    /// Number of subjects per replicate.
    pub n: usize,
    /// Number of covariate columns.
    pub p: usize,
    /// Overlap multiplier on the treatment model linear predictor; 0 gives
    /// a randomized cohort, larger values give more extreme propensities.
    pub k: f64,
    /// Treatment model coefficients on the leading covariates.
    pub beta_base: Vec<f64>,
    /// Outcome model coefficients on the leading covariates.
    pub alpha: Vec<f64>,
    /// Weibull shape parameter (must be positive).
    pub eta: f64,
    /// Weibull rate parameter (must be positive).
    pub gamma: f64,
    /// Treatment coefficient in the event time model; `None` until
    /// calibrated against `target_mhr`.
    pub alpha_z_star: Option<f64>,
    /// Population marginal hazard ratio the calibration targets.
    pub target_mhr: f64,
    /// Fraction of subjects censored in expectation; 0 disables censoring.
    pub censoring_rate: f64,
    /// Upper bound of the uniform censoring distribution; `None` until
    /// calibrated against `censoring_rate`.
    pub theta: Option<f64>,
    /// Number of subjects in calibration populations.
    pub calibration_size: usize,
}

impl GeneratorParams {
    /// Default generator for a cohort of `n` subjects and `p` covariates:
    /// unit overlap multiplier, the standard coefficient vectors, Weibull
    /// shape 2 and rate 2e-5, target marginal hazard ratio 2, and no
    /// censoring.
    pub fn new(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            k: 1.0,
            beta_base: DEFAULT_BETA_BASE.to_vec(),
            alpha: DEFAULT_ALPHA.to_vec(),
            eta: DEFAULT_ETA,
            gamma: DEFAULT_GAMMA,
            alpha_z_star: None,
            target_mhr: 2.0,
            censoring_rate: 0.0,
            theta: None,
            calibration_size: DEFAULT_CALIBRATION_SIZE,
        }
    }

    /// Checks every field against its documented range.
    pub fn validate(&self) -> Result<(), SimulateError> {
        if self.n == 0 {
            return Err(SimulateError::InvalidParams("n must be positive".into()));
        }
        if self.p == 0 {
            return Err(SimulateError::InvalidParams("p must be positive".into()));
        }
        if !self.k.is_finite() || self.k < 0.0 {
            return Err(SimulateError::InvalidParams(format!(
                "overlap multiplier k must be finite and nonnegative, got {}",
                self.k
            )));
        }
        for (name, coefs) in [("beta_base", &self.beta_base), ("alpha", &self.alpha)] {
            if coefs.iter().any(|c| !c.is_finite()) {
                return Err(SimulateError::InvalidParams(format!(
                    "{name} contains a non-finite coefficient"
                )));
            }
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(SimulateError::InvalidParams(format!(
                "eta must be finite and positive, got {}",
                self.eta
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(SimulateError::InvalidParams(format!(
                "gamma must be finite and positive, got {}",
                self.gamma
            )));
        }
        if let Some(a) = self.alpha_z_star {
            if !a.is_finite() {
                return Err(SimulateError::InvalidParams(
                    "alpha_z_star must be finite".into(),
                ));
            }
        }
        if !(self.target_mhr.is_finite() && self.target_mhr > 0.0) {
            return Err(SimulateError::InvalidParams(format!(
                "target_mhr must be finite and positive, got {}",
                self.target_mhr
            )));
        }
        if !(self.censoring_rate >= 0.0 && self.censoring_rate < 1.0) {
            return Err(SimulateError::InvalidParams(format!(
                "censoring_rate must lie in [0, 1), got {}",
                self.censoring_rate
            )));
        }
        if let Some(t) = self.theta {
            if t.is_nan() || t <= 0.0 {
                return Err(SimulateError::InvalidParams(format!(
                    "theta must be positive (or infinite for no censoring), got {t}"
                )));
            }
        }
        if self.calibration_size < 100 {
            return Err(SimulateError::InvalidParams(format!(
                "calibration_size must be at least 100, got {}",
                self.calibration_size
            )));
        }
        Ok(())
    }

    /// Treatment coefficient, or an error if calibration has not run.
    pub fn resolved_alpha_z(&self) -> Result<f64, SimulateError> {
        self.alpha_z_star.ok_or_else(|| {
            SimulateError::InvalidParams(
                "alpha_z_star is unset; run calibration before generating data".into(),
            )
        })
    }

    /// Censoring bound, or an error if calibration has not run.
    pub fn resolved_theta(&self) -> Result<f64, SimulateError> {
        self.theta.ok_or_else(|| {
            SimulateError::InvalidParams(
                "theta is unset; run calibration before generating data".into(),
            )
        })
    }

    /// One-based indices of the nonzero treatment model coefficients that
    /// fall inside the covariate width.
    pub fn treatment_support(&self) -> CovariateSet {
        nonzero_support(&self.beta_base, self.p)
    }

    /// One-based indices of the nonzero outcome model coefficients that
    /// fall inside the covariate width.
    pub fn outcome_support(&self) -> CovariateSet {
        nonzero_support(&self.alpha, self.p)
    }
}

fn nonzero_support(coefs: &[f64], p: usize) -> CovariateSet {
    let indices: Vec<usize> = coefs
        .iter()
        .enumerate()
        .filter(|(j, c)| *j < p && **c != 0.0)
        .map(|(j, _)| j + 1)
        .collect();
    CovariateSet::new(indices).expect("positive in-range indices")
}
