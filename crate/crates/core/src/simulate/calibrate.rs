//! Calibration of the generator's treatment coefficient and censoring bound.
//!
//! Both routines fix one calibration population drawn from a reserved
//! stream and bisect a scalar parameter against a target measured on that
//! population, so repeated evaluations see common random numbers and the
//! objective is deterministic and monotone in the parameter.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use ndarray::Array2;
use rand::distr::Open01;
use rand::Rng;

use crate::data::{SurvivalDataset, WeightVector};
use crate::rng::{RngStream, STREAM_CALIBRATE_CENSORING, STREAM_CALIBRATE_MHR};
use crate::survival::{fit_weighted_cox, CoxDesign};

use super::generate::{
    apply_censoring, event_time_from_uniform, generate_covariates, generate_event_times,
    generate_treatment,
};
use super::{GeneratorParams, SimulateError};

/// Bisection stops once the population marginal hazard ratio is this close
/// to its target.
const MHR_TOL: f64 = 0.005;

/// Bisection stops once the population censoring rate is this close to its
/// target.
const RATE_TOL: f64 = 0.005;

/// Maximum bisection steps before returning the current midpoint.
const MAX_BISECTIONS: usize = 60;

/// Search interval for the treatment coefficient.
const ALPHA_BRACKET: (f64, f64) = (-5.0, 5.0);

/// A randomized cohort with uncensored event times, reused across
/// candidate treatment coefficients.
///
/// Treatment is Bernoulli(0.5) independent of the covariates, so the
/// univariate treatment-only fit estimates the marginal hazard ratio
/// directly. Times are stored at coefficient zero; under the Weibull
/// model, changing the coefficient to `a` multiplies every treated time
/// by `exp(-a / eta)`, which lets one set of uniform draws serve every
/// candidate.
struct MhrPopulation {
    base_time: Vec<f64>,
    z: Vec<u8>,
    inv_eta: f64,
}

impl MhrPopulation {
    fn build(params: &GeneratorParams, rng: &mut RngStream) -> Self {
        let n = params.calibration_size;
        // Only covariates with nonzero outcome coefficients shift event
        // times, so the population is drawn at the effective width.
        let p = params.p.min(params.alpha.len());
        let x = generate_covariates(n, p, rng);
        let z: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let active = params.alpha.len().min(p);
        let base_time = (0..n)
            .map(|i| {
                let mut lp = 0.0;
                for j in 0..active {
                    lp += params.alpha[j] * x[[i, j]];
                }
                let u: f64 = rng.sample(Open01);
                event_time_from_uniform(u, lp, params.eta, params.gamma)
            })
            .collect();
        Self { base_time, z, inv_eta: 1.0 / params.eta }
    }

    /// Population marginal hazard ratio at treatment coefficient `a`.
    fn mhr(&self, a: f64) -> Result<f64, SimulateError> {
        let factor = (-a * self.inv_eta).exp();
        let n = self.base_time.len();
        let time: Vec<f64> = self
            .base_time
            .iter()
            .zip(&self.z)
            .map(|(t, &zi)| if zi == 1 { t * factor } else { *t })
            .collect();
        let data =
            SurvivalDataset::from_parts(Array2::zeros((n, 0)), self.z.clone(), time, vec![1; n])?;
        let fit = fit_weighted_cox(&data, &CoxDesign::treatment_only(), &WeightVector::unit(n))?;
        Ok(fit.coefficients[0].exp())
    }
}

/// Finds the treatment coefficient whose population marginal hazard ratio
/// equals `target_mhr`.
///
/// Draws one calibration population of `params.calibration_size` subjects
/// from `rng`, then bisects over the coefficient in `[-5, 5]`. Stops when
/// the ratio is within 0.005 of the target or after 60 steps, returning
/// the midpoint either way. Fails with `BracketFailure` when the target
/// lies outside the ratios attained at the interval endpoints.
pub fn calibrate_alpha_z(
    target_mhr: f64,
    params: &GeneratorParams,
    rng: &mut RngStream,
) -> Result<f64, SimulateError> {
    params.validate()?;
    if !(target_mhr.is_finite() && target_mhr > 0.0) {
        return Err(SimulateError::InvalidParams(format!(
            "target marginal hazard ratio must be finite and positive, got {target_mhr}"
        )));
    }
    let population = MhrPopulation::build(params, rng);
    let (mut lo, mut hi) = ALPHA_BRACKET;
    let f_lo = population.mhr(lo)?;
    if (f_lo - target_mhr).abs() <= MHR_TOL {
        return Ok(lo);
    }
    let f_hi = population.mhr(hi)?;
    if (f_hi - target_mhr).abs() <= MHR_TOL {
        return Ok(hi);
    }
    if !(f_lo < target_mhr && target_mhr < f_hi) {
        return Err(SimulateError::BracketFailure { lo, hi, f_lo, f_hi, target: target_mhr });
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTIONS {
        mid = 0.5 * (lo + hi);
        let value = population.mhr(mid)?;
        if (value - target_mhr).abs() <= MHR_TOL {
            return Ok(mid);
        }
        if value < target_mhr {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}

/// A cohort generated under the full treatment and outcome models, reused
/// across candidate censoring bounds.
struct CensoringPopulation {
    time: Vec<f64>,
}

impl CensoringPopulation {
    fn build(params: &GeneratorParams, rng: &mut RngStream) -> Result<Self, SimulateError> {
        let n = params.calibration_size;
        let p = params.p.min(params.alpha.len().max(params.beta_base.len()));
        let x = generate_covariates(n, p, rng);
        let z = generate_treatment(x.view(), params.k, &params.beta_base, rng);
        let time = generate_event_times(&z, x.view(), params, rng)?;
        Ok(Self { time })
    }

    /// Expected fraction of subjects censored by `C ~ Uniform(0, theta)`,
    /// conditional on the drawn event times: the mean of `min(y/theta, 1)`.
    fn rate(&self, theta: f64) -> f64 {
        let total: f64 = self.time.iter().map(|y| (y / theta).min(1.0)).sum();
        total / self.time.len() as f64
    }
}

/// Finds the censoring bound whose population censoring rate equals
/// `target_rate`.
///
/// A zero target returns an infinite bound immediately. Otherwise one
/// calibration population is drawn from `rng` (treatment and event times
/// under the full generator, so the realized treatment mix is respected),
/// the bound is bracketed by doubling or halving from 1, and bisection
/// stops when the rate is within 0.005 of the target or after 60 steps.
/// Requires a calibrated treatment coefficient.
pub fn calibrate_theta(
    target_rate: f64,
    params: &GeneratorParams,
    rng: &mut RngStream,
) -> Result<f64, SimulateError> {
    params.validate()?;
    if !(target_rate >= 0.0 && target_rate < 1.0) || !target_rate.is_finite() {
        return Err(SimulateError::InvalidParams(format!(
            "target censoring rate must lie in [0, 1), got {target_rate}"
        )));
    }
    if target_rate == 0.0 {
        return Ok(f64::INFINITY);
    }
    let population = CensoringPopulation::build(params, rng)?;

    let mut lo = 1.0;
    let mut hi = 1.0;
    let mut guard = 0;
    if population.rate(1.0) >= target_rate {
        // Rate decreases in the bound, so double until it drops below the
        // target.
        while population.rate(hi) > target_rate {
            hi *= 2.0;
            guard += 1;
            if guard > 4096 {
                return Err(SimulateError::RateUnreachable { target: target_rate });
            }
        }
    } else {
        while population.rate(lo) < target_rate {
            lo /= 2.0;
            guard += 1;
            if guard > 4096 {
                return Err(SimulateError::RateUnreachable { target: target_rate });
            }
        }
    }

    let mut mid = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTIONS {
        mid = 0.5 * (lo + hi);
        let value = population.rate(mid);
        if (value - target_rate).abs() <= RATE_TOL {
            return Ok(mid);
        }
        if value > target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}

/// Marginal hazard ratio measured on a freshly drawn randomized cohort of
/// `n` subjects: treatment Bernoulli(0.5) independent of the covariates,
/// uncensored times, univariate treatment-only fit.
///
/// Validation counterpart of [`calibrate_alpha_z`]; requires a calibrated
/// treatment coefficient.
pub fn realized_mhr(
    params: &GeneratorParams,
    n: usize,
    rng: &mut RngStream,
) -> Result<f64, SimulateError> {
    let alpha_z = params.resolved_alpha_z()?;
    let p = params.p.min(params.alpha.len());
    let x = generate_covariates(n, p, rng);
    let z: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
    let active = params.alpha.len().min(p);
    let time: Vec<f64> = (0..n)
        .map(|i| {
            let mut lp = alpha_z * f64::from(z[i]);
            for j in 0..active {
                lp += params.alpha[j] * x[[i, j]];
            }
            let u: f64 = rng.sample(Open01);
            event_time_from_uniform(u, lp, params.eta, params.gamma)
        })
        .collect();
    let data = SurvivalDataset::from_parts(Array2::zeros((n, 0)), z, time, vec![1; n])?;
    let fit = fit_weighted_cox(&data, &CoxDesign::treatment_only(), &WeightVector::unit(n))?;
    Ok(fit.coefficients[0].exp())
}

/// Fraction of subjects censored in a freshly generated cohort of `n`
/// subjects, using actual censoring draws rather than the conditional
/// expectation the calibration bisects on.
pub fn realized_censoring_rate(
    params: &GeneratorParams,
    n: usize,
    rng: &mut RngStream,
) -> Result<f64, SimulateError> {
    let theta = params.resolved_theta()?;
    let p = params.p.min(params.alpha.len().max(params.beta_base.len()));
    let x = generate_covariates(n, p, rng);
    let z = generate_treatment(x.view(), params.k, &params.beta_base, rng);
    let y = generate_event_times(&z, x.view(), params, rng)?;
    let (_, event) = apply_censoring(&y, theta, rng);
    let censored = event.iter().filter(|&&d| d == 0).count();
    Ok(censored as f64 / n as f64)
}

/// Process-wide memo of completed calibrations, keyed by every input that
/// affects the result.
static CALIBRATION_MEMO: OnceLock<Mutex<HashMap<Vec<u64>, f64>>> = OnceLock::new();

fn memoized(
    key: Vec<u64>,
    compute: impl FnOnce() -> Result<f64, SimulateError>,
) -> Result<f64, SimulateError> {
    let memo = CALIBRATION_MEMO.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(value) = memo.lock().unwrap().get(&key) {
        return Ok(*value);
    }
    // Computed outside the lock: calibration takes seconds and other keys
    // should not wait on it. A racing duplicate computes the same value.
    let value = compute()?;
    memo.lock().unwrap().insert(key, value);
    Ok(value)
}

fn float_bits(key: &mut Vec<u64>, values: impl IntoIterator<Item = f64>) {
    key.extend(values.into_iter().map(f64::to_bits));
}

/// Memoized [`calibrate_alpha_z`] on the reserved calibration stream of
/// `seed`, targeting `params.target_mhr`.
pub fn calibrated_alpha_z(params: &GeneratorParams, seed: u64) -> Result<f64, SimulateError> {
    let effective = params.p.min(params.alpha.len());
    let mut key = vec![0u64, seed, params.calibration_size as u64];
    float_bits(&mut key, [params.target_mhr, params.eta, params.gamma]);
    float_bits(&mut key, params.alpha[..effective].iter().copied());
    memoized(key, || {
        let mut rng = RngStream::new(seed, STREAM_CALIBRATE_MHR);
        calibrate_alpha_z(params.target_mhr, params, &mut rng)
    })
}

/// Memoized [`calibrate_theta`] on the reserved calibration stream of
/// `seed`, targeting `params.censoring_rate`.
pub fn calibrated_theta(params: &GeneratorParams, seed: u64) -> Result<f64, SimulateError> {
    if params.censoring_rate == 0.0 {
        return Ok(f64::INFINITY);
    }
    let alpha_z = params.resolved_alpha_z()?;
    let p = params.p.min(params.alpha.len().max(params.beta_base.len()));
    let mut key = vec![1u64, seed, params.calibration_size as u64];
    float_bits(
        &mut key,
        [params.censoring_rate, alpha_z, params.k, params.eta, params.gamma],
    );
    float_bits(&mut key, params.alpha[..params.alpha.len().min(p)].iter().copied());
    float_bits(&mut key, params.beta_base[..params.beta_base.len().min(p)].iter().copied());
    memoized(key, || {
        let mut rng = RngStream::new(seed, STREAM_CALIBRATE_CENSORING);
        calibrate_theta(params.censoring_rate, params, &mut rng)
    })
}

/// Fills any unresolved calibration fields of `params` in place: first the
/// treatment coefficient against `target_mhr`, then the censoring bound
/// against `censoring_rate`. Already resolved fields are left untouched.
pub fn ensure_calibrated(params: &mut GeneratorParams, seed: u64) -> Result<(), SimulateError> {
    if params.alpha_z_star.is_none() {
        params.alpha_z_star = Some(calibrated_alpha_z(params, seed)?);
    }
    if params.theta.is_none() {
        params.theta = Some(calibrated_theta(params, seed)?);
    }
    Ok(())
}
