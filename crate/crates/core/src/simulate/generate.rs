//! Synthetic cohort generation.
//!
//! Covariates repeat a ten-column block: within each block, columns
//! 2, 4, 7, and 10 are standard normal and the remaining six are
//! Bernoulli(0.5). Treatment is Bernoulli in a logistic model without
//! intercept, event times invert a Weibull proportional hazards survival
//! function, and censoring times are uniform on `(0, theta]`.

use ndarray::{Array2, ArrayView2};
use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::SurvivalDataset;
use crate::rng::RngStream;

use super::{GeneratorParams, SimulateError};

/// Draws an `n` by `p` covariate matrix with the repeating block pattern.
///
/// Columns are filled in order, one full column at a time, so the draw
/// sequence is a deterministic function of the stream.
pub fn generate_covariates(n: usize, p: usize, rng: &mut RngStream) -> Array2<f64> {
    let mut x = Array2::<f64>::zeros((n, p));
    for j in 0..p {
        let mut col = x.column_mut(j);
        if is_normal_column(j) {
            for v in col.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        } else {
            for v in col.iter_mut() {
                *v = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
            }
        }
    }
    x
}

/// Whether zero-based column `j` is standard normal (true) or binary.
fn is_normal_column(j: usize) -> bool {
    matches!(j % 10, 1 | 3 | 6 | 9)
}

/// True propensity of each subject: `expit(k * beta_base . x_i)` with no
/// intercept. Coefficients beyond the covariate width are ignored, and
/// covariates beyond the coefficient vector contribute zero.
pub fn treatment_probabilities(x: ArrayView2<'_, f64>, k: f64, beta_base: &[f64]) -> Vec<f64> {
    let active = beta_base.len().min(x.ncols());
    (0..x.nrows())
        .map(|i| {
            let mut lp = 0.0;
            for j in 0..active {
                lp += beta_base[j] * x[[i, j]];
            }
            expit(k * lp)
        })
        .collect()
}

/// Numerically stable logistic function.
fn expit(lp: f64) -> f64 {
    if lp >= 0.0 {
        1.0 / (1.0 + (-lp).exp())
    } else {
        let e = lp.exp();
        e / (1.0 + e)
    }
}

/// Draws treatment indicators `z_i ~ Bernoulli(expit(k * beta_base . x_i))`.
pub fn generate_treatment(
    x: ArrayView2<'_, f64>,
    k: f64,
    beta_base: &[f64],
    rng: &mut RngStream,
) -> Vec<u8> {
    treatment_probabilities(x, k, beta_base)
        .into_iter()
        .map(|p| u8::from(rng.random::<f64>() < p))
        .collect()
}

/// Inverts the Weibull proportional hazards survival function at `u`.
///
/// With `u` uniform on (0, 1) the returned time follows the model with
/// linear predictor `lp`, shape `eta`, and rate `gamma`:
/// `(-ln(u) / (gamma * exp(lp)))^(1 / eta)`.
pub fn event_time_from_uniform(u: f64, lp: f64, eta: f64, gamma: f64) -> f64 {
    ((-u.ln()) / (gamma * lp.exp())).powf(1.0 / eta)
}

/// Draws one event time per subject under the proportional hazards model
/// with linear predictor `alpha_z_star * z_i + alpha . x_i`.
///
/// Requires a calibrated `alpha_z_star`; the uniform draws are taken from
/// the open interval so times are always positive and finite.
pub fn generate_event_times(
    z: &[u8],
    x: ArrayView2<'_, f64>,
    params: &GeneratorParams,
    rng: &mut RngStream,
) -> Result<Vec<f64>, SimulateError> {
    if z.len() != x.nrows() {
        return Err(SimulateError::InvalidParams(format!(
            "z has length {} but x has {} rows",
            z.len(),
            x.nrows()
        )));
    }
    let alpha_z = params.resolved_alpha_z()?;
    let active = params.alpha.len().min(x.ncols());
    let times = (0..x.nrows())
        .map(|i| {
            let mut lp = alpha_z * f64::from(z[i]);
            for j in 0..active {
                lp += params.alpha[j] * x[[i, j]];
            }
            let u: f64 = rng.sample(Open01);
            event_time_from_uniform(u, lp, params.eta, params.gamma)
        })
        .collect();
    Ok(times)
}

/// Censors event times at independent `C_i ~ Uniform(0, theta]`.
///
/// Returns observed times `min(y_i, c_i)` and event indicators
/// `1 if y_i <= c_i`. An infinite `theta` disables censoring and consumes
/// no draws. Censoring times are drawn from the half-open interval
/// excluding zero so observed times stay positive.
pub fn apply_censoring(y: &[f64], theta: f64, rng: &mut RngStream) -> (Vec<f64>, Vec<u8>) {
    if theta.is_infinite() {
        return (y.to_vec(), vec![1; y.len()]);
    }
    let mut time = Vec::with_capacity(y.len());
    let mut event = Vec::with_capacity(y.len());
    for &yi in y {
        let c = theta * (1.0 - rng.random::<f64>());
        if yi <= c {
            time.push(yi);
            event.push(1);
        } else {
            time.push(c);
            event.push(0);
        }
    }
    (time, event)
}

/// Draws one complete replicate: covariates, treatment, event times, and
/// censoring, assembled into a validated dataset.
///
/// Requires a calibrated `alpha_z_star`. A missing `theta` is treated as
/// no censoring only when the requested censoring rate is zero.
pub fn generate_dataset(
    params: &GeneratorParams,
    rng: &mut RngStream,
) -> Result<SurvivalDataset, SimulateError> {
    params.validate()?;
    let theta = match params.theta {
        Some(t) => t,
        None if params.censoring_rate == 0.0 => f64::INFINITY,
        None => {
            return Err(SimulateError::InvalidParams(
                "theta is unset; run calibration before generating data".into(),
            ))
        }
    };
    let x = generate_covariates(params.n, params.p, rng);
    let z = generate_treatment(x.view(), params.k, &params.beta_base, rng);
    let y = generate_event_times(&z, x.view(), params, rng)?;
    let (time, event) = apply_censoring(&y, theta, rng);
    Ok(SurvivalDataset::from_parts(x, z, time, event)?)
}

/// Appends independent noise covariates to `data` until it has as many
/// covariates as subjects, returning the widened dataset and the names of
/// the appended columns (`X1`, `X2`, ...).
///
/// Of the appended columns the first half are standard normal and the
/// rest Bernoulli(0.5), with the odd column going to the normal half.
/// Columns are drawn one at a time in order, so the result is a
/// deterministic function of the stream. A dataset that is already at
/// least as wide as it is tall comes back unchanged with no names.
pub fn augment_noise_columns(
    data: &SurvivalDataset,
    rng: &mut RngStream,
) -> Result<(SurvivalDataset, Vec<String>), SimulateError> {
    let (n, p) = (data.n(), data.p());
    if p >= n {
        return Ok((data.clone(), Vec::new()));
    }
    let added = n - p;
    let n_normal = added - added / 2;
    let mut x = Array2::<f64>::zeros((n, p + added));
    x.slice_mut(ndarray::s![.., ..p]).assign(&data.x());
    let mut names = Vec::with_capacity(added);
    for j in 0..added {
        let mut col = x.column_mut(p + j);
        if j < n_normal {
            for v in col.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        } else {
            for v in col.iter_mut() {
                *v = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
            }
        }
        names.push(format!("X{}", j + 1));
    }
    let widened = SurvivalDataset::from_parts(
        x,
        data.z().to_vec(),
        data.time().to_vec(),
        data.event().to_vec(),
    )?;
    Ok((widened, names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CovariateSet, WeightVector};
    use crate::survival::{fit_weighted_cox, CoxDesign};
    use approx::assert_abs_diff_eq;

    fn stream(id: u64) -> RngStream {
        RngStream::new(20_260_814, id)
    }

    #[test]
    fn block_pattern_assigns_column_types() {
        let mut rng = stream(0);
        let x = generate_covariates(400, 23, &mut rng);
        for j in 0..23 {
            let col = x.column(j);
            if is_normal_column(j) {
                assert!(
                    col.iter().any(|v| *v != 0.0 && *v != 1.0),
                    "column {} should be continuous",
                    j + 1
                );
                assert!(col.iter().any(|v| *v < 0.0));
            } else {
                assert!(
                    col.iter().all(|v| *v == 0.0 || *v == 1.0),
                    "column {} should be binary",
                    j + 1
                );
            }
        }
        // One-based columns 2, 4, 7, 10 are the continuous ones in a block.
        for (j, normal) in [(0, false), (1, true), (3, true), (6, true), (9, true), (10, false)] {
            assert_eq!(is_normal_column(j), normal);
        }
    }

    #[test]
    fn covariate_moments_match_at_large_n() {
        let mut rng = stream(1);
        let n = 100_000;
        let x = generate_covariates(n, 10, &mut rng);
        for j in 0..10 {
            let col = x.column(j);
            let mean = col.sum() / n as f64;
            if is_normal_column(j) {
                assert!(mean.abs() < 0.02, "normal column {} mean {}", j + 1, mean);
                let sd =
                    (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
                assert!((sd - 1.0).abs() < 0.02, "normal column {} sd {}", j + 1, sd);
            } else {
                assert!(
                    (mean - 0.5).abs() < 0.01,
                    "binary column {} mean {}",
                    j + 1,
                    mean
                );
            }
        }
    }

    #[test]
    fn covariates_are_deterministic_per_stream() {
        let a = generate_covariates(50, 15, &mut stream(2));
        let b = generate_covariates(50, 15, &mut stream(2));
        let c = generate_covariates(50, 15, &mut stream(3));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_overlap_multiplier_randomizes() {
        let x = generate_covariates(200, 10, &mut stream(4));
        let probs = treatment_probabilities(x.view(), 0.0, &super::super::DEFAULT_BETA_BASE);
        assert!(probs.iter().all(|p| *p == 0.5));
    }

    #[test]
    fn treated_fraction_matches_monte_carlo_oracle() {
        let beta = super::super::DEFAULT_BETA_BASE;
        // Oracle: the mean true propensity over ten million covariate
        // draws, accumulated in chunks to bound memory.
        let mut oracle_rng = stream(900);
        let mut total = 0.0;
        let chunk = 100_000;
        for _ in 0..100 {
            let x = generate_covariates(chunk, 7, &mut oracle_rng);
            total += treatment_probabilities(x.view(), 1.0, &beta).iter().sum::<f64>();
        }
        let oracle = total / 1e7;

        let mut rng = stream(901);
        let x = generate_covariates(100_000, 7, &mut rng);
        let z = generate_treatment(x.view(), 1.0, &beta, &mut rng);
        let frac = z.iter().map(|&v| f64::from(v)).sum::<f64>() / 1e5;
        assert!(
            (frac - oracle).abs() < 0.01,
            "treated fraction {frac} vs oracle {oracle}"
        );
    }

    #[test]
    fn larger_multiplier_spreads_propensities() {
        let x = generate_covariates(100_000, 7, &mut stream(5));
        let beta = super::super::DEFAULT_BETA_BASE;
        let var = |k: f64| {
            let probs = treatment_probabilities(x.view(), k, &beta);
            let mean = probs.iter().sum::<f64>() / probs.len() as f64;
            probs.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / probs.len() as f64
        };
        assert!(var(3.0) > var(1.0) + 0.01);
    }

    #[test]
    fn inversion_recovers_unit_time() {
        let gamma: f64 = 2e-5;
        let y = event_time_from_uniform((-gamma).exp(), 0.0, 2.0, gamma);
        assert_abs_diff_eq!(y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn squared_times_are_exponential_under_null_model() {
        // With shape 2 and all linear predictors zero, y^2 is exponential
        // with the rate parameter. Kolmogorov-Smirnov check at level 0.01.
        let gamma = 2e-5;
        let mut params = GeneratorParams::new(10_000, 1);
        params.alpha = vec![0.0];
        params.alpha_z_star = Some(0.0);
        let x = Array2::zeros((10_000, 1));
        let z = vec![0u8; 10_000];
        let mut rng = stream(6);
        let y = generate_event_times(&z, x.view(), &params, &mut rng).unwrap();

        let mut w: Vec<f64> = y.iter().map(|v| v * v).collect();
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = w.len() as f64;
        let mut d: f64 = 0.0;
        for (i, wi) in w.iter().enumerate() {
            let f = 1.0 - (-gamma * wi).exp();
            d = d.max((f - i as f64 / n).abs());
            d = d.max(((i + 1) as f64 / n - f).abs());
        }
        let cutoff = 1.628 / n.sqrt();
        assert!(d <= cutoff, "KS statistic {d} exceeds {cutoff}");
    }

    #[test]
    fn conditional_model_recovers_coefficients_at_large_n() {
        let mut params = GeneratorParams::new(100_000, 10);
        params.alpha_z_star = Some(std::f64::consts::LN_2);
        let mut rng = stream(7);
        let data = generate_dataset(&params, &mut rng).unwrap();

        let design = CoxDesign::treatment_with(CovariateSet::new(1..=10).unwrap());
        let fit = fit_weighted_cox(&data, &design, &WeightVector::unit(data.n())).unwrap();
        assert!(fit.converged);
        assert!(
            (fit.coefficients[0] - std::f64::consts::LN_2).abs() < 0.03,
            "treatment coefficient {}",
            fit.coefficients[0]
        );
        for j in 0..10 {
            assert!(
                (fit.coefficients[j + 1] - params.alpha[j]).abs() < 0.03,
                "coefficient {} estimated {} true {}",
                j + 1,
                fit.coefficients[j + 1],
                params.alpha[j]
            );
        }
    }

    #[test]
    fn infinite_bound_disables_censoring() {
        let y = vec![3.0, 0.5, 12.0];
        let (time, event) = apply_censoring(&y, f64::INFINITY, &mut stream(8));
        assert_eq!(time, y);
        assert_eq!(event, vec![1, 1, 1]);
    }

    #[test]
    fn finite_bound_truncates_observed_times() {
        let mut params = GeneratorParams::new(2_000, 10);
        params.alpha_z_star = Some(0.0);
        let mut rng = stream(9);
        let x = generate_covariates(params.n, params.p, &mut rng);
        let z = generate_treatment(x.view(), params.k, &params.beta_base, &mut rng);
        let y = generate_event_times(&z, x.view(), &params, &mut rng).unwrap();
        let theta = 200.0;
        let (time, event) = apply_censoring(&y, theta, &mut rng);

        let mut censored = 0;
        for i in 0..y.len() {
            assert!(time[i] > 0.0 && time[i] <= y[i]);
            match event[i] {
                1 => assert_eq!(time[i], y[i]),
                0 => {
                    assert!(time[i] < y[i]);
                    assert!(time[i] <= theta);
                    censored += 1;
                }
                _ => unreachable!(),
            }
        }
        assert!(censored > 0 && censored < y.len());
    }

    #[test]
    fn dataset_assembly_is_deterministic() {
        let mut params = GeneratorParams::new(300, 10);
        params.alpha_z_star = Some(std::f64::consts::LN_2);
        let a = generate_dataset(&params, &mut stream(10)).unwrap();
        let b = generate_dataset(&params, &mut stream(10)).unwrap();
        assert_eq!(a.n(), 300);
        assert_eq!(a.p(), 10);
        assert_eq!(a.time(), b.time());
        assert_eq!(a.z(), b.z());
        assert!(a.n_events() == 300, "no censoring requested");
        assert!(a.n_treated() > 0 && a.n_treated() < 300);

        let unset = GeneratorParams::new(300, 10);
        assert!(matches!(
            generate_dataset(&unset, &mut stream(11)),
            Err(SimulateError::InvalidParams(_))
        ));
    }

    #[test]
    fn augmentation_squares_the_matrix() {
        let mut params = GeneratorParams::new(40, 7);
        params.alpha_z_star = Some(std::f64::consts::LN_2);
        let data = generate_dataset(&params, &mut stream(12)).unwrap();

        let (wide, names) = augment_noise_columns(&data, &mut stream(13)).unwrap();
        assert_eq!(wide.p(), 40);
        assert_eq!(names.len(), 33);
        assert_eq!(names[0], "X1");
        assert_eq!(names[32], "X33");
        // Original columns and outcomes are untouched.
        assert_eq!(wide.x().slice(ndarray::s![.., ..7]), data.x());
        assert_eq!(wide.time(), data.time());
        assert_eq!(wide.z(), data.z());
        // First 17 appended columns are continuous, the last 16 binary.
        let wide_x = wide.x();
        for j in 0..33 {
            let col = wide_x.column(7 + j);
            let binary = col.iter().all(|&v| v == 0.0 || v == 1.0);
            assert_eq!(binary, j >= 17, "appended column {j}");
        }
        // Deterministic in the stream.
        let (again, _) = augment_noise_columns(&data, &mut stream(13)).unwrap();
        assert_eq!(wide.x(), again.x());

        // Already-square input passes through unchanged.
        let (same, none) = augment_noise_columns(&wide, &mut stream(14)).unwrap();
        assert!(none.is_empty());
        assert_eq!(same.p(), wide.p());
    }
}
