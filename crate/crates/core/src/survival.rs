//! Weighted Cox regression for the marginal hazard ratio.
//!
//! The partial likelihood uses the Breslow convention for tied event times.
//! With subject weights `w`, linear predictor `eta_i = x_i' beta`, and
//! events indexed by `D_i = 1`:
//!
//! ```text
//! l(beta) = sum_i D_i w_i [ eta_i - log( sum_{j: T_j >= T_i} w_j exp(eta_j) ) ]
//! ```
//!
//! Estimation is Newton-Raphson with step halving. The variance reported
//! for weighted fits is the robust sandwich `I^{-1} (sum_i U_i U_i') I^{-1}`
//! with per-subject weighted score residuals `U_i = w_i u_i`, which is
//! invariant to rescaling all weights by a constant.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::data::{CovariateSet, DataError, SurvivalDataset, WeightVector};
use crate::linalg;

const GRADIENT_TOL: f64 = 1e-8;
/// A monotone likelihood keeps proposing O(1) Newton increments even once
/// the gradient is tiny, so convergence additionally requires the increment
/// to vanish; this keeps divergence detectable instead of stopping early on
/// an exponentially flattening score.
const STEP_TOL: f64 = 1e-6;
const MAX_NEWTON_ITER: usize = 100;
const COEF_DIVERGENCE_BOUND: f64 = 50.0;
/// Two-sided 95% normal quantile used for confidence intervals.
pub const Z_95: f64 = 1.959964;

#[derive(Debug, Error)]
pub enum SurvivalError {
    #[error("design matrix is rank deficient on the weighted risk sets")]
    RankDeficientDesign,
    #[error("monotone partial likelihood: coefficient {index} diverged beyond {bound}")]
    MonotoneLikelihood { index: usize, bound: f64 },
    #[error("Newton iteration broke down: {0}")]
    NonConvergence(String),
    #[error("information matrix is singular at the fitted coefficients")]
    SingularInformation,
    #[error("no comparable pairs for concordance")]
    NoComparablePairs,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Which columns enter a Cox fit: the treatment indicator, a covariate
/// set, or both. The treatment column, when present, is always first.
#[derive(Debug, Clone)]
pub struct CoxDesign {
    include_treatment: bool,
    covariates: CovariateSet,
}

impl CoxDesign {
    /// Treatment indicator only; the marginal model.
    pub fn treatment_only() -> Self {
        Self { include_treatment: true, covariates: CovariateSet::empty() }
    }

    /// Treatment indicator followed by the given covariates; the
    /// conditional model.
    pub fn treatment_with(covariates: CovariateSet) -> Self {
        Self { include_treatment: true, covariates }
    }

    /// Covariates only, no treatment column.
    pub fn covariates_only(covariates: CovariateSet) -> Self {
        Self { include_treatment: false, covariates }
    }

    pub fn includes_treatment(&self) -> bool {
        self.include_treatment
    }

    pub fn covariates(&self) -> &CovariateSet {
        &self.covariates
    }

    pub fn width(&self) -> usize {
        usize::from(self.include_treatment) + self.covariates.len()
    }
}

/// A fitted weighted Cox model.
#[derive(Debug, Clone)]
pub struct CoxFit {
    /// Coefficients in design order (treatment first when included).
    pub coefficients: Array1<f64>,
    /// Model-based standard errors from the inverse information.
    pub model_se: Array1<f64>,
    /// Robust sandwich standard errors.
    pub robust_se: Array1<f64>,
    /// Weighted Breslow partial log-likelihood at the fitted coefficients.
    pub loglik: f64,
    /// Whether the gradient max-norm reached tolerance within the
    /// iteration budget. Non-converged fits are returned, not errored,
    /// so callers can decide how to treat them.
    pub converged: bool,
    /// Number of Newton updates performed.
    pub iterations: usize,
}

/// A marginal hazard ratio estimate with its 95% confidence interval.
#[derive(Debug, Clone, Copy)]
pub struct MhrEstimate {
    /// Log marginal hazard ratio (the treatment coefficient).
    pub alpha_z: f64,
    /// `exp(alpha_z)`.
    pub mhr: f64,
    /// Robust standard error of `alpha_z`.
    pub robust_se: f64,
    /// `exp(alpha_z - 1.959964 se)`.
    pub ci_lower: f64,
    /// `exp(alpha_z + 1.959964 se)`.
    pub ci_upper: f64,
}

impl MhrEstimate {
    /// Extracts the marginal hazard ratio from a converged treatment-first
    /// Cox fit.
    pub fn from_cox_fit(fit: &CoxFit) -> Result<Self, SurvivalError> {
        if !fit.converged {
            return Err(SurvivalError::NonConvergence(
                "marginal fit did not converge within the iteration budget".into(),
            ));
        }
        let alpha_z = fit.coefficients[0];
        let se = fit.robust_se[0];
        if !se.is_finite() {
            return Err(SurvivalError::SingularInformation);
        }
        Ok(Self {
            alpha_z,
            mhr: alpha_z.exp(),
            robust_se: se,
            ci_lower: (alpha_z - Z_95 * se).exp(),
            ci_upper: (alpha_z + Z_95 * se).exp(),
        })
    }

    /// Whether the interval covers the hazard ratio `target`.
    pub fn covers(&self, target: f64) -> bool {
        self.ci_lower <= target && target <= self.ci_upper
    }
}

/// Preprocessed design for repeated likelihood evaluations: columns,
/// subjects ordered by ascending follow-up time, and tie groups.
struct CoxProblem {
    cols: Vec<Vec<f64>>,
    event: Vec<u8>,
    weights: Vec<f64>,
    order: Vec<usize>,
    /// Half-open ranges into `order` sharing one follow-up time.
    groups: Vec<(usize, usize)>,
}

impl CoxProblem {
    fn build(
        data: &SurvivalDataset,
        design: &CoxDesign,
        weights: &WeightVector,
    ) -> Result<Self, SurvivalError> {
        if weights.len() != data.n() {
            return Err(SurvivalError::InvalidInput(format!(
                "{} weights for {} subjects",
                weights.len(),
                data.n()
            )));
        }
        design.covariates().validate_for_width(data.p()).map_err(SurvivalError::Data)?;
        if design.width() == 0 {
            return Err(SurvivalError::InvalidInput("empty design".into()));
        }
        let mut cols = Vec::with_capacity(design.width());
        if design.includes_treatment() {
            cols.push(data.z().iter().map(|&z| f64::from(z)).collect());
        }
        for j in design.covariates().zero_based() {
            cols.push(data.x().column(j).to_vec());
        }
        let time = data.time();
        let mut order: Vec<usize> = (0..data.n()).collect();
        order.sort_by(|&a, &b| time[a].partial_cmp(&time[b]).unwrap());
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 1..=order.len() {
            if i == order.len() || time[order[i]] != time[order[start]] {
                groups.push((start, i));
                start = i;
            }
        }
        Ok(Self {
            cols,
            event: data.event().to_vec(),
            weights: weights.values().to_vec(),
            order,
            groups,
        })
    }

    fn n(&self) -> usize {
        self.event.len()
    }

    fn d(&self) -> usize {
        self.cols.len()
    }

    fn eta(&self, coef: &Array1<f64>) -> Vec<f64> {
        let mut eta = vec![0.0; self.n()];
        for (c, col) in self.cols.iter().enumerate() {
            let b = coef[c];
            if b != 0.0 {
                for (e, &x) in eta.iter_mut().zip(col) {
                    *e += b * x;
                }
            }
        }
        eta
    }

    fn xi(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.cols.iter().map(move |c| c[i])
    }

    /// Partial log-likelihood only; used during step halving.
    fn loglik(&self, coef: &Array1<f64>) -> f64 {
        let eta = self.eta(coef);
        let mut ll = 0.0;
        let mut s0 = 0.0;
        for &(g0, g1) in self.groups.iter().rev() {
            for &i in &self.order[g0..g1] {
                s0 += self.weights[i] * eta[i].exp();
            }
            let log_s0 = s0.ln();
            for &i in &self.order[g0..g1] {
                if self.event[i] == 1 {
                    ll += self.weights[i] * (eta[i] - log_s0);
                }
            }
        }
        ll
    }

    /// Log-likelihood, score, and observed information in one pass.
    fn derivatives(&self, coef: &Array1<f64>) -> (f64, Array1<f64>, Array2<f64>) {
        let d = self.d();
        let eta = self.eta(coef);
        let mut ll = 0.0;
        let mut grad = Array1::zeros(d);
        let mut info = Array2::zeros((d, d));
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; d];
        let mut s2 = vec![0.0; d * d];
        let mut m = vec![0.0; d];
        for &(g0, g1) in self.groups.iter().rev() {
            for &i in &self.order[g0..g1] {
                let r = self.weights[i] * eta[i].exp();
                if r != 0.0 {
                    s0 += r;
                    for (a, xa) in self.xi(i).enumerate() {
                        s1[a] += r * xa;
                        for (b, xb) in self.xi(i).enumerate().skip(a) {
                            s2[a * d + b] += r * xa * xb;
                        }
                    }
                }
            }
            let log_s0 = s0.ln();
            for a in 0..d {
                m[a] = s1[a] / s0;
            }
            for &i in &self.order[g0..g1] {
                if self.event[i] == 1 && self.weights[i] != 0.0 {
                    let w = self.weights[i];
                    ll += w * (eta[i] - log_s0);
                    for (a, xa) in self.xi(i).enumerate() {
                        grad[a] += w * (xa - m[a]);
                        for b in a..d {
                            info[[a, b]] += w * (s2[a * d + b] / s0 - m[a] * m[b]);
                        }
                    }
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                info[[a, b]] = info[[b, a]];
            }
        }
        (ll, grad, info)
    }

    /// Per-subject weighted score residuals `U_i = w_i u_i` at `coef`,
    /// stacked as an `n x d` matrix. Their column sums are zero at the
    /// fitted coefficients.
    fn score_residuals(&self, coef: &Array1<f64>) -> Array2<f64> {
        let d = self.d();
        let n = self.n();
        let eta = self.eta(coef);
        let mut s0_per_group = vec![0.0; self.groups.len()];
        let mut m_per_group = vec![0.0; self.groups.len() * d];
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; d];
        for (g, &(g0, g1)) in self.groups.iter().enumerate().rev() {
            for &i in &self.order[g0..g1] {
                let r = self.weights[i] * eta[i].exp();
                s0 += r;
                for (a, xa) in self.xi(i).enumerate() {
                    s1[a] += r * xa;
                }
            }
            s0_per_group[g] = s0;
            for a in 0..d {
                m_per_group[g * d + a] = s1[a] / s0;
            }
        }
        let mut u = Array2::zeros((n, d));
        let mut cum_a = 0.0;
        let mut cum_b = vec![0.0; d];
        for (g, &(g0, g1)) in self.groups.iter().enumerate() {
            let s0g = s0_per_group[g];
            let mg = &m_per_group[g * d..(g + 1) * d];
            for &i in &self.order[g0..g1] {
                if self.event[i] == 1 {
                    let inc = self.weights[i] / s0g;
                    cum_a += inc;
                    for a in 0..d {
                        cum_b[a] += inc * mg[a];
                    }
                }
            }
            for &i in &self.order[g0..g1] {
                let di = f64::from(self.event[i]);
                let ri = eta[i].exp();
                for (a, xa) in self.xi(i).enumerate() {
                    u[[i, a]] = self.weights[i] * (di * (xa - mg[a]) - ri * (cum_a * xa - cum_b[a]));
                }
            }
        }
        u
    }
}

fn max_abs(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

fn newton(problem: &CoxProblem) -> Result<(Array1<f64>, Array2<f64>, f64, bool, usize), SurvivalError> {
    let d = problem.d();
    let mut coef = Array1::zeros(d);
    let mut iterations = 0;
    let mut converged = false;
    let (mut ll, mut grad, mut info) = problem.derivatives(&coef);
    if !ll.is_finite() {
        return Err(SurvivalError::NonConvergence("non-finite likelihood at zero".into()));
    }
    loop {
        if let Some(index) = (0..d).find(|&a| coef[a].abs() > COEF_DIVERGENCE_BOUND) {
            return Err(SurvivalError::MonotoneLikelihood { index, bound: COEF_DIVERGENCE_BOUND });
        }
        let delta = match linalg::solve_spd(&info, &grad) {
            Some(delta) => delta,
            // A singular information at the starting point is a structural
            // rank deficiency. One that collapses after updates means the
            // likelihood has flattened along a divergent direction, the
            // same separation the coefficient bound exists to catch.
            None if iterations == 0 => return Err(SurvivalError::RankDeficientDesign),
            None => {
                let index =
                    (0..d).max_by(|&a, &b| coef[a].abs().total_cmp(&coef[b].abs())).unwrap_or(0);
                return Err(SurvivalError::MonotoneLikelihood {
                    index,
                    bound: COEF_DIVERGENCE_BOUND,
                });
            }
        };
        if max_abs(&grad) <= GRADIENT_TOL && max_abs(&delta) <= STEP_TOL {
            converged = true;
            break;
        }
        if iterations >= MAX_NEWTON_ITER {
            break;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &coef + &(step * &delta);
            let cand_ll = problem.loglik(&cand);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * (1.0 + ll.abs()) {
                coef = cand;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(SurvivalError::NonConvergence(
                "step halving failed to keep the likelihood non-decreasing".into(),
            ));
        }
        iterations += 1;
        let (new_ll, new_grad, new_info) = problem.derivatives(&coef);
        ll = new_ll;
        grad = new_grad;
        info = new_info;
    }
    Ok((coef, info, ll, converged, iterations))
}

fn sandwich(
    problem: &CoxProblem,
    coef: &Array1<f64>,
    info: &Array2<f64>,
) -> Result<Array2<f64>, SurvivalError> {
    let inv = linalg::inverse_spd(info).ok_or(SurvivalError::SingularInformation)?;
    let u = problem.score_residuals(coef);
    let meat = u.t().dot(&u);
    Ok(inv.dot(&meat).dot(&inv))
}

/// Fits a weighted Cox model by Newton-Raphson with step halving.
///
/// Converges when the score max-norm drops to 1e-8; gives up after 100
/// updates (returning `converged = false`). A coefficient exceeding 50 in
/// absolute value aborts with [`SurvivalError::MonotoneLikelihood`], the
/// signature of a partial likelihood with no interior maximum.
pub fn fit_weighted_cox(
    data: &SurvivalDataset,
    design: &CoxDesign,
    weights: &WeightVector,
) -> Result<CoxFit, SurvivalError> {
    let problem = CoxProblem::build(data, design, weights)?;
    let (coef, info, ll, converged, iterations) = newton(&problem)?;
    let inv = linalg::inverse_spd(&info).ok_or(SurvivalError::SingularInformation)?;
    let model_se = inv.diag().mapv(f64::sqrt);
    let robust = sandwich(&problem, &coef, &info)?;
    let robust_se = robust.diag().mapv(f64::sqrt);
    Ok(CoxFit { coefficients: coef, model_se, robust_se, loglik: ll, converged, iterations })
}

/// Robust sandwich covariance of a fitted Cox model.
///
/// Requires a converged fit on the same data, design, and weights.
pub fn robust_sandwich_variance(
    data: &SurvivalDataset,
    design: &CoxDesign,
    weights: &WeightVector,
    fit: &CoxFit,
) -> Result<Array2<f64>, SurvivalError> {
    if !fit.converged {
        return Err(SurvivalError::NonConvergence(
            "sandwich variance requires a converged fit".into(),
        ));
    }
    let problem = CoxProblem::build(data, design, weights)?;
    let (_, _, info) = problem.derivatives(&fit.coefficients);
    sandwich(&problem, &fit.coefficients, &info)
}

/// Weighted Breslow partial log-likelihood at an arbitrary coefficient
/// vector; exposed so gradients can be checked by finite differences.
pub fn partial_loglik(
    data: &SurvivalDataset,
    design: &CoxDesign,
    weights: &WeightVector,
    coef: &Array1<f64>,
) -> Result<f64, SurvivalError> {
    let problem = CoxProblem::build(data, design, weights)?;
    Ok(problem.loglik(coef))
}

/// Score vector of the weighted partial log-likelihood at `coef`.
pub fn partial_score(
    data: &SurvivalDataset,
    design: &CoxDesign,
    weights: &WeightVector,
    coef: &Array1<f64>,
) -> Result<Array1<f64>, SurvivalError> {
    let problem = CoxProblem::build(data, design, weights)?;
    Ok(problem.derivatives(coef).1)
}

/// Fits the treatment-only weighted Cox model and packages the marginal
/// hazard ratio with its robust 95% confidence interval.
pub fn estimate_mhr(
    data: &SurvivalDataset,
    weights: &WeightVector,
) -> Result<MhrEstimate, SurvivalError> {
    let fit = fit_weighted_cox(data, &CoxDesign::treatment_only(), weights)?;
    MhrEstimate::from_cox_fit(&fit)
}

/// Harrell's concordance index.
///
/// The ordered pair `(i, j)` is comparable when subject `i` has an event
/// and either `T_i < T_j`, or `T_i == T_j` with `j` censored. Pairs of
/// events at the same time are not comparable. A comparable pair counts 1
/// when `risk_i > risk_j`, 0.5 on risk ties, 0 otherwise.
pub fn harrell_concordance(
    risk: &[f64],
    time: &[f64],
    event: &[u8],
) -> Result<f64, SurvivalError> {
    let n = risk.len();
    if time.len() != n || event.len() != n {
        return Err(SurvivalError::InvalidInput("risk/time/event lengths differ".into()));
    }
    if risk.iter().any(|r| !r.is_finite()) {
        return Err(SurvivalError::InvalidInput("non-finite risk score".into()));
    }
    let mut comparable = 0u64;
    let mut concordant = 0.0;
    for i in 0..n {
        if event[i] != 1 {
            continue;
        }
        for j in 0..n {
            if i == j {
                continue;
            }
            let usable = time[i] < time[j] || (time[i] == time[j] && event[j] == 0);
            if !usable {
                continue;
            }
            comparable += 1;
            if risk[i] > risk[j] {
                concordant += 1.0;
            } else if risk[i] == risk[j] {
                concordant += 0.5;
            }
        }
    }
    if comparable == 0 {
        return Err(SurvivalError::NoComparablePairs);
    }
    Ok(concordant / comparable as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand_distr::StandardNormal;

    use crate::rng::RngStream;

    fn dataset(z: Vec<u8>, time: Vec<f64>, event: Vec<u8>) -> SurvivalDataset {
        let n = z.len();
        let x = Array2::zeros((n, 0));
        SurvivalDataset::from_parts(x, z, time, event).unwrap()
    }

    fn dataset_with_x(
        x: Array2<f64>,
        z: Vec<u8>,
        time: Vec<f64>,
        event: Vec<u8>,
    ) -> SurvivalDataset {
        SurvivalDataset::from_parts(x, z, time, event).unwrap()
    }

    /// Analytic score of the four-subject weighted example used as an
    /// independent oracle: distinct times 1..4, z = (1,0,1,0),
    /// weights (1,2,1,2), all events.
    fn four_subject_score(a: f64) -> f64 {
        let e = a.exp();
        (1.0 - 2.0 * e / (2.0 * e + 4.0)) + 2.0 * (0.0 - e / (e + 4.0))
            + (1.0 - e / (e + 2.0))
    }

    #[test]
    fn four_subject_fit_matches_bisection_oracle() {
        let data = dataset(vec![1, 0, 1, 0], vec![1.0, 2.0, 3.0, 4.0], vec![1, 1, 1, 1]);
        let w = WeightVector::new(vec![1.0, 2.0, 1.0, 2.0], crate::data::WeightKind::Iptw).unwrap();
        let fit = fit_weighted_cox(&data, &CoxDesign::treatment_only(), &w).unwrap();
        assert!(fit.converged);

        let (mut lo, mut hi) = (-5.0, 5.0);
        assert!(four_subject_score(lo) > 0.0 && four_subject_score(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if four_subject_score(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert_abs_diff_eq!(fit.coefficients[0], oracle, epsilon = 1e-6);
    }

    #[test]
    fn treated_always_first_event_is_monotone() {
        let data = dataset(vec![1, 0], vec![1.0, 2.0], vec![1, 1]);
        let w = WeightVector::unit(2);
        let err = fit_weighted_cox(&data, &CoxDesign::treatment_only(), &w).unwrap_err();
        assert!(matches!(err, SurvivalError::MonotoneLikelihood { .. }));
    }

    #[test]
    fn zero_variance_column_is_rank_deficient() {
        let x = Array2::from_elem((6, 1), 1.0);
        let data = dataset_with_x(
            x,
            vec![1, 0, 1, 0, 1, 0],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![1, 1, 0, 1, 0, 1],
        );
        let design = CoxDesign::treatment_with(CovariateSet::new([1]).unwrap());
        let err = fit_weighted_cox(&data, &design, &WeightVector::unit(6)).unwrap_err();
        assert!(matches!(err, SurvivalError::RankDeficientDesign));
    }

    #[test]
    fn breslow_tied_loglik_matches_hand_computation() {
        let data = dataset(vec![1, 0, 1], vec![1.0, 1.0, 2.0], vec![1, 1, 1]);
        let coef = array![0.3];
        let ll = partial_loglik(&data, &CoxDesign::treatment_only(), &WeightVector::unit(3), &coef)
            .unwrap();
        let expected = 0.3 - 2.0 * (2.0 * 0.3_f64.exp() + 1.0).ln();
        assert_abs_diff_eq!(ll, expected, epsilon = 1e-12);
    }

    #[test]
    fn score_matches_finite_differences() {
        let mut rng = RngStream::new(42, 0);
        for _ in 0..5 {
            let n = 60;
            let mut x = Array2::zeros((n, 3));
            for v in x.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let z: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
            let time: Vec<f64> = (0..n).map(|_| -(rng.random::<f64>().max(1e-12)).ln()).collect();
            let event: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.8)).collect();
            let data = dataset_with_x(x, z, time, event);
            let w = WeightVector::new(
                (0..n).map(|_| 0.5 + rng.random::<f64>()).collect(),
                crate::data::WeightKind::Iptw,
            )
            .unwrap();
            let design = CoxDesign::treatment_with(CovariateSet::new([1, 2, 3]).unwrap());
            let coef = array![0.2, -0.4, 0.1, 0.3];
            let score = partial_score(&data, &design, &w, &coef).unwrap();
            let h = 1e-5;
            for a in 0..4 {
                let mut up = coef.clone();
                let mut dn = coef.clone();
                up[a] += h;
                dn[a] -= h;
                let fd = (partial_loglik(&data, &design, &w, &up).unwrap()
                    - partial_loglik(&data, &design, &w, &dn).unwrap())
                    / (2.0 * h);
                let denom = score[a].abs().max(1.0);
                assert!(
                    (score[a] - fd).abs() / denom < 1e-5,
                    "component {a}: score {} vs fd {fd}",
                    score[a]
                );
            }
        }
    }

    #[test]
    fn weighted_score_residuals_sum_to_zero() {
        let mut rng = RngStream::new(9, 0);
        let n = 80;
        let z: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let time: Vec<f64> = (0..n).map(|_| 0.1 + rng.random::<f64>()).collect();
        let event: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.7)).collect();
        let data = dataset(z, time, event);
        let w = WeightVector::new(
            (0..n).map(|_| 1.0 + 2.0 * rng.random::<f64>()).collect(),
            crate::data::WeightKind::Iptw,
        )
        .unwrap();
        let fit = fit_weighted_cox(&data, &CoxDesign::treatment_only(), &w).unwrap();
        let problem = CoxProblem::build(&data, &CoxDesign::treatment_only(), &w).unwrap();
        let u = problem.score_residuals(&fit.coefficients);
        let total: f64 = u.column(0).sum();
        assert!(total.abs() < 1e-8, "score residual sum {total}");
    }

    #[test]
    fn estimate_and_sandwich_invariant_to_weight_rescaling() {
        let mut rng = RngStream::new(11, 0);
        let n = 120;
        let z: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let time: Vec<f64> = (0..n).map(|_| 0.1 + rng.random::<f64>()).collect();
        let event: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.6)).collect();
        let data = dataset(z, time, event);
        let base: Vec<f64> = (0..n).map(|_| 1.0 + 3.0 * rng.random::<f64>()).collect();
        let scaled: Vec<f64> = base.iter().map(|w| 3.7 * w).collect();
        let w1 = WeightVector::new(base, crate::data::WeightKind::Iptw).unwrap();
        let w2 = WeightVector::new(scaled, crate::data::WeightKind::Iptw).unwrap();
        let f1 = fit_weighted_cox(&data, &CoxDesign::treatment_only(), &w1).unwrap();
        let f2 = fit_weighted_cox(&data, &CoxDesign::treatment_only(), &w2).unwrap();
        assert_abs_diff_eq!(f1.coefficients[0], f2.coefficients[0], epsilon = 1e-10);
        assert_abs_diff_eq!(f1.robust_se[0], f2.robust_se[0], epsilon = 1e-10);
    }

    #[test]
    fn subject_order_does_not_change_estimates() {
        let mut rng = RngStream::new(13, 0);
        let n = 50;
        let z: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
        let time: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 + rng.random::<f64>() * 0.0).collect();
        let event: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.8)).collect();
        let data = dataset(z.clone(), time.clone(), event.clone());
        let fit = fit_weighted_cox(&data, &CoxDesign::treatment_only(), &WeightVector::unit(n))
            .unwrap();

        let perm: Vec<usize> = (0..n).rev().collect();
        let zp: Vec<u8> = perm.iter().map(|&i| z[i]).collect();
        let tp: Vec<f64> = perm.iter().map(|&i| time[i]).collect();
        let ep: Vec<u8> = perm.iter().map(|&i| event[i]).collect();
        let datap = dataset(zp, tp, ep);
        let fitp = fit_weighted_cox(&datap, &CoxDesign::treatment_only(), &WeightVector::unit(n))
            .unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], fitp.coefficients[0], epsilon = 1e-12);
        assert_abs_diff_eq!(fit.robust_se[0], fitp.robust_se[0], epsilon = 1e-12);
    }

    #[test]
    fn identical_arm_multisets_give_zero_effect() {
        let time = vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0];
        let event = vec![1, 0, 1, 1, 1, 0, 1, 1];
        let z = vec![1, 1, 1, 1, 0, 0, 0, 0];
        let data = dataset(z, time, event);
        let fit = fit_weighted_cox(&data, &CoxDesign::treatment_only(), &WeightVector::unit(8))
            .unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.coefficients[0], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn robust_se_close_to_model_se_on_exponential_data() {
        let mut rng = RngStream::new(23, 0);
        let n = 2000;
        let z: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let time: Vec<f64> = (0..n)
            .map(|i| {
                let u: f64 = rng.random::<f64>().max(1e-12);
                let rate = if z[i] == 1 { 1.5 } else { 1.0 };
                -u.ln() / rate
            })
            .collect();
        let data = dataset(z, time, vec![1u8; n]);
        let fit = fit_weighted_cox(&data, &CoxDesign::treatment_only(), &WeightVector::unit(n))
            .unwrap();
        let ratio = fit.robust_se[0] / fit.model_se[0];
        assert!((0.85..=1.15).contains(&ratio), "robust/model SE ratio {ratio}");
    }

    #[test]
    fn concordance_antisymmetry_without_risk_ties() {
        let mut rng = RngStream::new(29, 0);
        for _ in 0..20 {
            let n = 40;
            let risk: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let neg: Vec<f64> = risk.iter().map(|r| -r).collect();
            let time: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
            let event: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.7)).collect();
            if !event.contains(&1) {
                continue;
            }
            let c1 = harrell_concordance(&risk, &time, &event).unwrap();
            let c2 = harrell_concordance(&neg, &time, &event).unwrap();
            assert_abs_diff_eq!(c1 + c2, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mhr_estimate_confidence_interval_shape() {
        let mut rng = RngStream::new(17, 0);
        let n = 300;
        let z: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let time: Vec<f64> = (0..n)
            .map(|i| {
                let u: f64 = rng.random::<f64>().max(1e-12);
                let rate = if z[i] == 1 { 2.0 } else { 1.0 };
                -u.ln() / rate
            })
            .collect();
        let event = vec![1u8; n];
        let data = dataset(z, time, event);
        let est = estimate_mhr(&data, &WeightVector::unit(n)).unwrap();
        assert_abs_diff_eq!(est.mhr, est.alpha_z.exp(), epsilon = 1e-12);
        assert!(est.ci_lower < est.mhr && est.mhr < est.ci_upper);
        assert_abs_diff_eq!(
            est.ci_upper / est.mhr,
            est.mhr / est.ci_lower,
            epsilon = 1e-10
        );
        assert!(est.mhr > 1.2 && est.mhr < 3.0);
    }

    #[test]
    fn concordance_perfect_and_reversed() {
        let time = [1.0, 2.0, 3.0];
        let event = [1, 1, 1];
        assert_abs_diff_eq!(
            harrell_concordance(&[3.0, 2.0, 1.0], &time, &event).unwrap(),
            1.0,
            epsilon = 0.0
        );
        assert_abs_diff_eq!(
            harrell_concordance(&[1.0, 2.0, 3.0], &time, &event).unwrap(),
            0.0,
            epsilon = 0.0
        );
    }

    #[test]
    fn concordance_risk_ties_count_half() {
        let c = harrell_concordance(&[1.0, 1.0], &[1.0, 2.0], &[1, 1]).unwrap();
        assert_abs_diff_eq!(c, 0.5, epsilon = 0.0);
    }

    #[test]
    fn concordance_equal_time_events_not_comparable() {
        let err = harrell_concordance(&[2.0, 1.0], &[1.0, 1.0], &[1, 1]).unwrap_err();
        assert!(matches!(err, SurvivalError::NoComparablePairs));
        let c = harrell_concordance(&[2.0, 1.0, 0.0], &[1.0, 1.0, 2.0], &[1, 1, 1]).unwrap();
        assert_abs_diff_eq!(c, 1.0, epsilon = 0.0);
    }

    #[test]
    fn concordance_censored_before_event_not_comparable() {
        let err = harrell_concordance(&[1.0, 2.0], &[1.0, 2.0], &[0, 0]).unwrap_err();
        assert!(matches!(err, SurvivalError::NoComparablePairs));
        let c = harrell_concordance(&[2.0, 1.0], &[1.0, 2.0], &[1, 0]).unwrap();
        assert_abs_diff_eq!(c, 1.0, epsilon = 0.0);
        let c = harrell_concordance(&[2.0, 1.0], &[1.0, 1.0], &[1, 0]).unwrap();
        assert_abs_diff_eq!(c, 1.0, epsilon = 0.0);
    }
}
