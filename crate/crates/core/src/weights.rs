//! Propensity-score estimation and the subject weighting schemes built on
//! it: inverse-probability-of-treatment (ATE) weights and multiply-robust
//! weights that calibrate several candidate propensity models at once.
//!
//! The multiply-robust weights maximize an empirical-likelihood criterion
//! per arm. With `e_i^j` the fitted propensity of model `j` for subject
//! `i` and `mu^j` its average over all subjects, the centered columns
//! `g_i = (e_i^1 - mu^1, ..., e_i^J - mu^J)` define multipliers `rho`
//! (treated arm) and `nu` (untreated arm) through
//!
//! ```text
//! sum_{treated} g_i / (1 + rho' g_i) = 0
//! sum_{untreated} g_i / (1 - nu' g_i) = 0
//! ```
//!
//! and the weights are `1 / (m (1 + rho' g_i))` for the `m` treated
//! subjects and `1 / ((n - m)(1 - nu' g_i))` for the rest. Each arm's
//! weights sum to one, and the weighted mean of every candidate model's
//! fitted propensity in each arm equals its overall mean, so any model
//! that is correctly specified balances the arms it describes.

use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

use crate::data::{
    CovariateSet, DataError, SurvivalDataset, WeightKind, WeightVector,
};
use crate::lasso::{newton_logistic, LassoError, NewtonOptions, StdDesign};
use crate::linalg;

/// Iteration budget for the damped Newton empirical-likelihood solver.
const MAX_EL_ITER: usize = 500;
/// Max-norm target for the per-arm estimating equations at the solution.
const EL_GRAD_TOL: f64 = 1e-10;
/// Multiplier max-norm beyond which the calibration problem is declared
/// to have no solution in the interior of the domain.
const EL_DIVERGENCE_BOUND: f64 = 1e6;
/// Fitted propensity vectors closer than this in max-norm count as the
/// same candidate model and are collapsed before solving.
const MODEL_DEDUP_TOL: f64 = 1e-12;
/// Centered propensity columns with no more spread than this carry no
/// calibration information and are dropped.
const ZERO_SPREAD_TOL: f64 = 1e-12;
/// A subject weight above this multiple of its arm mean is reported as
/// extreme by [`weight_diagnostics`].
const EXTREME_WEIGHT_FACTOR: f64 = 10.0;

#[derive(Debug, Error)]
pub enum WeightError {
    /// The selected columns plus the intercept are collinear, for example
    /// because the set names two identical or constant columns.
    #[error("propensity design is rank deficient")]
    RankDeficient,
    /// A coefficient diverged while fitting the propensity model; the
    /// selected columns separate the treatment arms. Column 0 is the
    /// intercept, otherwise the 1-based dataset column is reported.
    #[error("treatment arms are separated: coefficient for column {column} diverged to {value}")]
    Separation { column: usize, value: f64 },
    /// A propensity score outside the open interval (0, 1).
    #[error("propensity score at position {position} is {value}; scores must lie strictly in (0, 1)")]
    PsOutOfRange { position: usize, value: f64 },
    /// The calibration estimating equations have no root: some centered
    /// propensity column never changes sign within an arm, or the
    /// multipliers diverged, so zero is outside the convex hull of the
    /// arm's centered propensities.
    #[error("empirical-likelihood equations have no solution in the domain")]
    NoInteriorSolution,
    /// The damped Newton solver exhausted its budget without meeting the
    /// gradient tolerance.
    #[error("empirical-likelihood solver failed to converge: {0}")]
    SolverNonConvergence(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// An unpenalized logistic model for treatment assignment on a covariate
/// set, with fitted propensity scores for every subject.
#[derive(Debug, Clone)]
pub struct PropensityModel {
    /// The 1-based covariate columns the model was fitted on.
    pub covariate_set: CovariateSet,
    pub intercept: f64,
    /// Coefficients in the order of `covariate_set.indices()`.
    pub coefficients: Array1<f64>,
    /// Fitted treatment probabilities, clamped to `[1e-10, 1 - 1e-10]`.
    pub fitted_ps: Vec<f64>,
    /// Whether the fitter met its tolerance within the iteration budget.
    /// Overfitted models that merely exhausted the budget are still
    /// returned, matching common GLM software, so the fitted scores stay
    /// usable as weights even when the likelihood has no finite maximum.
    pub converged: bool,
}

/// Multipliers and the centered propensity matrix behind a
/// multiply-robust solve, retained so callers can audit the estimating
/// equations. For every treated subject `1 + rho' g_i > 0`, for every
/// untreated subject `1 - nu' g_i > 0`, and both arms' estimating
/// equations hold to 1e-8 in max-norm.
#[derive(Debug, Clone)]
pub struct MrSolverState {
    /// Treated-arm multipliers, one per retained column of `g_matrix`.
    pub rho: Array1<f64>,
    /// Untreated-arm multipliers, one per retained column of `g_matrix`.
    pub nu: Array1<f64>,
    /// Centered fitted-propensity matrix, one row per subject and one
    /// column per retained model.
    pub g_matrix: Array2<f64>,
    /// Positions in the caller's model list of the retained columns,
    /// after collapsing duplicates and dropping zero-spread columns.
    pub kept_models: Vec<usize>,
    /// Mean fitted propensity of each retained model over all subjects.
    pub mu: Vec<f64>,
}

/// Fits an unpenalized logistic regression of the treatment indicator on
/// the selected covariate columns and returns fitted propensity scores
/// for all subjects. An empty set yields the intercept-only model whose
/// fitted scores all equal the treated fraction.
///
/// The fitter mirrors common GLM behavior: an iteration cap with a
/// relative deviance stopping rule, so models fitted on very wide sets
/// return usable scores instead of failing when the arms are close to
/// separable. Only an actual coefficient divergence is reported as
/// [`WeightError::Separation`].
pub fn estimate_ps(
    data: &SurvivalDataset,
    set: &CovariateSet,
) -> Result<PropensityModel, WeightError> {
    set.validate_for_width(data.p())?;
    let x = set.extract_columns(data.x())?;
    if !set.is_empty() {
        check_full_rank(x.view())?;
    }
    let y: Vec<f64> = data.z().iter().map(|&v| f64::from(v)).collect();
    let fit = newton_logistic(x.view(), &y, &NewtonOptions::propensity())
        .map_err(|err| lasso_to_weight(err, set))?;
    Ok(PropensityModel {
        covariate_set: set.clone(),
        intercept: fit.intercept,
        coefficients: fit.coefficients,
        fitted_ps: fit.fitted,
        converged: fit.converged,
    })
}

/// Rejects designs whose centered, variance-scaled Gram matrix is
/// singular. Ridge fallbacks inside the fitter would otherwise hide
/// structural collinearity such as duplicated or constant columns.
fn check_full_rank(x: ArrayView2<'_, f64>) -> Result<(), WeightError> {
    let std = StdDesign::from_rows(x, None);
    if std.sd.iter().any(|&s| s == 0.0) {
        return Err(WeightError::RankDeficient);
    }
    let p = std.cols.len();
    let n = std.n as f64;
    let mut gram = Array2::zeros((p, p));
    for a in 0..p {
        for b in a..p {
            let dot: f64 =
                std.cols[a].iter().zip(&std.cols[b]).map(|(u, v)| u * v).sum();
            gram[[a, b]] = dot / n;
            gram[[b, a]] = gram[[a, b]];
        }
    }
    if linalg::cholesky(&gram).is_none() {
        return Err(WeightError::RankDeficient);
    }
    Ok(())
}

fn lasso_to_weight(err: LassoError, set: &CovariateSet) -> WeightError {
    match err {
        LassoError::Separation { index, value } => {
            // The fitter indexes the intercept as 0 and the selected
            // columns from 1; translate back to dataset columns.
            let column = if index == 0 { 0 } else { set.indices()[index - 1] };
            WeightError::Separation { column, value }
        }
        LassoError::RankDeficient => WeightError::RankDeficient,
        LassoError::NonConvergence(msg) => WeightError::SolverNonConvergence(msg),
        other => WeightError::InvalidInput(other.to_string()),
    }
}

/// Inverse-probability-of-treatment weights targeting the average
/// treatment effect: `1/ps` for treated subjects and `1/(1 - ps)` for
/// untreated ones. Every weight is at least 1. No truncation is applied;
/// use [`weight_diagnostics`] to surface extreme weights.
pub fn iptw_weights(ps: &[f64], z: &[u8]) -> Result<WeightVector, WeightError> {
    if ps.len() != z.len() {
        return Err(WeightError::InvalidInput(format!(
            "{} propensity scores for {} treatment indicators",
            ps.len(),
            z.len()
        )));
    }
    let mut w = Vec::with_capacity(ps.len());
    for (i, (&p, &zi)) in ps.iter().zip(z).enumerate() {
        if !p.is_finite() || p <= 0.0 || p >= 1.0 {
            return Err(WeightError::PsOutOfRange { position: i, value: p });
        }
        if zi > 1 {
            return Err(WeightError::InvalidInput(format!(
                "treatment indicator at position {i} is {zi}; must be 0 or 1"
            )));
        }
        w.push(if zi == 1 { 1.0 / p } else { 1.0 / (1.0 - p) });
    }
    Ok(WeightVector::new(w, WeightKind::Iptw)?)
}

/// Multiply-robust weights calibrating all candidate propensity models;
/// see the module docs for the construction. Duplicate models (fitted
/// scores equal within 1e-12) are collapsed and centered columns with no
/// spread are dropped before solving.
pub fn multiply_robust_weights(
    models: &[PropensityModel],
    z: &[u8],
) -> Result<WeightVector, WeightError> {
    multiply_robust_weights_with_state(models, z).map(|(w, _)| w)
}

/// As [`multiply_robust_weights`], additionally returning the solver
/// state for auditing the estimating equations.
pub fn multiply_robust_weights_with_state(
    models: &[PropensityModel],
    z: &[u8],
) -> Result<(WeightVector, MrSolverState), WeightError> {
    let n = z.len();
    if models.is_empty() {
        return Err(WeightError::InvalidInput(
            "at least one propensity model is required".into(),
        ));
    }
    if z.iter().any(|&v| v > 1) {
        return Err(WeightError::InvalidInput(
            "treatment indicator must be 0 or 1".into(),
        ));
    }
    let m = z.iter().filter(|&&v| v == 1).count();
    if m == 0 || m == n {
        return Err(WeightError::InvalidInput(
            "both treatment arms must be present".into(),
        ));
    }
    for model in models {
        if model.fitted_ps.len() != n {
            return Err(WeightError::InvalidInput(format!(
                "model has {} fitted scores for {} subjects",
                model.fitted_ps.len(),
                n
            )));
        }
        for (i, &e) in model.fitted_ps.iter().enumerate() {
            if !e.is_finite() || e <= 0.0 || e >= 1.0 {
                return Err(WeightError::PsOutOfRange { position: i, value: e });
            }
        }
    }

    let mut kept_models = Vec::new();
    let mut mu = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (j, model) in models.iter().enumerate() {
        let duplicate = kept_models.iter().any(|&k: &usize| {
            models[k]
                .fitted_ps
                .iter()
                .zip(&model.fitted_ps)
                .all(|(a, b)| (a - b).abs() <= MODEL_DEDUP_TOL)
        });
        if duplicate {
            continue;
        }
        let mean = model.fitted_ps.iter().sum::<f64>() / n as f64;
        let col: Vec<f64> = model.fitted_ps.iter().map(|&e| e - mean).collect();
        if col.iter().all(|v| v.abs() <= ZERO_SPREAD_TOL) {
            continue;
        }
        kept_models.push(j);
        mu.push(mean);
        cols.push(col);
    }

    let j_eff = cols.len();
    let mut g_matrix = Array2::zeros((n, j_eff));
    for (c, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            g_matrix[[i, c]] = v;
        }
    }

    let treated: Vec<usize> = (0..n).filter(|&i| z[i] == 1).collect();
    let untreated: Vec<usize> = (0..n).filter(|&i| z[i] == 0).collect();
    let mut g_treated = Array2::zeros((treated.len(), j_eff));
    for (r, &i) in treated.iter().enumerate() {
        for c in 0..j_eff {
            g_treated[[r, c]] = g_matrix[[i, c]];
        }
    }
    // log(1 - nu' g) = log(1 + nu' (-g)), so the untreated side reuses
    // the treated solver on the negated matrix.
    let mut g_untreated = Array2::zeros((untreated.len(), j_eff));
    for (r, &i) in untreated.iter().enumerate() {
        for c in 0..j_eff {
            g_untreated[[r, c]] = -g_matrix[[i, c]];
        }
    }
    let rho = solve_el_multiplier(g_treated.view())?;
    let nu = solve_el_multiplier(g_untreated.view())?;

    let mut w = vec![0.0; n];
    for i in 0..n {
        let gi = g_matrix.row(i);
        if z[i] == 1 {
            let d = 1.0 + rho.dot(&gi);
            w[i] = 1.0 / (d * m as f64);
        } else {
            let d = 1.0 - nu.dot(&gi);
            w[i] = 1.0 / (d * (n - m) as f64);
        }
    }
    let weights = WeightVector::new(w, WeightKind::MultiplyRobust)?;
    Ok((weights, MrSolverState { rho, nu, g_matrix, kept_models, mu }))
}

/// Maximizes `sum_i log(1 + rho' g_i)` over the open domain where every
/// argument stays positive. The gradient of this objective is exactly
/// the calibration estimating equation `sum_i g_i / (1 + rho' g_i)`, its
/// Hessian is negative definite wherever the columns are independent, and
/// backtracking keeps every iterate interior, so the damped Newton
/// iteration converges to the unique root whenever one exists.
///
/// Columns that are identically zero within this arm leave their
/// multiplier at zero; a column that never changes sign makes the
/// equation insoluble and is reported as
/// [`WeightError::NoInteriorSolution`].
fn solve_el_multiplier(g: ArrayView2<'_, f64>) -> Result<Array1<f64>, WeightError> {
    let rows = g.nrows();
    let total = g.ncols();
    let mut active = Vec::new();
    for c in 0..total {
        let col = g.column(c);
        if col.iter().all(|v| v.abs() <= ZERO_SPREAD_TOL) {
            continue;
        }
        let any_pos = col.iter().any(|&v| v > 0.0);
        let any_neg = col.iter().any(|&v| v < 0.0);
        if !any_pos || !any_neg {
            return Err(WeightError::NoInteriorSolution);
        }
        active.push(c);
    }
    let ja = active.len();
    let mut full = Array1::zeros(total);
    if ja == 0 {
        return Ok(full);
    }

    let mut rho = Array1::<f64>::zeros(ja);
    let mut denom = vec![1.0; rows];
    let mut objective = 0.0_f64;
    for _ in 0..MAX_EL_ITER {
        let mut grad = Array1::<f64>::zeros(ja);
        for i in 0..rows {
            let d = denom[i];
            for (a, &c) in active.iter().enumerate() {
                grad[a] += g[[i, c]] / d;
            }
        }
        let grad_max = grad.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if grad_max <= EL_GRAD_TOL {
            for (a, &c) in active.iter().enumerate() {
                full[c] = rho[a];
            }
            return Ok(full);
        }
        if rho.iter().any(|v| v.abs() > EL_DIVERGENCE_BOUND) {
            return Err(WeightError::NoInteriorSolution);
        }
        let mut curvature = Array2::<f64>::zeros((ja, ja));
        for i in 0..rows {
            let d2 = denom[i] * denom[i];
            for (a, &ca) in active.iter().enumerate() {
                let ga = g[[i, ca]];
                for (b, &cb) in active.iter().enumerate().skip(a) {
                    curvature[[a, b]] += ga * g[[i, cb]] / d2;
                }
            }
        }
        for a in 0..ja {
            for b in (a + 1)..ja {
                curvature[[b, a]] = curvature[[a, b]];
            }
        }
        let delta = linalg::solve_spd_ridged(&curvature, &grad).ok_or_else(|| {
            WeightError::SolverNonConvergence("curvature matrix is singular".into())
        })?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &rho + &(step * &delta);
            let mut cand_denom = vec![0.0; rows];
            let mut interior = true;
            let mut cand_objective = 0.0;
            for i in 0..rows {
                let mut d = 1.0;
                for (a, &c) in active.iter().enumerate() {
                    d += cand[a] * g[[i, c]];
                }
                if d <= 0.0 {
                    interior = false;
                    break;
                }
                cand_denom[i] = d;
                cand_objective += d.ln();
            }
            if interior
                && cand_objective >= objective - 1e-12 * (1.0 + objective.abs())
            {
                rho = cand;
                denom = cand_denom;
                objective = cand_objective;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(WeightError::SolverNonConvergence(
                "backtracking could not keep the iterate interior".into(),
            ));
        }
    }
    Err(WeightError::SolverNonConvergence(format!(
        "estimating equations still unsolved after {MAX_EL_ITER} iterations"
    )))
}

/// Weight summary for one treatment arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmWeightSummary {
    /// Number of subjects in the arm.
    pub n: usize,
    pub max_weight: f64,
    /// Kish effective sample size `(sum w)^2 / sum w^2`; equals the arm
    /// size for uniform weights and approaches 1 as one weight dominates.
    pub ess: f64,
    /// Count of weights above ten times the arm mean.
    pub n_extreme: usize,
}

/// Per-arm weight diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDiagnostics {
    pub treated: ArmWeightSummary,
    pub untreated: ArmWeightSummary,
}

/// Summarizes a weight vector by treatment arm: maximum weight, Kish
/// effective sample size, and the number of extreme weights (above ten
/// times the arm mean). Extreme weights are logged at warn level; no
/// weight is ever modified.
pub fn weight_diagnostics(weights: &WeightVector, z: &[u8]) -> WeightDiagnostics {
    debug_assert_eq!(weights.len(), z.len());
    let summarize = |arm: u8| {
        let values: Vec<f64> = weights
            .values()
            .iter()
            .zip(z)
            .filter(|(_, &zi)| zi == arm)
            .map(|(&w, _)| w)
            .collect();
        if values.is_empty() {
            return ArmWeightSummary { n: 0, max_weight: 0.0, ess: 0.0, n_extreme: 0 };
        }
        let sum: f64 = values.iter().sum();
        let sum_sq: f64 = values.iter().map(|w| w * w).sum();
        let mean = sum / values.len() as f64;
        let ess = if sum_sq > 0.0 { sum * sum / sum_sq } else { 0.0 };
        let n_extreme = values
            .iter()
            .filter(|&&w| w > EXTREME_WEIGHT_FACTOR * mean)
            .count();
        ArmWeightSummary {
            n: values.len(),
            max_weight: values.iter().fold(0.0_f64, |acc, w| acc.max(*w)),
            ess,
            n_extreme,
        }
    };
    let diagnostics =
        WeightDiagnostics { treated: summarize(1), untreated: summarize(0) };
    if diagnostics.treated.n_extreme > 0 || diagnostics.untreated.n_extreme > 0 {
        log::warn!(
            "extreme weights: {} treated (max {:.3}), {} untreated (max {:.3})",
            diagnostics.treated.n_extreme,
            diagnostics.treated.max_weight,
            diagnostics.untreated.n_extreme,
            diagnostics.untreated.max_weight,
        );
    }
    diagnostics
}
