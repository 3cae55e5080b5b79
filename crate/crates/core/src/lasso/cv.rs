//! 10-fold cross-validation over the lasso path with the one-standard-error
//! rule.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;

use super::cox::CoxPathSolver;
use super::logistic::{expit, LogisticPathSolver};
use super::{lambda_grid, Convergence, CvKind, CvPoint, CvResult, LassoError};
use crate::rng::RngStream;
use crate::survival::{harrell_concordance, SurvivalError};

fn mean_binomial_deviance(y: &[f64], eta: &[f64]) -> f64 {
    let mut dev = 0.0;
    for (&yi, &e) in y.iter().zip(eta) {
        let p = expit(e).clamp(1e-10, 1.0 - 1e-10);
        dev -= 2.0 * (yi * p.ln() + (1.0 - yi) * (1.0 - p).ln());
    }
    dev / y.len() as f64
}

/// Fold labels for plain responses: a shuffled round-robin assignment.
fn assign_folds_plain(n: usize, folds: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut fold = vec![0; n];
    for (i, &subject) in perm.iter().enumerate() {
        fold[subject] = i % folds;
    }
    fold
}

/// Event-stratified fold labels: events and censored subjects are each
/// dealt round-robin so every fold carries its share of events.
fn assign_folds_stratified(event: &[u8], folds: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut events: Vec<usize> = (0..event.len()).filter(|&i| event[i] == 1).collect();
    let mut censored: Vec<usize> = (0..event.len()).filter(|&i| event[i] == 0).collect();
    events.shuffle(rng);
    censored.shuffle(rng);
    let mut fold = vec![0; event.len()];
    for (i, &subject) in events.iter().enumerate() {
        fold[subject] = i % folds;
    }
    let offset = events.len();
    for (i, &subject) in censored.iter().enumerate() {
        fold[subject] = (offset + i) % folds;
    }
    fold
}

/// Cross-validates the lasso path for the given model family.
///
/// The lambda grid (100 points, log-spaced down to 0.01 lambda_max for
/// n > P or 0.05 lambda_max otherwise) is computed once from the full
/// data and shared by every fold. Per-fold loss is the mean binomial
/// deviance of held-out subjects (logistic) or the negative Harrell
/// concordance of held-out subjects ranked by the training fit's linear
/// predictor (Cox). Fold assignment is the only randomness, so an
/// identical [`RngStream`] reproduces the result exactly.
///
/// Fold fits run under the loose [`Convergence::CV_FOLD`] profile: only
/// their held-out losses leave this function, never their coefficients,
/// so the last digits of fold solutions are irrelevant and skipping them
/// keeps the dense end of the path affordable.
pub fn cross_validate(
    kind: CvKind<'_>,
    x: ArrayView2<'_, f64>,
    folds: usize,
    rng: &mut RngStream,
) -> Result<CvResult, LassoError> {
    let n = x.nrows();
    if n < 20 {
        return Err(LassoError::InvalidInput(format!("need at least 20 subjects, got {n}")));
    }
    if folds < 2 || folds > n {
        return Err(LassoError::InvalidInput(format!("invalid fold count {folds}")));
    }
    let lambdas = match &kind {
        CvKind::Logistic { y } => {
            let solver = LogisticPathSolver::new(x, None, y, Convergence::STRICT)?;
            lambda_grid(solver.lambda_max(), n, x.ncols())
        }
        CvKind::Cox { time, event } => {
            let solver = CoxPathSolver::new(x, None, time, event, Convergence::STRICT)?;
            lambda_grid(solver.lambda_max(), n, x.ncols())
        }
    };
    let fold_of = match &kind {
        CvKind::Logistic { .. } => assign_folds_plain(n, folds, rng),
        CvKind::Cox { event, .. } => assign_folds_stratified(event, folds, rng),
    };
    let mut losses = vec![vec![0.0; lambdas.len()]; folds];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let held: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        match &kind {
            CvKind::Logistic { y } => {
                let y_held: Vec<f64> = held.iter().map(|&i| y[i]).collect();
                let mut solver =
                    LogisticPathSolver::new(x, Some(&train), y, Convergence::CV_FOLD)?;
                for (l, &lambda) in lambdas.iter().enumerate() {
                    solver.solve(lambda)?;
                    let eta = solver.eta_for_rows(x, &held);
                    losses[f][l] = mean_binomial_deviance(&y_held, &eta);
                }
            }
            CvKind::Cox { time, event } => {
                if !train.iter().any(|&i| event[i] == 1) {
                    return Err(LassoError::FoldWithoutEvents);
                }
                let t_held: Vec<f64> = held.iter().map(|&i| time[i]).collect();
                let d_held: Vec<u8> = held.iter().map(|&i| event[i]).collect();
                let mut solver =
                    CoxPathSolver::new(x, Some(&train), time, event, Convergence::CV_FOLD)?;
                for (l, &lambda) in lambdas.iter().enumerate() {
                    solver.solve(lambda)?;
                    let eta = solver.eta_for_rows(x, &held);
                    let c = match harrell_concordance(&eta, &t_held, &d_held) {
                        Ok(c) => c,
                        Err(SurvivalError::NoComparablePairs) => {
                            return Err(LassoError::FoldWithoutEvents)
                        }
                        Err(e) => return Err(LassoError::InvalidInput(e.to_string())),
                    };
                    losses[f][l] = -c;
                }
            }
        }
    }

    let kf = folds as f64;
    let mut curve = Vec::with_capacity(lambdas.len());
    for (l, &lambda) in lambdas.iter().enumerate() {
        let mean = (0..folds).map(|f| losses[f][l]).sum::<f64>() / kf;
        let var =
            (0..folds).map(|f| (losses[f][l] - mean).powi(2)).sum::<f64>() / (kf - 1.0);
        curve.push(CvPoint { lambda, mean_loss: mean, se_loss: (var / kf).sqrt() });
    }
    let min_idx = (0..curve.len())
        .min_by(|&a, &b| curve[a].mean_loss.total_cmp(&curve[b].mean_loss))
        .expect("non-empty grid");
    let threshold = curve[min_idx].mean_loss + curve[min_idx].se_loss;
    let one_se_idx =
        (0..curve.len()).find(|&l| curve[l].mean_loss <= threshold).unwrap_or(min_idx);
    Ok(CvResult {
        lambda_min: curve[min_idx].lambda,
        lambda_1se: curve[one_se_idx].lambda,
        curve,
    })
}
