//! Data-driven construction of the candidate covariate sets used by the
//! weighting estimators, plus quality diagnostics against a known list of
//! confounders.
//!
//! Two cross-validated lasso regressions drive everything: a logistic
//! lasso of treatment on all covariates picks the treatment-associated
//! set, and per-arm Cox lassos of the outcome pick the outcome-associated
//! set. Their union is the double-selection set and their intersection
//! the parsimonious one.

use thiserror::Error;

use crate::data::{CovariateSet, DataError, SurvivalDataset};
use crate::lasso::{cox_lasso_path, cross_validate, logistic_lasso_path, CvKind, LassoError};
use crate::rng::RngStream;

/// Fold count for every selection cross-validation.
const CV_FOLDS: usize = 10;
/// Minimum subjects an arm needs before an outcome lasso is attempted.
const MIN_ARM_SIZE: usize = 20;

#[derive(Debug, Error)]
pub enum SelectionError {
    /// An outcome lasso needs at least [`MIN_ARM_SIZE`] subjects and one
    /// event in each treatment arm.
    #[error(
        "{arm} arm has {subjects} subjects and {events} events; outcome \
         selection needs at least 20 subjects and 1 event per arm"
    )]
    ArmTooSmall { arm: &'static str, subjects: usize, events: usize },
    #[error(transparent)]
    Lasso(#[from] LassoError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// The four candidate covariate sets derived from one selection pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectedSets {
    /// Covariates the treatment lasso kept.
    pub xz_hat: CovariateSet,
    /// Covariates either per-arm outcome lasso kept.
    pub xy_hat: CovariateSet,
    /// Double selection: `xz_hat` union `xy_hat`.
    pub ds_hat: CovariateSet,
    /// Intersection of `xz_hat` and `xy_hat`.
    pub i_hat: CovariateSet,
}

/// Quality of a selected set against a list of true confounders.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionDiagnostics {
    /// Number of true confounders the set captured.
    pub true_positive_count: f64,
    /// Harmonic mean of precision and recall; 0 for an empty set.
    pub f1: f64,
    /// Size of the selected set.
    pub cardinality: usize,
}

/// Selects the treatment-associated covariates: a 10-fold cross-validated
/// logistic lasso of the treatment indicator on all covariates, refitted
/// at the one-standard-error penalty. An empty set is a legal outcome and
/// simply means no covariate predicts treatment at that penalty.
pub fn select_xz(
    data: &SurvivalDataset,
    rng: &mut RngStream,
) -> Result<CovariateSet, SelectionError> {
    let y: Vec<f64> = data.z().iter().map(|&v| f64::from(v)).collect();
    let cv = cross_validate(CvKind::Logistic { y: &y }, data.x(), CV_FOLDS, rng)?;
    let path = logistic_lasso_path(data.x(), &y, &cv.grid_to_1se())?;
    let last = path.lambdas.len() - 1;
    Ok(CovariateSet::new(path.nonzero_at(last))?)
}

/// Selects the outcome-associated covariates: one 10-fold cross-validated
/// Cox lasso per treatment arm, each refitted at its own one-standard-error
/// penalty, returning the union of the two arms' selections. The treated
/// arm is processed first so a single random stream reproduces the same
/// folds. Fails with [`SelectionError::ArmTooSmall`] when either arm has
/// fewer than 20 subjects or no events.
pub fn select_xy(
    data: &SurvivalDataset,
    rng: &mut RngStream,
) -> Result<CovariateSet, SelectionError> {
    let mut union = CovariateSet::empty();
    for (arm, label) in [(1u8, "treated"), (0u8, "untreated")] {
        let rows: Vec<usize> = (0..data.n()).filter(|&i| data.z()[i] == arm).collect();
        let (x, _, time, event) = data.subset_rows(&rows);
        let events = event.iter().filter(|&&e| e == 1).count();
        if rows.len() < MIN_ARM_SIZE || events == 0 {
            return Err(SelectionError::ArmTooSmall {
                arm: label,
                subjects: rows.len(),
                events,
            });
        }
        let cv =
            cross_validate(CvKind::Cox { time: &time, event: &event }, x.view(), CV_FOLDS, rng)?;
        let path = cox_lasso_path(x.view(), &time, &event, &cv.grid_to_1se())?;
        let last = path.lambdas.len() - 1;
        union = union.union(&CovariateSet::new(path.nonzero_at(last))?);
    }
    Ok(union)
}

/// Runs both selection lassos and derives all four candidate sets. The
/// treatment and outcome selections are independent given their random
/// streams, so they run in parallel on the rayon pool; each receives its
/// own child stream to keep results identical regardless of scheduling.
pub fn select_all(
    data: &SurvivalDataset,
    rng_xz: &mut RngStream,
    rng_xy: &mut RngStream,
) -> Result<SelectedSets, SelectionError> {
    let (xz, xy) = rayon::join(
        || select_xz(data, rng_xz),
        || select_xy(data, rng_xy),
    );
    Ok(derive_sets(&xz?, &xy?))
}

/// Combines a treatment-associated and an outcome-associated set into the
/// four candidate sets: the inputs themselves, their union (double
/// selection), and their intersection.
pub fn derive_sets(xz_hat: &CovariateSet, xy_hat: &CovariateSet) -> SelectedSets {
    SelectedSets {
        xz_hat: xz_hat.clone(),
        xy_hat: xy_hat.clone(),
        ds_hat: xz_hat.union(xy_hat),
        i_hat: xz_hat.intersection(xy_hat),
    }
}

/// Scores a selected set against the true confounders: the number of
/// confounders captured, the F1 score (0 for an empty set, 1 exactly for
/// perfect recovery), and the set's cardinality. `true_confounders` must
/// be nonempty; an empty truth yields all-zero diagnostics.
pub fn selection_diagnostics(
    set: &CovariateSet,
    true_confounders: &CovariateSet,
) -> SelectionDiagnostics {
    debug_assert!(!true_confounders.is_empty());
    let tp = set.overlap(true_confounders) as f64;
    let f1 = if set.is_empty() || true_confounders.is_empty() || tp == 0.0 {
        0.0
    } else {
        let precision = tp / set.len() as f64;
        let recall = tp / true_confounders.len() as f64;
        2.0 * precision * recall / (precision + recall)
    };
    SelectionDiagnostics { true_positive_count: tp, f1, cardinality: set.len() }
}

impl SelectedSets {
    /// Diagnostics for each of the four sets, in the order
    /// (xz_hat, xy_hat, ds_hat, i_hat).
    pub fn diagnostics(
        &self,
        true_confounders: &CovariateSet,
    ) -> [SelectionDiagnostics; 4] {
        [
            selection_diagnostics(&self.xz_hat, true_confounders),
            selection_diagnostics(&self.xy_hat, true_confounders),
            selection_diagnostics(&self.ds_hat, true_confounders),
            selection_diagnostics(&self.i_hat, true_confounders),
        ]
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::data::SurvivalDataset;

    fn set(indices: impl IntoIterator<Item = usize>) -> CovariateSet {
        CovariateSet::new(indices).unwrap()
    }

    #[test]
    fn derive_sets_matches_hand_worked_examples() {
        let sets = derive_sets(&set([1, 2, 5]), &set([2, 3]));
        assert_eq!(sets.ds_hat, set([1, 2, 3, 5]));
        assert_eq!(sets.i_hat, set([2]));

        let sets = derive_sets(&CovariateSet::empty(), &set([4]));
        assert_eq!(sets.ds_hat, set([4]));
        assert!(sets.i_hat.is_empty());

        let same = set([3, 7, 9]);
        let sets = derive_sets(&same, &same);
        assert_eq!(sets.ds_hat, same);
        assert_eq!(sets.i_hat, same);
    }

    #[test]
    fn diagnostics_match_hand_worked_examples() {
        let truth = set([1, 2, 3, 4]);

        let d = selection_diagnostics(&set([1, 2, 3, 4]), &truth);
        assert_abs_diff_eq!(d.true_positive_count, 4.0, epsilon = 0.0);
        assert_abs_diff_eq!(d.f1, 1.0, epsilon = 0.0);
        assert_eq!(d.cardinality, 4);

        let d = selection_diagnostics(&set(1..=20), &truth);
        assert_abs_diff_eq!(d.true_positive_count, 4.0, epsilon = 0.0);
        assert_abs_diff_eq!(d.f1, 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(d.cardinality, 20);

        let d = selection_diagnostics(&CovariateSet::empty(), &truth);
        assert_abs_diff_eq!(d.true_positive_count, 0.0, epsilon = 0.0);
        assert_abs_diff_eq!(d.f1, 0.0, epsilon = 0.0);
        assert_eq!(d.cardinality, 0);
    }

    #[test]
    fn diagnostics_are_invariant_to_consistent_relabeling() {
        // Swap labels 2 <-> 9 and 3 <-> 11 in both arguments.
        let relabel = |i: usize| match i {
            2 => 9,
            9 => 2,
            3 => 11,
            11 => 3,
            other => other,
        };
        let selected = [2usize, 3, 9, 15];
        let truth = [1usize, 2, 3, 4];
        let d_orig = selection_diagnostics(&set(selected), &set(truth));
        let d_perm = selection_diagnostics(
            &set(selected.map(relabel)),
            &set(truth.map(relabel)),
        );
        assert_eq!(d_orig, d_perm);
    }

    proptest! {
        #[test]
        fn set_algebra_invariants_hold(
            a in prop::collection::btree_set(1usize..40, 0..12),
            b in prop::collection::btree_set(1usize..40, 0..12),
        ) {
            let xz = set(a.clone());
            let xy = set(b.clone());
            let sets = derive_sets(&xz, &xy);
            for i in 1..40 {
                let in_union = a.contains(&i) || b.contains(&i);
                let in_both = a.contains(&i) && b.contains(&i);
                prop_assert_eq!(sets.ds_hat.contains(i), in_union);
                prop_assert_eq!(sets.i_hat.contains(i), in_both);
            }
            for &i in sets.i_hat.indices() {
                prop_assert!(sets.xz_hat.contains(i) && sets.xy_hat.contains(i));
            }
            for &i in sets.xz_hat.indices() {
                prop_assert!(sets.ds_hat.contains(i));
            }
            prop_assert_eq!(
                sets.ds_hat.len() + sets.i_hat.len(),
                sets.xz_hat.len() + sets.xy_hat.len()
            );
        }

        #[test]
        fn f1_is_bounded_and_tight_exactly_at_equality(
            a in prop::collection::btree_set(1usize..30, 0..10),
            b in prop::collection::btree_set(1usize..30, 1..10),
        ) {
            let d = selection_diagnostics(&set(a.clone()), &set(b.clone()));
            prop_assert!(d.f1 >= 0.0 && d.f1 <= 1.0);
            prop_assert_eq!(d.f1 == 1.0, a == b);
        }
    }

    fn normal_matrix(n: usize, p: usize, rng: &mut RngStream) -> Array2<f64> {
        Array2::from_shape_fn((n, p), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn treatment_noise_selects_the_empty_set_in_most_seeds() {
        let n = 400;
        let p = 20;
        let seeds = 20;
        let mut empty = 0;
        for seed in 0..seeds {
            let mut rng_data = RngStream::new(4000 + seed, 0);
            let x = normal_matrix(n, p, &mut rng_data);
            let z: Vec<u8> =
                (0..n).map(|_| u8::from(rng_data.random::<f64>() < 0.5)).collect();
            let time: Vec<f64> = (0..n).map(|_| 0.1 + rng_data.random::<f64>()).collect();
            let event: Vec<u8> = (0..n).map(|i| u8::from(i % 4 != 0)).collect();
            let data = SurvivalDataset::from_parts(x, z, time, event).unwrap();
            let mut rng = RngStream::new(5000 + seed, 0);
            if select_xz(&data, &mut rng).unwrap().is_empty() {
                empty += 1;
            }
        }
        assert!(empty * 10 >= seeds * 9, "empty selections: {empty}/{seeds}");
    }

    /// Concordance is invariant to the scale of the linear predictor, so
    /// held-out folds do not penalize overfitted noise coefficients the
    /// way deviance does; the one-standard-error rule then usually lands
    /// on a small interior penalty rather than the all-zero model. The
    /// contract under pure noise is therefore smallness, not emptiness.
    #[test]
    fn outcome_noise_selects_small_sets() {
        let n = 200;
        let p = 10;
        let seeds: usize = 20;
        let mut cards = Vec::new();
        for seed in 0..seeds as u64 {
            let mut rng_data = RngStream::new(6000 + seed, 0);
            let x = normal_matrix(n, p, &mut rng_data);
            let z: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
            let time: Vec<f64> =
                (0..n).map(|_| -rng_data.random::<f64>().max(1e-12).ln()).collect();
            let event: Vec<u8> = (0..n).map(|i| u8::from(i % 5 != 0)).collect();
            let data = SurvivalDataset::from_parts(x, z, time, event).unwrap();
            let mut rng = RngStream::new(7000 + seed, 0);
            cards.push(select_xy(&data, &mut rng).unwrap().len());
        }
        let total: usize = cards.iter().sum();
        let tiny = cards.iter().filter(|&&c| c <= 2).count();
        assert!(total <= 5 * seeds, "mean cardinality {} too high", total as f64 / 20.0);
        assert!(tiny * 10 >= seeds * 4, "only {tiny}/{seeds} seeds selected <= 2 covariates");
    }

    #[test]
    fn informative_treatment_columns_are_recovered() {
        let n = 600;
        let p = 12;
        let mut rng_data = RngStream::new(8100, 0);
        let x = normal_matrix(n, p, &mut rng_data);
        let z: Vec<u8> = (0..n)
            .map(|i| {
                let eta = 1.5 * x[[i, 0]] - 1.2 * x[[i, 2]];
                u8::from(rng_data.random::<f64>() < 1.0 / (1.0 + (-eta).exp()))
            })
            .collect();
        let time: Vec<f64> = (0..n).map(|_| 0.1 + rng_data.random::<f64>()).collect();
        let event: Vec<u8> = (0..n).map(|i| u8::from(i % 3 != 0)).collect();
        let data = SurvivalDataset::from_parts(x, z, time, event).unwrap();
        let mut rng = RngStream::new(8200, 0);
        let selected = select_xz(&data, &mut rng).unwrap();
        assert!(
            selected.contains(1) && selected.contains(3),
            "selected {selected} misses a strong treatment predictor"
        );
    }

    #[test]
    fn informative_outcome_columns_are_recovered_from_either_arm() {
        // Column 1 drives the hazard in the treated arm only, column 2 in
        // the untreated arm only; the union must contain both.
        let n = 700;
        let p = 10;
        let mut rng_data = RngStream::new(8300, 0);
        let x = normal_matrix(n, p, &mut rng_data);
        let z: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
        let time: Vec<f64> = (0..n)
            .map(|i| {
                let lp = if z[i] == 1 { 1.6 * x[[i, 0]] } else { 1.6 * x[[i, 1]] };
                let u: f64 = rng_data.random::<f64>().max(1e-12);
                -u.ln() / lp.exp()
            })
            .collect();
        let event = vec![1u8; n];
        let data = SurvivalDataset::from_parts(x, z, time, event).unwrap();
        let mut rng = RngStream::new(8400, 0);
        let selected = select_xy(&data, &mut rng).unwrap();
        assert!(
            selected.contains(1) && selected.contains(2),
            "selected {selected} misses an arm-specific outcome predictor"
        );
    }

    #[test]
    fn small_arm_is_rejected() {
        let n = 30;
        let mut rng_data = RngStream::new(8500, 0);
        let x = normal_matrix(n, 3, &mut rng_data);
        // Five treated subjects is below the minimum arm size.
        let z: Vec<u8> = (0..n).map(|i| u8::from(i < 5)).collect();
        let time: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let event = vec![1u8; n];
        let data = SurvivalDataset::from_parts(x, z, time, event).unwrap();
        let mut rng = RngStream::new(8600, 0);
        let err = select_xy(&data, &mut rng).unwrap_err();
        assert!(
            matches!(err, SelectionError::ArmTooSmall { arm: "treated", subjects: 5, .. }),
            "got {err:?}"
        );
    }

    #[test]
    fn selection_is_deterministic_given_streams() {
        let n = 80;
        let mut rng_data = RngStream::new(8700, 0);
        let x = normal_matrix(n, 6, &mut rng_data);
        let z: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
        let time: Vec<f64> = (0..n).map(|_| 0.1 + rng_data.random::<f64>()).collect();
        let event: Vec<u8> = (0..n).map(|i| u8::from(i % 3 != 0)).collect();
        let data = SurvivalDataset::from_parts(x, z, time, event).unwrap();
        let run = || {
            select_all(
                &data,
                &mut RngStream::new(8800, 0),
                &mut RngStream::new(8900, 0),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }
}
