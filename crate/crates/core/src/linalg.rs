//! Small dense symmetric positive definite solvers. The models in this
//! crate only ever factor matrices up to a few hundred columns, so a plain
//! Cholesky decomposition is sufficient and avoids an external LAPACK
//! dependency.

use ndarray::{Array1, Array2};

/// Lower-triangular Cholesky factor of a symmetric matrix, or `None` if a
/// pivot falls below `1e-12` times the largest diagonal entry (the matrix
/// is numerically rank deficient or not positive definite).
pub(crate) fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let d = a.nrows();
    debug_assert_eq!(d, a.ncols());
    let max_diag = (0..d).map(|i| a[[i, i]].abs()).fold(0.0_f64, f64::max).max(1e-300);
    let tol = 1e-12 * max_diag;
    let mut l = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= tol {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

fn solve_with_factor(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let d = l.nrows();
    let mut y = Array1::zeros(d);
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::zeros(d);
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in i + 1..d {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub(crate) fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    cholesky(a).map(|l| solve_with_factor(&l, b))
}

/// Solves `a x = b`, adding an escalating ridge `eps * mean_diag * I` when
/// the plain factorization fails. Used by iterative fitters that must make
/// progress on nearly rank deficient working Hessians.
pub(crate) fn solve_spd_ridged(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    if let Some(x) = solve_spd(a, b) {
        return Some(x);
    }
    let d = a.nrows();
    let mean_diag = (0..d).map(|i| a[[i, i]].abs()).sum::<f64>() / d.max(1) as f64;
    let mut eps = 1e-10;
    while eps <= 1e-4 {
        let mut ridged = a.clone();
        for i in 0..d {
            ridged[[i, i]] += eps * mean_diag.max(1e-12);
        }
        if let Some(x) = solve_spd(&ridged, b) {
            return Some(x);
        }
        eps *= 100.0;
    }
    None
}

/// Inverse of a symmetric positive definite matrix.
pub(crate) fn inverse_spd(a: &Array2<f64>) -> Option<Array2<f64>> {
    let l = cholesky(a)?;
    let d = a.nrows();
    let mut inv = Array2::zeros((d, d));
    for j in 0..d {
        let mut e = Array1::zeros(d);
        e[j] = 1.0;
        inv.column_mut(j).assign(&solve_with_factor(&l, &e));
    }
    Some(inv)
}
