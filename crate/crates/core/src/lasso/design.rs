//! Column-standardized design storage for the coordinate descent solvers.

use ndarray::ArrayView2;

/// Covariate columns standardized to mean 0 and population variance 1,
/// stored column-major for cache-friendly coordinate sweeps. Constant
/// columns are kept as all-zero with `sd == 0` and never penalized into
/// the active set.
pub(crate) struct StdDesign {
    pub cols: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub n: usize,
}

impl StdDesign {
    pub fn from_rows(x: ArrayView2<'_, f64>, rows: Option<&[usize]>) -> Self {
        let n = rows.map_or(x.nrows(), <[usize]>::len);
        let p = x.ncols();
        let mut cols = Vec::with_capacity(p);
        let mut mean = Vec::with_capacity(p);
        let mut sd = Vec::with_capacity(p);
        let mut raw = vec![0.0; n];
        for j in 0..p {
            match rows {
                Some(rows) => {
                    for (out, &r) in raw.iter_mut().zip(rows) {
                        *out = x[[r, j]];
                    }
                }
                None => {
                    for (out, v) in raw.iter_mut().zip(x.column(j)) {
                        *out = *v;
                    }
                }
            }
            let m = raw.iter().sum::<f64>() / n as f64;
            let var = raw.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let s = var.sqrt();
            if s <= 1e-12 * (1.0 + m.abs()) {
                cols.push(vec![0.0; n]);
                mean.push(m);
                sd.push(0.0);
            } else {
                cols.push(raw.iter().map(|v| (v - m) / s).collect());
                mean.push(m);
                sd.push(s);
            }
        }
        Self { cols, mean, sd, n }
    }

    pub fn p(&self) -> usize {
        self.cols.len()
    }

    /// Back-transforms standardized-scale coefficients to the original
    /// covariate scale.
    pub fn original_coefficients(&self, beta_std: &[f64]) -> Vec<f64> {
        beta_std
            .iter()
            .zip(&self.sd)
            .map(|(&b, &s)| if s > 0.0 { b / s } else { 0.0 })
            .collect()
    }

    /// Intercept on the original scale given the standardized-scale
    /// intercept and coefficients.
    pub fn original_intercept(&self, intercept_std: f64, beta_std: &[f64]) -> f64 {
        let shift: f64 = beta_std
            .iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(&b, (&m, &s))| if s > 0.0 { b * m / s } else { 0.0 })
            .sum();
        intercept_std - shift
    }
}
