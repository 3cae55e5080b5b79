//! Logistic regression: unpenalized Newton (IRLS) and the l1-penalized
//! coordinate descent path solver.

use ndarray::{Array1, Array2, ArrayView2};

use super::design::StdDesign;
use super::{soft_threshold, Convergence, LassoError};
use crate::linalg;

pub(crate) fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn binomial_deviance(y: &[f64], p: &[f64]) -> f64 {
    let mut dev = 0.0;
    for (&yi, &pi) in y.iter().zip(p) {
        let pi = pi.clamp(1e-10, 1.0 - 1e-10);
        dev -= 2.0 * (yi * pi.ln() + (1.0 - yi) * (1.0 - pi).ln());
    }
    dev
}

/// Controls for the Newton fitter. The strict profile drives the mean
/// score to 1e-8 and treats large coefficients as separation; the
/// propensity profile mirrors common GLM software (iteration cap with a
/// relative deviance stop, no coefficient bound) so that overfitted or
/// separated propensity models still return usable saturated fitted
/// values instead of failing.
pub(crate) struct NewtonOptions {
    pub grad_tol: f64,
    pub dev_rel_tol: Option<f64>,
    pub max_iter: usize,
    pub coef_bound: f64,
    pub ridge_on_singular: bool,
    pub error_on_max_iter: bool,
}

impl NewtonOptions {
    pub fn strict() -> Self {
        Self {
            grad_tol: 1e-8,
            dev_rel_tol: None,
            max_iter: 100,
            coef_bound: 30.0,
            ridge_on_singular: false,
            error_on_max_iter: true,
        }
    }

    pub fn propensity() -> Self {
        Self {
            grad_tol: 1e-8,
            dev_rel_tol: Some(1e-8),
            max_iter: 25,
            coef_bound: f64::INFINITY,
            ridge_on_singular: true,
            error_on_max_iter: false,
        }
    }
}

pub(crate) struct NewtonFit {
    pub intercept: f64,
    pub coefficients: Array1<f64>,
    pub fitted: Vec<f64>,
    pub converged: bool,
}

/// Newton-Raphson logistic regression on the raw (unstandardized) design,
/// intercept included implicitly as a leading column of ones.
pub(crate) fn newton_logistic(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    opts: &NewtonOptions,
) -> Result<NewtonFit, LassoError> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(LassoError::InvalidInput(format!("{} responses for {n} rows", y.len())));
    }
    let ybar = y.iter().sum::<f64>() / n as f64;
    if !(0.0 < ybar && ybar < 1.0) {
        return Err(LassoError::DegenerateResponse);
    }
    let d = p + 1;
    let mut a = Array2::ones((n, d));
    for j in 0..p {
        a.column_mut(j + 1).assign(&x.column(j));
    }
    let mut b = Array1::zeros(d);
    b[0] = (ybar / (1.0 - ybar)).ln();
    let mut fitted: Vec<f64> = vec![ybar; n];
    let mut dev = binomial_deviance(y, &fitted);
    let mut converged = false;
    let mut scaled = Array2::zeros((n, d));
    for iter in 0..opts.max_iter {
        let eta = a.dot(&b);
        for (f, &e) in fitted.iter_mut().zip(eta.iter()) {
            *f = expit(e);
        }
        let mut grad = Array1::zeros(d);
        for i in 0..n {
            let r = y[i] - fitted[i];
            for j in 0..d {
                grad[j] += a[[i, j]] * r;
            }
        }
        grad /= n as f64;
        let grad_max = grad.iter().fold(0.0_f64, |acc, g| acc.max(g.abs()));
        if let Some(j) = (0..d).position(|j| b[j].abs() > opts.coef_bound) {
            return Err(LassoError::Separation { index: j, value: b[j] });
        }
        for i in 0..n {
            let w = (fitted[i] * (1.0 - fitted[i])).sqrt();
            for j in 0..d {
                scaled[[i, j]] = w * a[[i, j]];
            }
        }
        let xtwx = scaled.t().dot(&scaled) / n as f64;
        let delta = if opts.ridge_on_singular {
            linalg::solve_spd_ridged(&xtwx, &grad)
        } else {
            linalg::solve_spd(&xtwx, &grad)
        }
        .ok_or(LassoError::RankDeficient)?;
        // A separated fit keeps proposing O(1) updates while the score
        // flattens exponentially, so convergence requires both a tiny
        // gradient and a vanishing proposed step.
        let delta_max = delta.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if grad_max <= opts.grad_tol && delta_max <= 1e-6 {
            converged = true;
            break;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &b + &(step * &delta);
            let cand_eta = a.dot(&cand);
            let cand_fitted: Vec<f64> = cand_eta.iter().map(|&e| expit(e)).collect();
            let cand_dev = binomial_deviance(y, &cand_fitted);
            if cand_dev.is_finite() && cand_dev <= dev + 1e-12 * (1.0 + dev.abs()) {
                b = cand;
                fitted = cand_fitted;
                if let Some(tol) = opts.dev_rel_tol {
                    if iter > 0 && (dev - cand_dev).abs() / (cand_dev.abs() + 0.1) < tol {
                        converged = true;
                    }
                }
                dev = cand_dev;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(LassoError::NonConvergence(
                "logistic step halving failed to reduce the deviance".into(),
            ));
        }
        if converged {
            break;
        }
    }
    if let Some(j) = (0..d).position(|j| b[j].abs() > opts.coef_bound) {
        return Err(LassoError::Separation { index: j, value: b[j] });
    }
    if !converged && opts.error_on_max_iter {
        return Err(LassoError::NonConvergence(format!(
            "logistic Newton did not converge in {} iterations",
            opts.max_iter
        )));
    }
    for f in &mut fitted {
        *f = f.clamp(1e-10, 1.0 - 1e-10);
    }
    Ok(NewtonFit {
        intercept: b[0],
        coefficients: b.slice(ndarray::s![1..]).to_owned(),
        fitted,
        converged,
    })
}

/// Warm-started coordinate descent over a decreasing lambda sequence for
/// the l1-penalized logistic likelihood
/// `(1/n) sum_i -loglik_i + lambda * sum_j |beta_j|`.
///
/// Screening follows the sequential strong rule: after certifying the
/// solution at the previous lambda the full gradient is cached, and the
/// next lambda starts from the ever-active set plus coordinates with
/// `|grad_j| >= 2 lambda_k - lambda_{k-1}`. Every solution is certified by
/// an exact Karush-Kuhn-Tucker check over all coordinates before it is
/// accepted, so screening affects speed, never the solution.
pub(crate) struct LogisticPathSolver {
    design: StdDesign,
    y: Vec<f64>,
    pub beta: Vec<f64>,
    pub beta0: f64,
    eta: Vec<f64>,
    full_grad: Vec<f64>,
    ever_active: Vec<bool>,
    prev_lambda: Option<f64>,
    conv: Convergence,
    sweeps: usize,
}

impl LogisticPathSolver {
    pub fn new(
        x: ArrayView2<'_, f64>,
        rows: Option<&[usize]>,
        y_all: &[f64],
        conv: Convergence,
    ) -> Result<Self, LassoError> {
        let design = StdDesign::from_rows(x, rows);
        let n = design.n;
        let y: Vec<f64> = match rows {
            Some(rows) => rows.iter().map(|&r| y_all[r]).collect(),
            None => y_all.to_vec(),
        };
        if y.len() != n {
            return Err(LassoError::InvalidInput(format!("{} responses for {n} rows", y.len())));
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(LassoError::InvalidInput("response must be 0/1".into()));
        }
        let ybar = y.iter().sum::<f64>() / n as f64;
        if !(0.0 < ybar && ybar < 1.0) {
            return Err(LassoError::DegenerateResponse);
        }
        let beta0 = (ybar / (1.0 - ybar)).ln();
        let p = design.p();
        // At the null model the residual y - ybar is orthogonal to the
        // intercept, so the gradient reduces to -(1/n) x~' y.
        let mut full_grad = vec![0.0; p];
        for (g, col) in full_grad.iter_mut().zip(&design.cols) {
            let mut acc = 0.0;
            for (&xv, &yv) in col.iter().zip(&y) {
                acc += xv * (ybar - yv);
            }
            *g = acc / n as f64;
        }
        Ok(Self {
            eta: vec![beta0; n],
            beta: vec![0.0; p],
            beta0,
            ever_active: vec![false; p],
            full_grad,
            prev_lambda: None,
            design,
            y,
            conv,
            sweeps: 0,
        })
    }

    pub fn lambda_max(&self) -> f64 {
        let m = self
            .full_grad
            .iter()
            .zip(&self.design.sd)
            .filter(|(_, &sd)| sd > 0.0)
            .fold(0.0_f64, |acc, (g, _)| acc.max(g.abs()));
        if m > 0.0 {
            m
        } else {
            1.0
        }
    }

    pub fn design(&self) -> &StdDesign {
        &self.design
    }

    fn work_set(&self, lambda: f64) -> Vec<usize> {
        let threshold = match self.prev_lambda {
            Some(prev) => 2.0 * lambda - prev,
            None => lambda,
        };
        (0..self.design.p())
            .filter(|&j| {
                self.design.sd[j] > 0.0
                    && (self.ever_active[j]
                        || self.beta[j] != 0.0
                        || self.full_grad[j].abs() >= threshold - 1e-12)
            })
            .collect()
    }

    /// Exact gradient of the mean negative log-likelihood for every
    /// coordinate at the current iterate; also returns the residual y - p.
    fn full_gradient(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.design.n;
        let resid: Vec<f64> =
            self.y.iter().zip(&self.eta).map(|(&y, &e)| y - expit(e)).collect();
        let mut grad = vec![0.0; self.design.p()];
        for (g, col) in grad.iter_mut().zip(&self.design.cols) {
            let mut acc = 0.0;
            for (&xv, &rv) in col.iter().zip(&resid) {
                acc += xv * rv;
            }
            *g = -acc / n as f64;
        }
        (grad, resid)
    }

    fn kkt_violation(&self, j: usize, grad_j: f64, lambda: f64) -> f64 {
        if self.beta[j] != 0.0 {
            (grad_j + lambda * self.beta[j].signum()).abs()
        } else {
            (grad_j.abs() - lambda).max(0.0)
        }
    }

    /// One cyclic coordinate-descent pass over `idxs` on the current
    /// quadratic approximation, followed by the intercept update; returns
    /// the largest step taken.
    fn cd_sweep(
        &mut self,
        idxs: &[usize],
        curv: &[f64],
        w: &[f64],
        w_sum: f64,
        resid: &mut [f64],
        lambda: f64,
    ) -> Result<f64, LassoError> {
        self.sweeps += 1;
        if self.sweeps > self.conv.max_sweeps {
            return Err(LassoError::NonConvergence(format!(
                "coordinate descent exceeded {} sweeps",
                self.conv.max_sweeps
            )));
        }
        let n = resid.len();
        let nf = n as f64;
        let mut max_delta = 0.0_f64;
        for &j in idxs {
            let vj = curv[j];
            if vj <= 0.0 {
                continue;
            }
            let col = &self.design.cols[j];
            let mut acc = 0.0;
            for (&xv, &rv) in col.iter().zip(resid.iter()) {
                acc += xv * rv;
            }
            let num = acc / nf + vj * self.beta[j];
            let new = soft_threshold(num, lambda) / vj;
            let delta = new - self.beta[j];
            if delta != 0.0 {
                for i in 0..n {
                    let step = delta * col[i];
                    resid[i] -= w[i] * step;
                    self.eta[i] += step;
                }
                self.beta[j] = new;
                if new != 0.0 {
                    self.ever_active[j] = true;
                }
                max_delta = max_delta.max(delta.abs());
            }
        }
        let r_sum: f64 = resid.iter().sum();
        let d0 = r_sum / w_sum;
        if d0 != 0.0 {
            self.beta0 += d0;
            for i in 0..n {
                resid[i] -= w[i] * d0;
                self.eta[i] += d0;
            }
            max_delta = max_delta.max(d0.abs());
        }
        Ok(max_delta)
    }

    /// Solves the penalized problem restricted to `work`, using the exact
    /// Bernoulli gradient as the convergence criterion and quadratic
    /// (IRLS) coordinate descent as the inner step.
    fn solve_restricted(&mut self, lambda: f64, work: &[usize]) -> Result<(), LassoError> {
        let n = self.design.n;
        let nf = n as f64;
        let mut w = vec![0.0; n];
        for _outer in 0..self.conv.max_rounds {
            let mut resid = vec![0.0; n];
            let mut p_sum_dev = 0.0;
            for i in 0..n {
                let p = expit(self.eta[i]);
                w[i] = (p * (1.0 - p)).max(1e-10);
                resid[i] = self.y[i] - p;
                p_sum_dev += resid[i];
            }
            if self.conv.certify {
                let mut kkt = (p_sum_dev / nf).abs();
                for &j in work {
                    let col = &self.design.cols[j];
                    let mut acc = 0.0;
                    for (&xv, &rv) in col.iter().zip(&resid) {
                        acc += xv * rv;
                    }
                    kkt = kkt.max(self.kkt_violation(j, -acc / nf, lambda));
                }
                if kkt <= self.conv.kkt_tol {
                    return Ok(());
                }
            }
            let mut curv = vec![0.0; self.design.p()];
            for &j in work {
                let col = &self.design.cols[j];
                let mut acc = 0.0;
                for (&xv, &wv) in col.iter().zip(&w) {
                    acc += wv * xv * xv;
                }
                curv[j] = acc / nf;
            }
            let w_sum: f64 = w.iter().sum();
            // Two-level descent: polish the currently nonzero coordinates
            // until stable, with one pass over the full working set
            // between polishing rounds to let new coordinates enter; stop
            // when a full pass moves nothing.
            let mut round_step = 0.0_f64;
            loop {
                let full_step = self.cd_sweep(work, &curv, &w, w_sum, &mut resid, lambda)?;
                round_step = round_step.max(full_step);
                if full_step <= self.conv.cd_tol {
                    break;
                }
                let active: Vec<usize> =
                    work.iter().copied().filter(|&j| self.beta[j] != 0.0).collect();
                loop {
                    let step =
                        self.cd_sweep(&active, &curv, &w, w_sum, &mut resid, lambda)?;
                    if step <= self.conv.cd_tol {
                        break;
                    }
                }
            }
            if !self.conv.certify && round_step <= self.conv.cd_tol {
                return Ok(());
            }
        }
        if !self.conv.certify {
            return Ok(());
        }
        Err(LassoError::NonConvergence(format!(
            "IRLS outer loop exceeded {} iterations",
            self.conv.max_rounds
        )))
    }

    /// Solves at `lambda` (which must not exceed the previous lambda) and
    /// certifies the solution with a full KKT pass.
    pub fn solve(&mut self, lambda: f64) -> Result<(), LassoError> {
        if lambda < 0.0 {
            return Err(LassoError::InvalidInput("negative lambda".into()));
        }
        self.sweeps = 0;
        let mut work = self.work_set(lambda);
        loop {
            self.solve_restricted(lambda, &work)?;
            let (grad, _) = self.full_gradient();
            let mut added = false;
            for j in 0..self.design.p() {
                if self.design.sd[j] > 0.0
                    && self.beta[j] == 0.0
                    && !work.contains(&j)
                    && grad[j].abs() > lambda + self.conv.kkt_tol
                {
                    work.push(j);
                    added = true;
                }
            }
            if !added {
                self.full_grad = grad;
                self.prev_lambda = Some(lambda);
                return Ok(());
            }
            work.sort_unstable();
        }
    }

    /// Linear predictor (standardized frame, intercept included) for the
    /// given rows of the original covariate matrix.
    pub fn eta_for_rows(&self, x: ArrayView2<'_, f64>, rows: &[usize]) -> Vec<f64> {
        rows.iter()
            .map(|&r| {
                let mut e = self.beta0;
                for (j, &b) in self.beta.iter().enumerate() {
                    if b != 0.0 && self.design.sd[j] > 0.0 {
                        e += b * (x[[r, j]] - self.design.mean[j]) / self.design.sd[j];
                    }
                }
                e
            })
            .collect()
    }

    pub fn original_scale(&self) -> (f64, Vec<f64>) {
        (
            self.design.original_intercept(self.beta0, &self.beta),
            self.design.original_coefficients(&self.beta),
        )
    }
}
