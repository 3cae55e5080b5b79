//! l1-penalized Cox regression by coordinate descent on the quadratic
//! approximation around the current linear predictor.
//!
//! The gradient of the mean negative Breslow partial log-likelihood with
//! respect to `eta_i` is `-(1/n) g_i` with the martingale-style residual
//! `g_i = D_i - exp(eta_i) A(T_i)`, where `A(t)` accumulates `d_k / S0(t_k)`
//! over event times `t_k <= t`. The diagonal curvature used for the
//! working response is `h_i = exp(eta_i) A(T_i) - exp(2 eta_i) A2(T_i)`.

use ndarray::ArrayView2;

use super::design::StdDesign;
use super::{soft_threshold, Convergence, LassoError};

/// Clamp for the linear predictor before exponentiation; solutions this
/// extreme have already failed, the clamp only keeps arithmetic finite.
const ETA_CLAMP: f64 = 150.0;

pub(crate) struct CoxPathSolver {
    design: StdDesign,
    event: Vec<f64>,
    /// Subject positions ordered by ascending follow-up time.
    order: Vec<usize>,
    /// Half-open ranges into `order` sharing one follow-up time.
    groups: Vec<(usize, usize)>,
    /// Events per tie group.
    group_events: Vec<f64>,
    pub beta: Vec<f64>,
    eta: Vec<f64>,
    full_grad: Vec<f64>,
    ever_active: Vec<bool>,
    prev_lambda: Option<f64>,
    conv: Convergence,
    sweeps: usize,
}

impl CoxPathSolver {
    pub fn new(
        x: ArrayView2<'_, f64>,
        rows: Option<&[usize]>,
        time_all: &[f64],
        event_all: &[u8],
        conv: Convergence,
    ) -> Result<Self, LassoError> {
        let design = StdDesign::from_rows(x, rows);
        let n = design.n;
        let (time, event): (Vec<f64>, Vec<f64>) = match rows {
            Some(rows) => (
                rows.iter().map(|&r| time_all[r]).collect(),
                rows.iter().map(|&r| f64::from(event_all[r])).collect(),
            ),
            None => (time_all.to_vec(), event_all.iter().map(|&d| f64::from(d)).collect()),
        };
        if time.len() != n {
            return Err(LassoError::InvalidInput(format!("{} times for {n} rows", time.len())));
        }
        if !event.iter().any(|&d| d == 1.0) {
            return Err(LassoError::NoEvents);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| time[a].partial_cmp(&time[b]).unwrap());
        let mut groups = Vec::new();
        let mut group_events = Vec::new();
        let mut start = 0;
        for i in 1..=n {
            if i == n || time[order[i]] != time[order[start]] {
                groups.push((start, i));
                group_events.push(order[start..i].iter().map(|&s| event[s]).sum());
                start = i;
            }
        }
        let p = design.p();
        let mut solver = Self {
            design,
            event,
            order,
            groups,
            group_events,
            beta: vec![0.0; p],
            eta: vec![0.0; n],
            full_grad: vec![0.0; p],
            ever_active: vec![false; p],
            prev_lambda: None,
            conv,
            sweeps: 0,
        };
        let (g, _) = solver.refresh();
        solver.full_grad = solver.gradient_from_residuals(&g);
        Ok(solver)
    }

    fn n(&self) -> usize {
        self.eta.len()
    }

    /// Martingale residuals `g` and curvatures `h` at the current `eta`.
    fn refresh(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let risk: Vec<f64> =
            self.eta.iter().map(|&e| e.clamp(-ETA_CLAMP, ETA_CLAMP).exp()).collect();
        let mut s0 = vec![0.0; self.groups.len()];
        let mut acc = 0.0;
        for (gi, &(g0, g1)) in self.groups.iter().enumerate().rev() {
            for &i in &self.order[g0..g1] {
                acc += risk[i];
            }
            s0[gi] = acc;
        }
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        let mut a1 = 0.0;
        let mut a2 = 0.0;
        for (gi, &(g0, g1)) in self.groups.iter().enumerate() {
            let d = self.group_events[gi];
            if d > 0.0 {
                a1 += d / s0[gi];
                a2 += d / (s0[gi] * s0[gi]);
            }
            for &i in &self.order[g0..g1] {
                g[i] = self.event[i] - risk[i] * a1;
                h[i] = risk[i] * a1 - risk[i] * risk[i] * a2;
            }
        }
        (g, h)
    }

    fn gradient_from_residuals(&self, g: &[f64]) -> Vec<f64> {
        let nf = self.n() as f64;
        let mut grad = vec![0.0; self.design.p()];
        for (out, col) in grad.iter_mut().zip(&self.design.cols) {
            let mut acc = 0.0;
            for (&xv, &gv) in col.iter().zip(g) {
                acc += xv * gv;
            }
            *out = -acc / nf;
        }
        grad
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

    fn kkt_violation(&self, j: usize, grad_j: f64, lambda: f64) -> f64 {
        if self.beta[j] != 0.0 {
            (grad_j + lambda * self.beta[j].signum()).abs()
        } else {
            (grad_j.abs() - lambda).max(0.0)
        }
    }

    /// One cyclic coordinate-descent pass over `idxs` on the current
    /// quadratic approximation; returns the largest coefficient step.
    fn cd_sweep(
        &mut self,
        idxs: &[usize],
        curv: &[f64],
        w: &[f64],
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
        Ok(max_delta)
    }

    fn solve_restricted(&mut self, lambda: f64, work: &[usize]) -> Result<(), LassoError> {
        let nf = self.n() as f64;
        for _outer in 0..self.conv.max_rounds {
            let (mut resid, mut w) = self.refresh();
            if self.conv.certify {
                let mut kkt = 0.0_f64;
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
            for wi in &mut w {
                *wi = wi.max(1e-10);
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
            // Converge the quadratic subproblem with the usual two-level
            // scheme: iterate over the currently nonzero coordinates until
            // they are stable, then run one pass over the full working set
            // to catch coordinates that should enter; stop when a full
            // pass moves nothing.
            let mut round_step = 0.0_f64;
            loop {
                let full_step = self.cd_sweep(work, &curv, &w, &mut resid, lambda)?;
                round_step = round_step.max(full_step);
                if full_step <= self.conv.cd_tol {
                    break;
                }
                let active: Vec<usize> =
                    work.iter().copied().filter(|&j| self.beta[j] != 0.0).collect();
                loop {
                    let step = self.cd_sweep(&active, &curv, &w, &mut resid, lambda)?;
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
            "quadratic approximation loop exceeded {} iterations",
            self.conv.max_rounds
        )))
    }

    pub fn solve(&mut self, lambda: f64) -> Result<(), LassoError> {
        if lambda < 0.0 {
            return Err(LassoError::InvalidInput("negative lambda".into()));
        }
        self.sweeps = 0;
        let mut work = self.work_set(lambda);
        loop {
            self.solve_restricted(lambda, &work)?;
            let (g, _) = self.refresh();
            let grad = self.gradient_from_residuals(&g);
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

    /// Linear predictor in the standardized frame for rows of the original
    /// matrix; the additive constant from centering is irrelevant for
    /// concordance, which only compares predictors.
    pub fn eta_for_rows(&self, x: ArrayView2<'_, f64>, rows: &[usize]) -> Vec<f64> {
        rows.iter()
            .map(|&r| {
                let mut e = 0.0;
                for (j, &b) in self.beta.iter().enumerate() {
                    if b != 0.0 && self.design.sd[j] > 0.0 {
                        e += b * (x[[r, j]] - self.design.mean[j]) / self.design.sd[j];
                    }
                }
                e
            })
            .collect()
    }

    pub fn original_scale(&self) -> Vec<f64> {
        self.design.original_coefficients(&self.beta)
    }
}
