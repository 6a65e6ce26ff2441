//! Ridge estimators with optimistic bonuses.
//!
//! [`UtilityEstimator`] fits `theta_h` and `gamma_h` from noisy utilities of
//! matched pairs and returns upper confidence bounds clipped to `[-1, 1]`.
//! [`PlannerEstimator`] runs least-squares value iteration for the planner:
//! it regresses next-step optimistic values on `psi(C, e)` and fills the
//! truncated optimistic Q-table.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::market::Side;

/// Full re-inversion of the Gram matrix after this many rank-one updates.
pub const REFRESH_INTERVAL: usize = 500;

/// Radius of the utility confidence ellipsoid,
/// `sqrt(d^2 ln(2 (1 + d^2 K m) / (lambda delta))) + sqrt(lambda) d`,
/// where `m = max_h min(|I_h|, |J_h|)`.
pub fn beta_u(
    delta: f64,
    d: usize,
    episodes: usize,
    lambda: f64,
    max_matched: usize,
) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta {delta} outside (0, 1)")));
    }
    if d == 0 || episodes == 0 || lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::invalid("beta_u needs d >= 1, K >= 1 and lambda > 0"));
    }
    let d2 = (d * d) as f64;
    let count = d2 * episodes as f64 * max_matched as f64;
    let log_term = (2.0 * (1.0 + count) / (lambda * delta)).ln();
    Ok((d2 * log_term).sqrt() + lambda.sqrt() * d as f64)
}

/// Planner bonus scale `eta d^2 (sum_h W_h) sqrt(ln(d K H min(|I|, |J|) / delta))`.
pub fn beta_v(
    eta: f64,
    d: usize,
    episodes: usize,
    horizon: usize,
    min_agents: usize,
    delta: f64,
    sum_w: f64,
) -> Result<f64> {
    if !(eta > 0.0 && delta > 0.0 && sum_w > 0.0)
        || d == 0
        || episodes == 0
        || horizon == 0
        || min_agents == 0
    {
        return Err(Error::invalid("beta_V arguments must be positive"));
    }
    let iota = (d as f64 * episodes as f64 * horizon as f64 * min_agents as f64 / delta).ln();
    if iota <= 0.0 {
        return Err(Error::invalid(format!("log term {iota} is not positive")));
    }
    Ok(eta * (d * d) as f64 * sum_w * iota.sqrt())
}

/// Gram matrix `lambda I + sum x x^T` with an incrementally maintained inverse.
#[derive(Debug, Clone)]
pub struct RidgeStats {
    lambda: f64,
    gram: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
    count: usize,
    since_refresh: usize,
}

impl RidgeStats {
    pub fn new(dim: usize, lambda: f64) -> Self {
        Self {
            lambda,
            gram: DMatrix::identity(dim, dim) * lambda,
            gram_inv: DMatrix::identity(dim, dim) / lambda,
            count: 0,
            since_refresh: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of feature vectors absorbed so far.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_inv(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    /// Sherman-Morrison update for `gram += x x^T`.
    pub fn add(&mut self, x: &[f64]) {
        let x = DVector::from_column_slice(x);
        self.gram.ger(1.0, &x, &x, 1.0);
        let ax = &self.gram_inv * &x;
        let denom = 1.0 + x.dot(&ax);
        self.gram_inv.ger(-1.0 / denom, &ax, &ax, 1.0);
        self.count += 1;
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_INTERVAL {
            self.refresh();
        }
    }

    /// Recomputes the inverse from scratch (Cholesky) to shed accumulated
    /// rounding error.
    pub fn refresh(&mut self) {
        let chol = self
            .gram
            .clone()
            .cholesky()
            .expect("lambda I + X^T X is positive definite");
        self.gram_inv = chol.inverse();
        self.since_refresh = 0;
    }

    /// `x^T gram^{-1} x`.
    pub fn inv_quad(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for (a, &xa) in x.iter().enumerate() {
            if xa == 0.0 {
                continue;
            }
            let row: f64 = x
                .iter()
                .enumerate()
                .map(|(b, &xb)| self.gram_inv[(a, b)] * xb)
                .sum();
            total += xa * row;
        }
        total.max(0.0)
    }

    /// `||x||_{gram^{-1}}`.
    pub fn width(&self, x: &[f64]) -> f64 {
        self.inv_quad(x).sqrt()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        &self.gram_inv * rhs
    }
}

/// Ridge regression of both sides' utilities on `Phi` for one step.
#[derive(Debug, Clone)]
pub struct UtilityEstimator {
    stats: RidgeStats,
    b_theta: DVector<f64>,
    b_gamma: DVector<f64>,
    theta_hat: DVector<f64>,
    gamma_hat: DVector<f64>,
}

impl UtilityEstimator {
    /// `dim` is the length of `Phi`, i.e. `d^2`.
    pub fn new(dim: usize, lambda: f64) -> Self {
        Self {
            stats: RidgeStats::new(dim, lambda),
            b_theta: DVector::zeros(dim),
            b_gamma: DVector::zeros(dim),
            theta_hat: DVector::zeros(dim),
            gamma_hat: DVector::zeros(dim),
        }
    }

    pub fn stats(&self) -> &RidgeStats {
        &self.stats
    }

    pub fn observations(&self) -> usize {
        self.stats.count()
    }

    pub fn has_data(&self) -> bool {
        self.stats.count() > 0
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn gamma_hat(&self) -> &DVector<f64> {
        &self.gamma_hat
    }

    pub fn b_theta(&self) -> &DVector<f64> {
        &self.b_theta
    }

    /// Absorbs `(Phi, u, v)` observations and refreshes the point estimates.
    pub fn ingest<'a>(
        &mut self,
        observations: impl IntoIterator<Item = (&'a [f64], f64, f64)>,
    ) -> Result<()> {
        let dim = self.stats.dim();
        for (phi, u, v) in observations {
            if phi.len() != dim {
                return Err(Error::invalid(format!(
                    "feature of length {} for a {dim}-dimensional estimator",
                    phi.len()
                )));
            }
            self.stats.add(phi);
            for (k, x) in phi.iter().enumerate() {
                self.b_theta[k] += x * u;
                self.b_gamma[k] += x * v;
            }
        }
        self.theta_hat = self.stats.solve(&self.b_theta);
        self.gamma_hat = self.stats.solve(&self.b_gamma);
        Ok(())
    }

    /// `<Phi, estimate>` without the bonus.
    pub fn point_estimate(&self, phi: &[f64], side: Side) -> f64 {
        let est = match side {
            Side::First => &self.theta_hat,
            Side::Second => &self.gamma_hat,
        };
        phi.iter().zip(est.iter()).map(|(a, b)| a * b).sum()
    }

    /// `||Phi||_{Sigma^{-1}}`.
    pub fn width(&self, phi: &[f64]) -> f64 {
        self.stats.width(phi)
    }

    /// Optimistic utility clipped to `[-1, 1]`. With no data yet the estimate
    /// is the constant 1.
    pub fn ucb_utility(&self, phi: &[f64], side: Side, beta_u: f64) -> f64 {
        if !self.has_data() {
            return 1.0;
        }
        (self.point_estimate(phi, side) + beta_u * self.width(phi)).clamp(-1.0, 1.0)
    }
}

/// Optimistic Q-values for one step over the `(context, action)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub num_actions: usize,
    /// `Q[C][e]` at index `C * num_actions + e`.
    pub q: Vec<f64>,
    /// `V[C] = max_e Q[C][e]`.
    pub v: Vec<f64>,
    /// Greedy action per context, lowest index on ties.
    pub greedy: Vec<usize>,
}

impl QTable {
    fn from_q(q: Vec<f64>, num_actions: usize) -> Self {
        let num_contexts = q.len() / num_actions;
        let mut v = Vec::with_capacity(num_contexts);
        let mut greedy = Vec::with_capacity(num_contexts);
        for row in q.chunks(num_actions) {
            let mut best = 0;
            for (e, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = e;
                }
            }
            greedy.push(best);
            v.push(row[best]);
        }
        Self {
            num_actions,
            q,
            v,
            greedy,
        }
    }

    pub fn get(&self, context: usize, action: usize) -> f64 {
        self.q[context * self.num_actions + action]
    }
}

/// Result of one Q-estimation call.
#[derive(Debug, Clone)]
pub struct QFit {
    pub w_hat: DVector<f64>,
    pub table: QTable,
}

/// Least-squares value iteration statistics for the planner at one step.
///
/// Keeps `Lambda = lambda I + sum psi psi^T` over past visits and the visit
/// counts of every transition `(C, e) -> C'`, which is all the regression
/// needs since targets change every episode.
#[derive(Debug, Clone)]
pub struct PlannerEstimator {
    stats: RidgeStats,
    num_contexts: usize,
    num_actions: usize,
    transitions: Vec<u32>,
}

impl PlannerEstimator {
    pub fn new(d: usize, num_contexts: usize, num_actions: usize, lambda: f64) -> Self {
        Self {
            stats: RidgeStats::new(d, lambda),
            num_contexts,
            num_actions,
            transitions: vec![0; num_contexts * num_actions * num_contexts],
        }
    }

    pub fn stats(&self) -> &RidgeStats {
        &self.stats
    }

    pub fn episodes(&self) -> usize {
        self.stats.count()
    }

    /// Records the transition `(context, action) -> next` whose feature is `psi`.
    pub fn record(
        &mut self,
        context: usize,
        action: usize,
        next: usize,
        psi: &[f64],
    ) -> Result<()> {
        if context >= self.num_contexts || action >= self.num_actions || next >= self.num_contexts {
            return Err(Error::invalid("transition index out of range"));
        }
        if psi.len() != self.stats.dim() {
            return Err(Error::invalid("psi has the wrong dimension"));
        }
        self.stats.add(psi);
        self.transitions[(context * self.num_actions + action) * self.num_contexts + next] += 1;
        Ok(())
    }

    /// Regresses `v_next[C']` on `psi(C, e)` over the recorded transitions and
    /// fills `Q[C][e] = clip(r_bar[C][e] + psi^T w + beta_v ||psi||_{Lambda^{-1}}, 0, clip_hi)`.
    ///
    /// `psi` is indexed like `r_bar`: `C * num_actions + e`.
    pub fn fit(
        &self,
        psi: &[Vec<f64>],
        r_bar: &[f64],
        v_next: &[f64],
        beta_v: f64,
        clip_hi: f64,
    ) -> Result<QFit> {
        let cells = self.num_contexts * self.num_actions;
        if psi.len() != cells || r_bar.len() != cells || v_next.len() != self.num_contexts {
            return Err(Error::invalid("grid tables do not match the estimator"));
        }
        let d = self.stats.dim();
        let mut rhs = DVector::zeros(d);
        for (cell, psi_cell) in psi.iter().enumerate() {
            let counts =
                &self.transitions[cell * self.num_contexts..(cell + 1) * self.num_contexts];
            let target: f64 = counts.iter().zip(v_next).map(|(&n, &v)| n as f64 * v).sum();
            if target != 0.0 {
                for (k, x) in psi_cell.iter().enumerate() {
                    rhs[k] += x * target;
                }
            }
        }
        let w_hat = self.stats.solve(&rhs);
        let q = psi
            .iter()
            .zip(r_bar)
            .map(|(p, &r)| {
                let mean: f64 = p.iter().zip(w_hat.iter()).map(|(a, b)| a * b).sum();
                (r + mean + beta_v * self.stats.width(p)).clamp(0.0, clip_hi)
            })
            .collect();
        Ok(QFit {
            w_hat,
            table: QTable::from_q(q, self.num_actions),
        })
    }
}
