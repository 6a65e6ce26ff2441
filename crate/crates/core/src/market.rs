//! Ground-truth Markov matching market and its simulator.
//!
//! Contexts `C` and planner actions `e` are finite sets. Each `(C, e)` has a
//! feature `psi(C, e)` on the probability simplex, each pair of pool agents
//! `(i, j)` a feature `phi(i, j)` with norm at most one. Utilities at step `h`
//! are `<Phi, theta_h>` and `<Phi, gamma_h>` with `Phi = vec(psi phi^T)`, and
//! the context kernel is `P_h(C' | C, e) = <psi(C, e), mu_h(C')>` where the
//! anchor rows of `mu_h` are distributions over contexts.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::matching::{max_weight_value, WeightMatrix};

const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Agents in `I`, utilities `u`.
    First,
    /// Agents in `J`, utilities `v`.
    Second,
}

/// Row-major vectorization of the outer product `psi phi^T`.
pub fn pair_feature(psi: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
    if psi.len() != phi.len() {
        return Err(Error::invalid(format!(
            "feature dimensions differ: psi has {}, phi has {}",
            psi.len(),
            phi.len()
        )));
    }
    let mut out = Vec::with_capacity(psi.len() * phi.len());
    for a in psi {
        out.extend(phi.iter().map(|b| a * b));
    }
    Ok(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Known features of contexts/actions and of agent pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub d: usize,
    pub num_actions: usize,
    pub second_pool: usize,
    /// `psi(C, e)` at index `C * num_actions + e`.
    pub psi: Vec<Vec<f64>>,
    /// `phi(i, j)` at index `i * second_pool + j`.
    pub phi: Vec<Vec<f64>>,
}

impl FeatureMaps {
    pub fn psi(&self, context: usize, action: usize) -> &[f64] {
        &self.psi[context * self.num_actions + action]
    }

    pub fn phi(&self, i: usize, j: usize) -> &[f64] {
        &self.phi[i * self.second_pool + j]
    }

    pub fn pair_feature(&self, context: usize, action: usize, i: usize, j: usize) -> Vec<f64> {
        let psi = self.psi(context, action);
        let phi = self.phi(i, j);
        let mut out = Vec::with_capacity(self.d * self.d);
        for a in psi {
            out.extend(phi.iter().map(|b| a * b));
        }
        out
    }
}

/// Unknown utility parameters, one `d^2` vector per step and side.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityParams {
    pub theta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
}

/// Anchor distributions of the linear kernel: `anchors[h][r]` is the
/// distribution over next contexts attached to feature coordinate `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub anchors: Vec<Vec<Vec<f64>>>,
}

impl TransitionModel {
    /// `P_h(. | C, e)` for a context-action feature `psi`.
    pub fn distribution(&self, h: usize, psi: &[f64]) -> Vec<f64> {
        let anchors = &self.anchors[h];
        let num_contexts = anchors[0].len();
        let mut dist = vec![0.0; num_contexts];
        for (weight, row) in psi.iter().zip(anchors) {
            for (p, a) in dist.iter_mut().zip(row) {
                *p += weight * a;
            }
        }
        dist
    }
}

/// Participating agents at one step, as sorted pool ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roster {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

impl Roster {
    pub fn min_side(&self) -> usize {
        self.first.len().min(self.second.len())
    }
}

/// One noisy utility observation of a matched pair (pool ids).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub pair: (usize, usize),
    pub u: f64,
    pub v: f64,
}

/// Knobs for [`generate_market`].
#[derive(Debug, Clone, PartialEq)]
pub struct MarketConfig {
    pub d: usize,
    pub horizon: usize,
    pub num_contexts: usize,
    pub num_actions: usize,
    /// Pool sizes `|I|`, `|J|` of the agent universe.
    pub pool_sizes: [usize; 2],
    /// Roster sizes `|I_h|`, `|J_h|`, the same at every step.
    pub roster_sizes: [usize; 2],
    pub noise_sigma: f64,
    /// Largest absolute utility over the full grid after rescaling.
    pub utility_target_scale: f64,
}

impl MarketConfig {
    /// Square market whose rosters are the whole pool.
    pub fn square(
        d: usize,
        horizon: usize,
        num_contexts: usize,
        num_actions: usize,
        agents_per_side: usize,
        noise_sigma: f64,
    ) -> Self {
        Self {
            d,
            horizon,
            num_contexts,
            num_actions,
            pool_sizes: [agents_per_side; 2],
            roster_sizes: [agents_per_side; 2],
            noise_sigma,
            utility_target_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("horizon", self.horizon),
            ("num_contexts", self.num_contexts),
            ("num_actions", self.num_actions),
            (
                "roster size",
                self.roster_sizes[0].min(self.roster_sizes[1]),
            ),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be at least 1")));
        }
        if self.pool_sizes[0] < self.roster_sizes[0] || self.pool_sizes[1] < self.roster_sizes[1] {
            return Err(Error::invalid("pool smaller than roster"));
        }
        if !(0.0..=1.0).contains(&self.noise_sigma) {
            return Err(Error::invalid(format!(
                "noise_sigma {} outside [0, 1]",
                self.noise_sigma
            )));
        }
        if !(self.utility_target_scale > 0.0 && self.utility_target_scale <= 1.0) {
            return Err(Error::invalid(format!(
                "utility_target_scale {} outside (0, 1]",
                self.utility_target_scale
            )));
        }
        Ok(())
    }
}

/// The simulated ground truth. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketInstance {
    d: usize,
    horizon: usize,
    num_contexts: usize,
    num_actions: usize,
    pool_sizes: [usize; 2],
    rosters: Vec<Roster>,
    features: FeatureMaps,
    params: UtilityParams,
    transition: TransitionModel,
    initial_context: usize,
    noise_sigma: f64,
    welfare_bounds: Vec<f64>,
}

impl MarketInstance {
    /// Assembles an instance and checks every model invariant: feature norms,
    /// simplex features, stochastic anchors, parameter norms and utilities
    /// in `[-1, 1]` on the whole grid. The bounds `W_h` are computed here.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_contexts: usize,
        pool_sizes: [usize; 2],
        rosters: Vec<Roster>,
        features: FeatureMaps,
        params: UtilityParams,
        transition: TransitionModel,
        initial_context: usize,
        noise_sigma: f64,
    ) -> Result<Self> {
        let d = features.d;
        let horizon = rosters.len();
        let num_actions = features.num_actions;
        if d == 0 || horizon == 0 || num_contexts == 0 || num_actions == 0 {
            return Err(Error::invalid("empty market dimensions"));
        }
        if initial_context >= num_contexts {
            return Err(Error::invalid("initial context out of range"));
        }
        if !(0.0..=1.0).contains(&noise_sigma) {
            return Err(Error::invalid("noise_sigma outside [0, 1]"));
        }
        if features.psi.len() != num_contexts * num_actions
            || features.second_pool != pool_sizes[1]
            || features.phi.len() != pool_sizes[0] * pool_sizes[1]
        {
            return Err(Error::invalid("feature tables do not match the grid"));
        }
        for psi in &features.psi {
            let total: f64 = psi.iter().sum();
            if psi.len() != d || psi.iter().any(|&x| x < 0.0) || (total - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::invalid(format!("psi {psi:?} is not on the simplex")));
            }
        }
        for phi in &features.phi {
            if phi.len() != d || norm(phi) > 1.0 + SIMPLEX_TOL {
                return Err(Error::invalid(format!("phi {phi:?} has norm above one")));
            }
        }
        for roster in &rosters {
            let in_pool = roster.first.iter().all(|&i| i < pool_sizes[0])
                && roster.second.iter().all(|&j| j < pool_sizes[1]);
            if !in_pool || roster.first.is_empty() || roster.second.is_empty() {
                return Err(Error::invalid("roster outside the agent pool"));
            }
        }
        if params.theta.len() != horizon || params.gamma.len() != horizon {
            return Err(Error::invalid("utility parameters must cover every step"));
        }
        for p in params.theta.iter().chain(&params.gamma) {
            if p.len() != d * d || norm(p) > d as f64 + SIMPLEX_TOL {
                return Err(Error::invalid(
                    "utility parameter has wrong size or norm above d",
                ));
            }
        }
        if transition.anchors.len() != horizon {
            return Err(Error::invalid("transition anchors must cover every step"));
        }
        for anchors in &transition.anchors {
            if anchors.len() != d {
                return Err(Error::invalid("need one anchor row per feature coordinate"));
            }
            for row in anchors {
                let total: f64 = row.iter().sum();
                if row.len() != num_contexts
                    || row.iter().any(|&x| x < 0.0)
                    || (total - 1.0).abs() > SIMPLEX_TOL
                {
                    return Err(Error::invalid(format!(
                        "anchor row {row:?} is not a distribution"
                    )));
                }
            }
        }

        let mut market = Self {
            d,
            horizon,
            num_contexts,
            num_actions,
            pool_sizes,
            rosters,
            features,
            params,
            transition,
            initial_context,
            noise_sigma,
            welfare_bounds: Vec::new(),
        };
        for h in 0..horizon {
            let (lo, hi) = market.utility_range(h);
            if lo < -1.0 - SIMPLEX_TOL || hi > 1.0 + SIMPLEX_TOL {
                return Err(Error::invalid(format!(
                    "utilities at step {h} span [{lo}, {hi}], outside [-1, 1]"
                )));
            }
        }
        market.welfare_bounds = (0..horizon)
            .map(|h| {
                let mut best = 0.0f64;
                for c in 0..num_contexts {
                    for e in 0..num_actions {
                        let (u, v) = market.utility_matrices(h, c, e);
                        let weights = u.sum(&v).expect("same roster shape");
                        best = best.max(max_weight_value(&weights));
                    }
                }
                best
            })
            .collect();
        Ok(market)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn pool_sizes(&self) -> [usize; 2] {
        self.pool_sizes
    }

    pub fn roster(&self, h: usize) -> &Roster {
        &self.rosters[h]
    }

    pub fn features(&self) -> &FeatureMaps {
        &self.features
    }

    pub fn params(&self) -> &UtilityParams {
        &self.params
    }

    pub fn transition(&self) -> &TransitionModel {
        &self.transition
    }

    pub fn initial_context(&self) -> usize {
        self.initial_context
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// `W_h`: the largest max-weight matching value over all `(C, e)`.
    pub fn welfare_bound(&self, h: usize) -> f64 {
        self.welfare_bounds[h]
    }

    pub fn welfare_bounds(&self) -> &[f64] {
        &self.welfare_bounds
    }

    /// `sum_{l >= h} W_l`, the range of optimistic Q-values at step `h`.
    pub fn welfare_to_go(&self, h: usize) -> f64 {
        self.welfare_bounds[h.min(self.horizon)..].iter().sum()
    }

    /// `max_h min(|I_h|, |J_h|)`.
    pub fn max_min_roster(&self) -> usize {
        self.rosters.iter().map(Roster::min_side).max().unwrap_or(0)
    }

    /// Ground-truth utility of pool agents `(i, j)` at `(h, C, e)`.
    pub fn true_utility(
        &self,
        h: usize,
        context: usize,
        action: usize,
        i: usize,
        j: usize,
        side: Side,
    ) -> Result<f64> {
        if h >= self.horizon
            || context >= self.num_contexts
            || action >= self.num_actions
            || i >= self.pool_sizes[0]
            || j >= self.pool_sizes[1]
        {
            return Err(Error::invalid(format!(
                "index out of range: h={h} C={context} e={action} i={i} j={j}"
            )));
        }
        Ok(self.utility_unchecked(h, context, action, i, j, side))
    }

    fn utility_unchecked(
        &self,
        h: usize,
        c: usize,
        e: usize,
        i: usize,
        j: usize,
        side: Side,
    ) -> f64 {
        let param = match side {
            Side::First => &self.params.theta[h],
            Side::Second => &self.params.gamma[h],
        };
        // <vec(psi phi^T), p> = psi^T P phi with P the d x d reshaping of p.
        let psi = self.features.psi(c, e);
        let phi = self.features.phi(i, j);
        let d = self.d;
        let mut total = 0.0;
        for (a, pa) in psi.iter().enumerate() {
            if *pa != 0.0 {
                total += pa * dot(&param[a * d..(a + 1) * d], phi);
            }
        }
        total
    }

    /// True utility matrices `(u, v)` over the roster at step `h`, indexed by
    /// roster position.
    pub fn utility_matrices(
        &self,
        h: usize,
        context: usize,
        action: usize,
    ) -> (WeightMatrix, WeightMatrix) {
        let roster = &self.rosters[h];
        let (n, m) = (roster.first.len(), roster.second.len());
        let u = WeightMatrix::from_fn(n, m, |a, b| {
            self.utility_unchecked(
                h,
                context,
                action,
                roster.first[a],
                roster.second[b],
                Side::First,
            )
        });
        let v = WeightMatrix::from_fn(n, m, |a, b| {
            self.utility_unchecked(
                h,
                context,
                action,
                roster.first[a],
                roster.second[b],
                Side::Second,
            )
        });
        (u, v)
    }

    fn utility_range(&self, h: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in 0..self.num_contexts {
            for e in 0..self.num_actions {
                for i in 0..self.pool_sizes[0] {
                    for j in 0..self.pool_sizes[1] {
                        for side in [Side::First, Side::Second] {
                            let x = self.utility_unchecked(h, c, e, i, j, side);
                            lo = lo.min(x);
                            hi = hi.max(x);
                        }
                    }
                }
            }
        }
        (lo, hi)
    }

    /// `P_h(. | C, e)`, checked to be a distribution.
    pub fn transition_distribution(
        &self,
        h: usize,
        context: usize,
        action: usize,
    ) -> Result<Vec<f64>> {
        if h >= self.horizon || context >= self.num_contexts || action >= self.num_actions {
            return Err(Error::invalid(format!(
                "index out of range: h={h} C={context} e={action}"
            )));
        }
        let dist = self
            .transition
            .distribution(h, self.features.psi(context, action));
        let total: f64 = dist.iter().sum();
        if dist.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Invariant(format!(
                "kernel row at h={h} C={context} e={action} sums to {total}"
            )));
        }
        Ok(dist)
    }

    /// Draws the next context from `P_h(. | C, e)`.
    pub fn sample_transition<R: Rng + ?Sized>(
        &self,
        h: usize,
        context: usize,
        action: usize,
        rng: &mut R,
    ) -> Result<usize> {
        let dist = self.transition_distribution(h, context, action)?;
        let draw: f64 = rng.random();
        let mut acc = 0.0;
        for (c, p) in dist.iter().enumerate() {
            acc += p;
            if draw < acc {
                return Ok(c);
            }
        }
        // Rounding left a sliver above the cumulative sum; take the last
        // context with positive mass.
        Ok(dist.iter().rposition(|&p| p > 0.0).unwrap_or(0))
    }

    /// Noisy utilities of every matched pair (pool ids). Each side gets an
    /// independent Gaussian draw of scale `noise_sigma`.
    pub fn observe_utilities<R: Rng + ?Sized>(
        &self,
        h: usize,
        context: usize,
        action: usize,
        pairs: &[(usize, usize)],
        rng: &mut R,
    ) -> Result<Vec<Observation>> {
        let roster = self
            .rosters
            .get(h)
            .ok_or_else(|| Error::invalid(format!("step {h} out of range")))?;
        pairs
            .iter()
            .map(|&(i, j)| {
                if !roster.first.contains(&i) || !roster.second.contains(&j) {
                    return Err(Error::invalid(format!(
                        "pair ({i}, {j}) is not in the roster of step {h}"
                    )));
                }
                let u = self.true_utility(h, context, action, i, j, Side::First)?;
                let v = self.true_utility(h, context, action, i, j, Side::Second)?;
                let nu: f64 = rng.sample(StandardNormal);
                let nv: f64 = rng.sample(StandardNormal);
                Ok(Observation {
                    pair: (i, j),
                    u: u + self.noise_sigma * nu,
                    v: v + self.noise_sigma * nv,
                })
            })
            .collect()
    }
}

fn dirichlet_ones<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|x| *x /= total);
    } else {
        draws = vec![1.0 / len as f64; len];
    }
    // Put the rounding residue on the largest entry so the sum is exact to
    // within one ulp.
    let residue = 1.0 - draws.iter().sum::<f64>();
    if let Some(max) = draws.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max += residue;
    }
    draws
}

/// Samples a market satisfying all model assumptions. Deterministic in `seed`.
///
/// Context features and anchor rows are uniform Dirichlet draws, pair
/// features are Gaussian directions with radius in `[0.5, 1]`, and utility
/// parameters are Gaussian vectors rescaled so that the largest absolute
/// utility over the full grid equals `utility_target_scale` (shrunk further
/// if that would break the norm bound `d`).
pub fn generate_market(config: &MarketConfig, seed: u64) -> Result<MarketInstance> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.d;
    let [pool_i, pool_j] = config.pool_sizes;

    let psi: Vec<Vec<f64>> = (0..config.num_contexts * config.num_actions)
        .map(|_| dirichlet_ones(d, &mut rng))
        .collect();
    let phi: Vec<Vec<f64>> = (0..pool_i * pool_j)
        .map(|_| {
            let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let radius = rng.random_range(0.5..=1.0);
            let n = norm(&x);
            if n > 0.0 {
                x.iter_mut().for_each(|c| *c *= radius / n);
            }
            x
        })
        .collect();
    let features = FeatureMaps {
        d,
        num_actions: config.num_actions,
        second_pool: pool_j,
        psi,
        phi,
    };

    let anchors = (0..config.horizon)
        .map(|_| {
            (0..d)
                .map(|_| dirichlet_ones(config.num_contexts, &mut rng))
                .collect()
        })
        .collect();

    let rosters = (0..config.horizon)
        .map(|_| {
            let mut first = index::sample(&mut rng, pool_i, config.roster_sizes[0]).into_vec();
            let mut second = index::sample(&mut rng, pool_j, config.roster_sizes[1]).into_vec();
            first.sort_unstable();
            second.sort_unstable();
            Roster { first, second }
        })
        .collect();

    let draw_param = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
        let mut largest = 0.0f64;
        for psi in &features.psi {
            for phi in &features.phi {
                let mut value = 0.0;
                for (a, pa) in psi.iter().enumerate() {
                    value += pa * dot(&raw[a * d..(a + 1) * d], phi);
                }
                largest = largest.max(value.abs());
            }
        }
        if largest == 0.0 {
            return vec![0.0; d * d];
        }
        let mut scale = config.utility_target_scale / largest;
        let scaled_norm = scale * norm(&raw);
        if scaled_norm > d as f64 {
            scale *= d as f64 / scaled_norm;
        }
        // Keep clear of the [-1, 1] edge after rounding.
        scale *= 1.0 - 1e-15;
        raw.iter().map(|x| x * scale).collect()
    };
    let mut theta = Vec::with_capacity(config.horizon);
    let mut gamma = Vec::with_capacity(config.horizon);
    for _ in 0..config.horizon {
        theta.push(draw_param(&mut rng));
        gamma.push(draw_param(&mut rng));
    }

    MarketInstance::new(
        config.num_contexts,
        config.pool_sizes,
        rosters,
        features,
        UtilityParams { theta, gamma },
        TransitionModel { anchors },
        0,
        config.noise_sigma,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_context_market(psi: Vec<f64>) -> MarketInstance {
        MarketInstance::new(
            2,
            [1, 1],
            vec![Roster {
                first: vec![0],
                second: vec![0],
            }],
            FeatureMaps {
                d: 2,
                num_actions: 1,
                second_pool: 1,
                psi: vec![psi.clone(), psi],
                phi: vec![vec![1.0, 0.0]],
            },
            UtilityParams {
                theta: vec![vec![0.5, 0.0, 0.0, 0.0]],
                gamma: vec![vec![0.0; 4]],
            },
            TransitionModel {
                anchors: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            },
            0,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn pair_feature_examples() {
        assert_eq!(
            pair_feature(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            vec![0.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(
            pair_feature(&[0.0, 0.0], &[1.0, 0.0]).unwrap(),
            vec![0.0; 4]
        );
        let x = pair_feature(&[0.5, 0.5], &[0.6, 0.8]).unwrap();
        for (a, b) in x.iter().zip([0.3, 0.4, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(pair_feature(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn scalar_utility() {
        let market = MarketInstance::new(
            1,
            [1, 1],
            vec![Roster {
                first: vec![0],
                second: vec![0],
            }],
            FeatureMaps {
                d: 1,
                num_actions: 1,
                second_pool: 1,
                psi: vec![vec![1.0]],
                phi: vec![vec![1.0]],
            },
            UtilityParams {
                theta: vec![vec![0.7]],
                gamma: vec![vec![0.0]],
            },
            TransitionModel {
                anchors: vec![vec![vec![1.0]]],
            },
            0,
            0.0,
        )
        .unwrap();
        assert_eq!(
            market.true_utility(0, 0, 0, 0, 0, Side::First).unwrap(),
            0.7
        );
        assert_eq!(
            market.true_utility(0, 0, 0, 0, 0, Side::Second).unwrap(),
            0.0
        );
        assert!(market.true_utility(0, 1, 0, 0, 0, Side::First).is_err());
        assert!((market.welfare_bound(0) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn degenerate_transition() {
        let market = two_context_market(vec![1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(market.sample_transition(0, 0, 0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn transition_frequency_matches_kernel() {
        let market = two_context_market(vec![0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 100_000;
        let zeros = (0..draws)
            .filter(|_| market.sample_transition(0, 0, 0, &mut rng).unwrap() == 0)
            .count();
        let freq = zeros as f64 / draws as f64;
        let sd = (0.25 / draws as f64).sqrt();
        assert!((freq - 0.5).abs() <= 3.0 * sd, "frequency {freq}");
    }

    #[test]
    fn rejects_invalid_features() {
        let bad = MarketInstance::new(
            1,
            [1, 1],
            vec![Roster {
                first: vec![0],
                second: vec![0],
            }],
            FeatureMaps {
                d: 2,
                num_actions: 1,
                second_pool: 1,
                psi: vec![vec![0.7, 0.7]],
                phi: vec![vec![1.0, 0.0]],
            },
            UtilityParams {
                theta: vec![vec![0.0; 4]],
                gamma: vec![vec![0.0; 4]],
            },
            TransitionModel {
                anchors: vec![vec![vec![1.0], vec![1.0]]],
            },
            0,
            0.0,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn observations() {
        let market = two_context_market(vec![1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs = market
            .observe_utilities(0, 0, 0, &[(0, 0)], &mut rng)
            .unwrap();
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].u, 0.5);
        assert_eq!(obs[0].v, 0.0);
        assert!(market
            .observe_utilities(0, 0, 0, &[], &mut rng)
            .unwrap()
            .is_empty());
        assert!(market
            .observe_utilities(0, 0, 0, &[(1, 0)], &mut rng)
            .is_err());
    }

    #[test]
    fn generation_rejects_bad_configs() {
        let mut cfg = MarketConfig::square(0, 2, 3, 2, 3, 0.1);
        assert!(generate_market(&cfg, 0).is_err());
        cfg.d = 2;
        cfg.noise_sigma = 1.5;
        assert!(generate_market(&cfg, 0).is_err());
        cfg.noise_sigma = 0.1;
        cfg.pool_sizes = [2, 3];
        assert!(generate_market(&cfg, 0).is_err());
    }

    #[test]
    fn single_context_kernel_is_a_point_mass() {
        let market = generate_market(&MarketConfig::square(3, 2, 1, 1, 2, 0.1), 5).unwrap();
        for h in 0..2 {
            assert_eq!(market.transition_distribution(h, 0, 0).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn utility_grid_is_tight() {
        let market = generate_market(&MarketConfig::square(2, 3, 3, 2, 3, 0.1), 11).unwrap();
        for h in 0..3 {
            let (lo, hi) = market.utility_range(h);
            assert!(lo >= -1.0 && hi <= 1.0);
            assert!(lo.abs().max(hi.abs()) > 0.99);
        }
    }
}
