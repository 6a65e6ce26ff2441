//! Exact dynamic-programming oracles over the known market, and the regret
//! ledger.
//!
//! The simulator knows the model, so pseudo-values, true values and expected
//! Subset Instability of a policy are computed by backward induction rather
//! than by rollouts.

use std::ops::RangeInclusive;

use crate::error::{Error, Result};
use crate::market::MarketInstance;
use crate::matching::{
    max_weight_value, net_utilities, MarketOutcome, SubsetValueTable, WeightMatrix, SI_CAP,
};

/// Tolerance for the Bellman identities of the exact tables.
pub const BELLMAN_TOL: f64 = 1e-9;

/// One episode's policy: the planner's action and the implemented outcome
/// (in roster positions) for every `(h, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    pub actions: Vec<Vec<usize>>,
    pub outcomes: Vec<Vec<MarketOutcome>>,
}

/// True pseudo-rewards `r_bar_h(C, e)`: the max-weight matching value under
/// the true utilities, indexed `[h][C * num_actions + e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoRewards {
    pub num_actions: usize,
    pub values: Vec<Vec<f64>>,
}

impl PseudoRewards {
    pub fn get(&self, h: usize, context: usize, action: usize) -> f64 {
        self.values[h][context * self.num_actions + action]
    }
}

pub fn exact_pseudo_rewards(market: &MarketInstance) -> PseudoRewards {
    let na = market.num_actions();
    let values = (0..market.horizon())
        .map(|h| {
            (0..market.num_contexts() * na)
                .map(|cell| {
                    let (u, v) = market.utility_matrices(h, cell / na, cell % na);
                    max_weight_value(&u.sum(&v).expect("same roster shape"))
                })
                .collect()
        })
        .collect();
    PseudoRewards {
        num_actions: na,
        values,
    }
}

/// True utilities of one `(h, C, e)` cell and, when the roster is small
/// enough, the coalition values needed for Subset Instability.
#[derive(Debug, Clone)]
struct CellTruth {
    u: WeightMatrix,
    v: WeightMatrix,
    coalitions: Option<SubsetValueTable>,
}

/// Optimal pseudo-values. `v_star[h][C]` has `H + 1` rows, the last one zero.
#[derive(Debug, Clone)]
pub struct ExactValues {
    pub r_bar: PseudoRewards,
    pub v_star: Vec<Vec<f64>>,
    /// An optimal action per `(h, C)`, lowest index on ties.
    pub optimal_actions: Vec<Vec<usize>>,
    /// `V_bar_1^*(s_1)`, which also equals the optimal true value.
    pub initial_value: f64,
    /// `P_h(. | C, e)` indexed `[h][cell]`.
    kernel: Vec<Vec<Vec<f64>>>,
    cells: Vec<Vec<CellTruth>>,
}

impl ExactValues {
    pub fn kernel(&self, h: usize, context: usize, action: usize) -> &[f64] {
        &self.kernel[h][context * self.r_bar.num_actions + action]
    }

    /// Largest violation of `v[h][C] = max_e (r_bar + P v[h+1])` over all
    /// steps and contexts.
    pub fn bellman_residual(&self) -> f64 {
        let na = self.r_bar.num_actions;
        let mut worst = 0.0f64;
        for h in 0..self.r_bar.values.len() {
            for (c, &value) in self.v_star[h].iter().enumerate() {
                let best = (0..na)
                    .map(|e| {
                        self.r_bar.get(h, c, e)
                            + expectation(self.kernel(h, c, e), &self.v_star[h + 1])
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                worst = worst.max((best - value).abs());
            }
        }
        worst
    }

    /// True utility matrices at `(h, C, e)` over roster positions.
    pub fn utilities(
        &self,
        h: usize,
        context: usize,
        action: usize,
    ) -> (&WeightMatrix, &WeightMatrix) {
        let cell = &self.cells[h][context * self.r_bar.num_actions + action];
        (&cell.u, &cell.v)
    }

    /// Subset Instability of `outcome` at `(h, C, e)` under the true utilities.
    pub fn subset_instability(
        &self,
        h: usize,
        context: usize,
        action: usize,
        outcome: &MarketOutcome,
    ) -> Result<f64> {
        let cell = &self.cells[h][context * self.r_bar.num_actions + action];
        let table = cell.coalitions.as_ref().ok_or(Error::TooLarge {
            rows: cell.u.rows(),
            cols: cell.u.cols(),
            cap: SI_CAP,
        })?;
        let (net_rows, net_cols) = net_utilities(outcome, &cell.u, &cell.v);
        Ok(table.instability(&net_rows, &net_cols))
    }
}

fn expectation(dist: &[f64], values: &[f64]) -> f64 {
    dist.iter().zip(values).map(|(p, v)| p * v).sum()
}

/// Backward induction for the optimal pseudo-value.
pub fn optimal_value(market: &MarketInstance, r_bar: PseudoRewards) -> Result<ExactValues> {
    let horizon = market.horizon();
    let nc = market.num_contexts();
    let na = market.num_actions();
    if r_bar.values.len() != horizon || r_bar.values.iter().any(|row| row.len() != nc * na) {
        return Err(Error::invalid(
            "pseudo-reward table does not match the market",
        ));
    }
    let kernel: Vec<Vec<Vec<f64>>> = (0..horizon)
        .map(|h| {
            (0..nc * na)
                .map(|cell| market.transition_distribution(h, cell / na, cell % na))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let cells = (0..horizon)
        .map(|h| {
            (0..nc * na)
                .map(|cell| {
                    let (u, v) = market.utility_matrices(h, cell / na, cell % na);
                    let coalitions = SubsetValueTable::new(&u.sum(&v)?).ok();
                    Ok(CellTruth { u, v, coalitions })
                })
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    let mut v_star = vec![vec![0.0; nc]; horizon + 1];
    let mut optimal_actions = vec![vec![0; nc]; horizon];
    for h in (0..horizon).rev() {
        for c in 0..nc {
            let mut best = f64::NEG_INFINITY;
            for e in 0..na {
                let q = r_bar.get(h, c, e) + expectation(&kernel[h][c * na + e], &v_star[h + 1]);
                if q > best {
                    best = q;
                    optimal_actions[h][c] = e;
                }
            }
            v_star[h][c] = best;
        }
    }
    let initial_value = v_star[0][market.initial_context()];
    Ok(ExactValues {
        r_bar,
        v_star,
        optimal_actions,
        initial_value,
        kernel,
        cells,
    })
}

/// Values of one policy from the initial context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyValues {
    /// Pseudo-value: expected sum of true pseudo-rewards along the policy's
    /// planner actions.
    pub pseudo_value: f64,
    /// Expected true welfare of the matchings the policy implements.
    pub true_value: f64,
    /// Expected sum of Subset Instability under the true utilities.
    pub expected_si: Option<f64>,
}

/// Three simultaneous backward inductions over the context chain induced by
/// the policy's actions.
pub fn evaluate_policy(
    market: &MarketInstance,
    exact: &ExactValues,
    policy: &PolicySnapshot,
    with_si: bool,
) -> Result<PolicyValues> {
    let horizon = market.horizon();
    let nc = market.num_contexts();
    if policy.actions.len() != horizon
        || policy.outcomes.len() != horizon
        || policy.actions.iter().any(|a| a.len() != nc)
        || policy.outcomes.iter().any(|o| o.len() != nc)
    {
        return Err(Error::invalid("policy does not cover every (h, C)"));
    }
    let mut pseudo = vec![0.0; nc];
    let mut truth = vec![0.0; nc];
    let mut si = vec![0.0; nc];
    for h in (0..horizon).rev() {
        let mut next_pseudo = vec![0.0; nc];
        let mut next_truth = vec![0.0; nc];
        let mut next_si = vec![0.0; nc];
        for c in 0..nc {
            let e = policy.actions[h][c];
            if e >= market.num_actions() {
                return Err(Error::invalid(format!("action {e} out of range")));
            }
            let outcome = &policy.outcomes[h][c];
            let (u, v) = exact.utilities(h, c, e);
            outcome.matching.check_fits(u.rows(), u.cols())?;
            let welfare: f64 = outcome
                .matching
                .pairs()
                .iter()
                .map(|&(a, b)| u.get(a, b) + v.get(a, b))
                .sum();
            let dist = exact.kernel(h, c, e);
            next_pseudo[c] = exact.r_bar.get(h, c, e) + expectation(dist, &pseudo);
            next_truth[c] = welfare + expectation(dist, &truth);
            if with_si {
                next_si[c] = exact.subset_instability(h, c, e, outcome)? + expectation(dist, &si);
            }
        }
        pseudo = next_pseudo;
        truth = next_truth;
        si = next_si;
    }
    let s1 = market.initial_context();
    Ok(PolicyValues {
        pseudo_value: pseudo[s1],
        true_value: truth[s1],
        expected_si: with_si.then(|| si[s1]),
    })
}

/// Per-episode quantities entering the ledger. Missing SI columns are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeArtifacts {
    pub episode: usize,
    pub realized_welfare: f64,
    pub pseudo_welfare: f64,
    pub planner_gap: f64,
    pub agents_gap_expected: f64,
    pub agents_gap_realized: f64,
    pub total_gap: f64,
    pub bonus_sum: f64,
}

impl EpisodeArtifacts {
    fn values(&self) -> [f64; 7] {
        [
            self.realized_welfare,
            self.pseudo_welfare,
            self.planner_gap,
            self.agents_gap_expected,
            self.agents_gap_realized,
            self.total_gap,
            self.bonus_sum,
        ]
    }
}

/// A ledger row: the episode's values and their running sums, in the order
/// of [`LEDGER_VALUE_COLUMNS`].
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    pub episode: usize,
    pub values: [f64; 7],
    pub cumulative: [f64; 7],
}

pub const LEDGER_VALUE_COLUMNS: [&str; 7] = [
    "realized_welfare",
    "pseudo_welfare",
    "planner_gap",
    "agents_gap_expected",
    "agents_gap_realized",
    "total_gap",
    "bonus_sum",
];

/// Column index of `total_gap` in [`LedgerRow::values`].
pub const TOTAL_GAP: usize = 5;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretLedger {
    rows: Vec<LedgerRow>,
}

impl RegretLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[LedgerRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends episode `len() + 1`; any other index is rejected.
    pub fn append(&mut self, artifacts: &EpisodeArtifacts) -> Result<()> {
        let expected = self.rows.len() + 1;
        if artifacts.episode != expected {
            return Err(Error::invalid(format!(
                "ledger expects episode {expected}, got {}",
                artifacts.episode
            )));
        }
        let values = artifacts.values();
        let mut cumulative = values;
        if let Some(last) = self.rows.last() {
            for (c, prev) in cumulative.iter_mut().zip(last.cumulative) {
                *c += prev;
            }
        }
        self.rows.push(LedgerRow {
            episode: expected,
            values,
            cumulative,
        });
        Ok(())
    }

    /// Final running sum of one column.
    pub fn total(&self, column: usize) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cumulative[column])
    }

    /// Mean per-episode value of `column` over a 1-based inclusive range.
    pub fn mean(&self, column: usize, episodes: RangeInclusive<usize>) -> f64 {
        let (lo, hi) = (*episodes.start(), *episodes.end());
        let slice = &self.rows[lo - 1..hi];
        slice.iter().map(|r| r.values[column]).sum::<f64>() / slice.len() as f64
    }
}

/// Least-squares slope of `ln(cumulative total_gap)` against `ln(k)` over a
/// 1-based inclusive window of episodes.
pub fn regret_slope(ledger: &RegretLedger, window: RangeInclusive<usize>) -> Result<f64> {
    let (lo, hi) = (*window.start(), *window.end());
    if lo == 0 || hi > ledger.len() || hi < lo || hi - lo + 1 < 10 {
        return Err(Error::invalid(format!(
            "slope window {lo}..={hi} needs at least 10 episodes within 1..={}",
            ledger.len()
        )));
    }
    let mut points = Vec::with_capacity(hi - lo + 1);
    for row in &ledger.rows[lo - 1..hi] {
        let cum = row.cumulative[TOTAL_GAP];
        if cum.is_nan() || cum <= 0.0 {
            return Err(Error::invalid(format!(
                "cumulative regret {cum} at episode {} has no logarithm",
                row.episode
            )));
        }
        points.push(((row.episode as f64).ln(), cum.ln()));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    Ok(sxy / sxx)
}
