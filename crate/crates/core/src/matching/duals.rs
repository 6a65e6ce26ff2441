//! Dual prices of the assignment LP and the transfers they induce.

use super::{max_weight_matching, MarketOutcome, Matching, Transfers, WeightMatrix, EXACT_TOL};
use crate::error::{Error, Result};

/// Nonnegative prices on both sides of the market.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPrices {
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
}

impl DualPrices {
    pub fn total(&self) -> f64 {
        self.rows.iter().chain(&self.cols).sum()
    }
}

/// Builds an optimal dual solution for `matching`, which must be a
/// max-weight matching of `weights`.
///
/// Complementary slackness pins every row price to `w(i, X(i)) - p(X(i))` and
/// every unmatched price to zero, so only the prices of matched columns are
/// free. The remaining constraints are difference constraints between those
/// prices, solved by Bellman-Ford from a zero-price source; the result is the
/// column-side-optimal dual. A negative cycle means no dual with these
/// slackness conditions exists, i.e. the matching is not optimal.
pub fn dual_prices(weights: &WeightMatrix, matching: &Matching) -> Result<DualPrices> {
    let (n, m) = (weights.rows(), weights.cols());
    matching.check_fits(n, m)?;
    let row_partner: Vec<Option<usize>> = (0..n).map(|i| matching.partner_of_row(i)).collect();
    let col_matched: Vec<bool> = (0..m)
        .map(|j| matching.partner_of_col(j).is_some())
        .collect();

    // Node m is the source with price fixed at zero; node j < m is column j.
    let source = m;
    // Edge (from, to, c) encodes price[to] - price[from] <= c.
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for (i, partner) in row_partner.iter().enumerate() {
        for (j, &matched) in col_matched.iter().enumerate() {
            let w = weights.get(i, j);
            match (*partner, matched) {
                (Some(jp), _) if jp == j => {}
                (Some(jp), true) => edges.push((j, jp, weights.get(i, jp) - w)),
                (Some(jp), false) => edges.push((source, jp, weights.get(i, jp) - w)),
                (None, true) => edges.push((j, source, -w)),
                (None, false) => {
                    if w > EXACT_TOL {
                        return Err(Error::Inconsistent(format!(
                            "unmatched pair ({i}, {j}) has positive weight {w}"
                        )));
                    }
                }
            }
        }
    }
    for &(i, j) in matching.pairs() {
        // 0 <= p(j) <= w(i, j) keeps both prices of the pair nonnegative.
        edges.push((j, source, 0.0));
        edges.push((source, j, weights.get(i, j)));
    }

    let mut dist = vec![f64::INFINITY; m + 1];
    dist[source] = 0.0;
    for _ in 0..=m {
        let mut changed = false;
        for &(a, b, c) in &edges {
            if dist[a] + c < dist[b] {
                dist[b] = dist[a] + c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if let Some(&(a, b, c)) = edges
        .iter()
        .find(|&&(a, b, c)| dist[a] + c < dist[b] - EXACT_TOL)
    {
        return Err(Error::Inconsistent(format!(
            "no dual solution: constraint between nodes {a} and {b} (slack {}) lies on a negative cycle; the matching is not max-weight",
            dist[a] + c - dist[b]
        )));
    }

    let mut cols = vec![0.0; m];
    let mut rows = vec![0.0; n];
    for &(i, j) in matching.pairs() {
        let pj = (dist[j] - dist[source]).max(0.0);
        cols[j] = pj;
        rows[i] = (weights.get(i, j) - pj).max(0.0);
    }
    let prices = DualPrices { rows, cols };
    verify_dual(weights, matching, &prices)?;
    Ok(prices)
}

fn verify_dual(weights: &WeightMatrix, matching: &Matching, prices: &DualPrices) -> Result<()> {
    for i in 0..weights.rows() {
        for j in 0..weights.cols() {
            let slack = prices.rows[i] + prices.cols[j] - weights.get(i, j);
            if slack < -EXACT_TOL {
                return Err(Error::Inconsistent(format!(
                    "dual infeasible at ({i}, {j}) by {}",
                    -slack
                )));
            }
        }
    }
    for &(i, j) in matching.pairs() {
        let gap = prices.rows[i] + prices.cols[j] - weights.get(i, j);
        if gap.abs() > EXACT_TOL {
            return Err(Error::Inconsistent(format!(
                "complementary slackness fails on ({i}, {j}) by {gap}"
            )));
        }
    }
    Ok(())
}

/// Transfers implementing the dual: `tau(i) = p(i) - u(i, X(i))` and
/// `tau(j) = p(j) - v(X(j), j)`; unmatched agents get zero.
pub fn transfers_from_prices(
    prices: &DualPrices,
    u: &WeightMatrix,
    v: &WeightMatrix,
    matching: &Matching,
) -> Transfers {
    let mut transfers = Transfers::zeros(u.rows(), u.cols());
    for &(i, j) in matching.pairs() {
        transfers.rows[i] = prices.rows[i] - u.get(i, j);
        transfers.cols[j] = prices.cols[j] - v.get(i, j);
    }
    transfers
}

/// The optimal matching oracle: max-weight matching on `u + v`, its dual
/// prices and the transfers they induce. Returns the outcome and its welfare.
pub fn optimal_outcome(u: &WeightMatrix, v: &WeightMatrix) -> Result<(MarketOutcome, f64)> {
    let weights = u.sum(v)?;
    let (matching, value) = max_weight_matching(&weights)?;
    let prices = dual_prices(&weights, &matching)?;
    let transfers = transfers_from_prices(&prices, u, v, &matching);
    Ok((
        MarketOutcome {
            matching,
            transfers,
        },
        value,
    ))
}
