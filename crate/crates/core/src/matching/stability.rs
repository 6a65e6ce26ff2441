//! Stability of market outcomes and Subset Instability.

use super::{MarketOutcome, Matching, WeightMatrix};
use crate::error::{Error, Result};

/// Largest market (per side) for which Subset Instability is computed.
pub const SI_CAP: usize = 8;

/// Net utility of every agent: match utility plus transfer. Unmatched
/// agents get their transfer alone.
pub fn net_utilities(
    outcome: &MarketOutcome,
    u: &WeightMatrix,
    v: &WeightMatrix,
) -> (Vec<f64>, Vec<f64>) {
    let mut rows = outcome.transfers.rows.clone();
    let mut cols = outcome.transfers.cols.clone();
    for &(i, j) in outcome.matching.pairs() {
        rows[i] += u.get(i, j);
        cols[j] += v.get(i, j);
    }
    (rows, cols)
}

/// Individual rationality plus absence of blocking pairs, both up to `eps`.
pub fn is_stable(outcome: &MarketOutcome, u: &WeightMatrix, v: &WeightMatrix, eps: f64) -> bool {
    if u.check_same_shape(v).is_err()
        || outcome.transfers.rows.len() != u.rows()
        || outcome.transfers.cols.len() != u.cols()
        || outcome.matching.check_fits(u.rows(), u.cols()).is_err()
    {
        return false;
    }
    let (net_rows, net_cols) = net_utilities(outcome, u, v);
    if net_rows.iter().chain(&net_cols).any(|&x| x < -eps) {
        return false;
    }
    for (i, ni) in net_rows.iter().enumerate() {
        for (j, nj) in net_cols.iter().enumerate() {
            if ni + nj < u.get(i, j) + v.get(i, j) - eps {
                return false;
            }
        }
    }
    true
}

/// Subset Instability of `outcome` under utilities `(u, v)`: the largest
/// surplus any coalition `I' x J'` could gain by rematching among itself,
/// relative to what its members receive under the outcome. Exponential in
/// the market size; refuses markets above [`SI_CAP`].
pub fn subset_instability(
    outcome: &MarketOutcome,
    u: &WeightMatrix,
    v: &WeightMatrix,
) -> Result<f64> {
    u.check_same_shape(v)?;
    outcome.matching.check_fits(u.rows(), u.cols())?;
    let table = SubsetValueTable::new(&u.sum(v)?)?;
    let (net_rows, net_cols) = net_utilities(outcome, u, v);
    Ok(table.instability(&net_rows, &net_cols))
}

/// Max-weight matching value of every coalition `I' x J'`.
///
/// Filled by the recursion on the lowest row of `I'`: it is either left
/// unmatched or matched to some column of `J'`.
#[derive(Debug, Clone)]
pub struct SubsetValueTable {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SubsetValueTable {
    pub fn new(weights: &WeightMatrix) -> Result<Self> {
        let (n, m) = (weights.rows(), weights.cols());
        if n > SI_CAP || m > SI_CAP {
            return Err(Error::TooLarge {
                rows: n,
                cols: m,
                cap: SI_CAP,
            });
        }
        let col_masks = 1usize << m;
        let mut values = vec![0.0; (1usize << n) * col_masks];
        for row_mask in 1..(1usize << n) {
            let i = row_mask.trailing_zeros() as usize;
            let without_i = row_mask & (row_mask - 1);
            for col_mask in 1..col_masks {
                let mut best = values[without_i * col_masks + col_mask];
                let mut rest = col_mask;
                while rest != 0 {
                    let j = rest.trailing_zeros() as usize;
                    rest &= rest - 1;
                    let w = weights.get(i, j);
                    if w > 0.0 {
                        let candidate = w + values[without_i * col_masks + (col_mask & !(1 << j))];
                        if candidate > best {
                            best = candidate;
                        }
                    }
                }
                values[row_mask * col_masks + col_mask] = best;
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            values,
        })
    }

    /// Max-weight matching value on the coalition given by two bitmasks.
    pub fn value(&self, row_mask: usize, col_mask: usize) -> f64 {
        self.values[row_mask * (1usize << self.cols) + col_mask]
    }

    /// The full market's max-weight matching value.
    pub fn full_value(&self) -> f64 {
        self.value((1 << self.rows) - 1, (1 << self.cols) - 1)
    }

    /// Subset Instability for the given net utilities.
    pub fn instability(&self, net_rows: &[f64], net_cols: &[f64]) -> f64 {
        debug_assert_eq!(net_rows.len(), self.rows);
        debug_assert_eq!(net_cols.len(), self.cols);
        let row_sums = mask_sums(net_rows);
        let col_sums = mask_sums(net_cols);
        let col_masks = 1usize << self.cols;
        let mut best = 0.0f64;
        for (row_mask, row_sum) in row_sums.iter().enumerate() {
            let base = row_mask * col_masks;
            for (col_mask, col_sum) in col_sums.iter().enumerate() {
                let surplus = self.values[base + col_mask] - row_sum - col_sum;
                if surplus > best {
                    best = surplus;
                }
            }
        }
        best
    }
}

fn mask_sums(xs: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; 1usize << xs.len()];
    for mask in 1..sums.len() {
        let low = mask.trailing_zeros() as usize;
        sums[mask] = sums[mask & (mask - 1)] + xs[low];
    }
    sums
}

/// Sum over matched pairs of the utility bonuses on both sides. Bonuses are
/// given per pair, in the order of `matching.pairs()`.
pub fn si_bonus_bound(matching: &Matching, bonus_u: &[f64], bonus_v: &[f64]) -> Result<f64> {
    if bonus_u.len() != matching.len() || bonus_v.len() != matching.len() {
        return Err(Error::invalid(format!(
            "expected {} bonuses per side, got {} and {}",
            matching.len(),
            bonus_u.len(),
            bonus_v.len()
        )));
    }
    if let Some(b) = bonus_u
        .iter()
        .chain(bonus_v)
        .find(|&&b| b < 0.0 || b.is_nan())
    {
        return Err(Error::invalid(format!("negative bonus {b}")));
    }
    Ok(bonus_u.iter().chain(bonus_v).sum())
}
