//! Static two-sided matching with transferable utilities.
//!
//! Agents on the first side are the rows of a weight matrix, agents on the
//! second side are its columns. All indices in this module are local to the
//! matrix; the market maps them back to pool ids.

pub(crate) mod assignment;
mod duals;
mod stability;

pub use assignment::{
    brute_force_matching, max_weight_matching, max_weight_value, BRUTE_FORCE_CAP,
};
pub use duals::{dual_prices, optimal_outcome, transfers_from_prices, DualPrices};
pub use stability::{
    is_stable, net_utilities, si_bonus_bound, subset_instability, SubsetValueTable, SI_CAP,
};

use crate::error::{Error, Result};

/// Tolerance for identities that hold exactly in real arithmetic.
pub const EXACT_TOL: f64 = 1e-9;

/// Dense row-major matrix of reals indexed by (first-side agent, second-side agent).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from nested rows; all rows must have the same length
    /// and every entry must be finite.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged weight matrix"));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        if data.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weight matrix has non-finite entries"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    /// Entry-wise sum, used to build `u + v` weights.
    pub fn sum(&self, other: &WeightMatrix) -> Result<WeightMatrix> {
        self.check_same_shape(other)?;
        Ok(WeightMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|w| w.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &WeightMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::invalid(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

/// A set of disjoint (row, column) pairs, kept sorted by row.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matching {
    pairs: Vec<(usize, usize)>,
}

impl Matching {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates disjointness; the pairs are sorted lexicographically.
    pub fn new(mut pairs: Vec<(usize, usize)>) -> Result<Self> {
        pairs.sort_unstable();
        for (a, pa) in pairs.iter().enumerate() {
            for pb in &pairs[a + 1..] {
                if pa.0 == pb.0 || pa.1 == pb.1 {
                    return Err(Error::invalid(format!(
                        "pairs {pa:?} and {pb:?} share an agent"
                    )));
                }
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn partner_of_row(&self, i: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == i).map(|p| p.1)
    }

    pub fn partner_of_col(&self, j: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == j).map(|p| p.0)
    }

    /// Sum of `weights` over the matched pairs.
    pub fn value(&self, weights: &WeightMatrix) -> f64 {
        self.pairs.iter().map(|&(i, j)| weights.get(i, j)).sum()
    }

    pub(crate) fn check_fits(&self, rows: usize, cols: usize) -> Result<()> {
        match self.pairs.iter().find(|&&(i, j)| i >= rows || j >= cols) {
            Some(p) => Err(Error::invalid(format!(
                "pair {p:?} outside a {rows}x{cols} market"
            ))),
            None => Ok(()),
        }
    }
}

/// Per-agent transfers; positive means the agent receives money.
#[derive(Debug, Clone, PartialEq)]
pub struct Transfers {
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
}

impl Transfers {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows: vec![0.0; rows],
            cols: vec![0.0; cols],
        }
    }

    pub fn total(&self) -> f64 {
        self.rows.iter().chain(&self.cols).sum()
    }
}

/// A matching together with the transfers that implement it.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketOutcome {
    pub matching: Matching,
    pub transfers: Transfers,
}

impl MarketOutcome {
    pub fn unmatched(rows: usize, cols: usize) -> Self {
        Self {
            matching: Matching::empty(),
            transfers: Transfers::zeros(rows, cols),
        }
    }
}
