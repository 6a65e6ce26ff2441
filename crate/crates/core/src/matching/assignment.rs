//! Max-weight bipartite matching.
//!
//! The solver is the O(n^2 m) shortest-augmenting-path Hungarian method on the
//! weights clipped at zero; a zero entry is equivalent to leaving the pair
//! unmatched, so rectangular markets need no explicit dummy agents.

use super::{Matching, WeightMatrix, EXACT_TOL};
use crate::error::{Error, Result};

/// Largest market (per side) accepted by [`brute_force_matching`].
pub const BRUTE_FORCE_CAP: usize = 8;

/// Optimal value of the assignment LP. Equivalent to the value returned by
/// [`max_weight_matching`] but skips the tie-breaking pass.
pub fn max_weight_value(weights: &WeightMatrix) -> f64 {
    let rows: Vec<usize> = (0..weights.rows()).collect();
    let cols: Vec<usize> = (0..weights.cols()).collect();
    solve_sub(weights, &rows, &cols).0
}

/// Returns an integral optimum of the assignment LP and its value.
///
/// Pairs with nonpositive weight are never matched. Among optimal matchings
/// (within `EXACT_TOL`) the one with the lexicographically smallest sorted
/// pair list is returned: rows are fixed in increasing order, each to the
/// lowest column that still admits an optimal completion.
pub fn max_weight_matching(weights: &WeightMatrix) -> Result<(Matching, f64)> {
    if !weights.is_finite() {
        return Err(Error::invalid("weight matrix has non-finite entries"));
    }
    let n = weights.rows();
    let all_cols: Vec<usize> = (0..weights.cols()).collect();
    let all_rows: Vec<usize> = (0..n).collect();
    let (best, first_guess) = solve_sub(weights, &all_rows, &all_cols);

    let mut free_cols = all_cols;
    let mut fixed_value = 0.0;
    let mut pairs = Vec::with_capacity(first_guess.len());
    for i in 0..n {
        let rest: Vec<usize> = ((i + 1)..n).collect();
        let mut chosen = None;
        for (slot, &j) in free_cols.iter().enumerate() {
            let w = weights.get(i, j);
            if w <= 0.0 {
                continue;
            }
            let mut remaining = free_cols.clone();
            remaining.remove(slot);
            let completion = solve_sub(weights, &rest, &remaining).0;
            if fixed_value + w + completion >= best - EXACT_TOL {
                chosen = Some((slot, j, w));
                break;
            }
        }
        if let Some((slot, j, w)) = chosen {
            free_cols.remove(slot);
            fixed_value += w;
            pairs.push((i, j));
        }
    }
    let matching = Matching { pairs };
    let value = matching.value(weights);
    Ok((matching, value))
}

/// Exhaustive enumeration of all partial matchings. Exponential; refuses
/// markets with more than `cap` agents on either side.
pub fn brute_force_matching(weights: &WeightMatrix, cap: usize) -> Result<(Matching, f64)> {
    if weights.rows() > cap || weights.cols() > cap {
        return Err(Error::TooLarge {
            rows: weights.rows(),
            cols: weights.cols(),
            cap,
        });
    }
    let mut search = Enumeration {
        weights,
        used: vec![false; weights.cols()],
        current: Vec::new(),
        best_value: 0.0,
        best: Vec::new(),
    };
    search.visit(0, 0.0);
    let value = search.best_value;
    Ok((Matching { pairs: search.best }, value))
}

struct Enumeration<'a> {
    weights: &'a WeightMatrix,
    used: Vec<bool>,
    current: Vec<(usize, usize)>,
    best_value: f64,
    best: Vec<(usize, usize)>,
}

impl Enumeration<'_> {
    // Visits matchings in lexicographic order of their pair lists, so the
    // first optimum found is the lexicographically smallest one.
    fn visit(&mut self, row: usize, value: f64) {
        if row == self.weights.rows() {
            if value > self.best_value + EXACT_TOL {
                self.best_value = value;
                self.best = self.current.clone();
            }
            return;
        }
        for j in 0..self.weights.cols() {
            let w = self.weights.get(row, j);
            if self.used[j] || w <= 0.0 {
                continue;
            }
            self.used[j] = true;
            self.current.push((row, j));
            self.visit(row + 1, value + w);
            self.current.pop();
            self.used[j] = false;
        }
        self.visit(row + 1, value);
    }
}

/// Max-weight matching restricted to the given rows and columns. Returns the
/// value and the pairs with positive weight.
pub(crate) fn solve_sub(
    weights: &WeightMatrix,
    rows: &[usize],
    cols: &[usize],
) -> (f64, Vec<(usize, usize)>) {
    if rows.is_empty() || cols.is_empty() {
        return (0.0, Vec::new());
    }
    let transpose = rows.len() > cols.len();
    let (short, long) = if transpose {
        (cols, rows)
    } else {
        (rows, cols)
    };
    let gain = |a: usize, b: usize| {
        let w = if transpose {
            weights.get(long[b], short[a])
        } else {
            weights.get(short[a], long[b])
        };
        w.max(0.0)
    };
    let assignment = hungarian_max(short.len(), long.len(), gain);

    let mut pairs = Vec::with_capacity(short.len());
    let mut value = 0.0;
    for (a, b) in assignment.into_iter().enumerate() {
        let (i, j) = if transpose {
            (long[b], short[a])
        } else {
            (short[a], long[b])
        };
        let w = weights.get(i, j);
        if w > 0.0 {
            value += w;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    (value, pairs)
}

/// Assigns each of `n` rows to a distinct one of `m >= n` columns maximizing
/// the total gain. Returns the column of every row.
fn hungarian_max(n: usize, m: usize, gain: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    // 1-based potentials; index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![inf; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = -gain(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            col_of_row[owner[j] - 1] = j - 1;
        }
    }
    col_of_row
}
