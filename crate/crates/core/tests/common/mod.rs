//! Independent reference implementations used across the integration tests.
#![allow(dead_code)]

use proptest::prelude::*;
use som_core::market::{FeatureMaps, MarketInstance, Roster, TransitionModel, UtilityParams};
use som_core::matching::{MarketOutcome, Matching, Transfers, WeightMatrix};

/// Maximum over all matchings (including partial ones) by recursion over
/// rows: each row is either left out or paired with a free column.
pub fn enumerate_max(w: &[Vec<f64>]) -> f64 {
    fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        let mut best = go(w, row + 1, used);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(w[row][j] + go(w, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    let cols = w.first().map_or(0, Vec::len);
    go(w, 0, &mut vec![false; cols])
}

pub fn to_rows(m: &WeightMatrix) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect())
        .collect()
}

pub fn net(outcome: &MarketOutcome, u: &WeightMatrix, v: &WeightMatrix) -> (Vec<f64>, Vec<f64>) {
    let mut rows: Vec<f64> = outcome.transfers.rows.clone();
    let mut cols: Vec<f64> = outcome.transfers.cols.clone();
    for &(i, j) in outcome.matching.pairs() {
        rows[i] += u.get(i, j);
        cols[j] += v.get(i, j);
    }
    (rows, cols)
}

/// Subset Instability without enumerating coalitions: unhappy agents leave
/// alone, and the best blocking coalition pairs the rest along a max-weight
/// matching of `w(i, j) - net_i^+ - net_j^+`.
pub fn poly_instability(outcome: &MarketOutcome, u: &WeightMatrix, v: &WeightMatrix) -> f64 {
    let (nr, nc) = net(outcome, u, v);
    let alone: f64 = nr.iter().chain(&nc).map(|x| (-x).max(0.0)).sum();
    let reduced: Vec<Vec<f64>> = (0..u.rows())
        .map(|i| {
            (0..u.cols())
                .map(|j| u.get(i, j) + v.get(i, j) - nr[i].max(0.0) - nc[j].max(0.0))
                .collect()
        })
        .collect();
    alone + enumerate_max(&reduced)
}

/// Individual rationality and no blocking pair, checked directly.
pub fn stable_by_definition(
    outcome: &MarketOutcome,
    u: &WeightMatrix,
    v: &WeightMatrix,
    eps: f64,
) -> bool {
    let (nr, nc) = net(outcome, u, v);
    if nr.iter().chain(&nc).any(|&x| x < -eps) {
        return false;
    }
    (0..u.rows()).all(|i| (0..u.cols()).all(|j| nr[i] + nc[j] >= u.get(i, j) + v.get(i, j) - eps))
}

pub fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = WeightMatrix> {
    prop::collection::vec(lo..=hi, rows * cols)
        .prop_map(move |xs| WeightMatrix::from_fn(rows, cols, |i, j| xs[i * cols + j]))
}

pub fn sized_matrix(max_side: usize, lo: f64, hi: f64) -> impl Strategy<Value = WeightMatrix> {
    (1..=max_side, 1..=max_side).prop_flat_map(move |(r, c)| matrix(r, c, lo, hi))
}

/// `(u, v)` of a common random shape.
pub fn utility_pair(max_side: usize) -> impl Strategy<Value = (WeightMatrix, WeightMatrix)> {
    (1..=max_side, 1..=max_side)
        .prop_flat_map(|(r, c)| (matrix(r, c, -1.0, 1.0), matrix(r, c, -1.0, 1.0)))
}

/// An arbitrary outcome: any matching, any transfers.
pub fn arbitrary_outcome(rows: usize, cols: usize) -> impl Strategy<Value = MarketOutcome> {
    let perm = Just((0..cols).collect::<Vec<_>>()).prop_shuffle();
    (
        perm,
        prop::collection::vec(any::<bool>(), rows),
        prop::collection::vec(-1.0..1.0f64, rows),
        prop::collection::vec(-1.0..1.0f64, cols),
    )
        .prop_map(move |(perm, keep, tr, tc)| {
            let pairs = (0..rows.min(cols))
                .filter(|&i| keep[i])
                .map(|i| (i, perm[i]))
                .collect();
            MarketOutcome {
                matching: Matching::new(pairs).unwrap(),
                transfers: Transfers { rows: tr, cols: tc },
            }
        })
}

/// A hand-built market on the two-point simplex: contexts and actions both
/// index `psi = (1 - a, a)`, one agent per side and pool, utilities
/// `<Phi, theta>` with `phi = (1, 0)`.
pub fn two_context_market(
    horizon: usize,
    stay: f64,
    theta: [f64; 2],
    gamma: [f64; 2],
) -> MarketInstance {
    let psi = vec![
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
    ];
    let features = FeatureMaps {
        d: 2,
        num_actions: 2,
        second_pool: 1,
        psi,
        phi: vec![vec![1.0, 0.0]],
    };
    let lift = |p: [f64; 2]| vec![p[0], 0.0, p[1], 0.0];
    let params = UtilityParams {
        theta: vec![lift(theta); horizon],
        gamma: vec![lift(gamma); horizon],
    };
    let anchors = vec![vec![vec![stay, 1.0 - stay], vec![1.0 - stay, stay]]; horizon];
    let roster = Roster {
        first: vec![0],
        second: vec![0],
    };
    MarketInstance::new(
        2,
        [1, 1],
        vec![roster; horizon],
        features,
        params,
        TransitionModel { anchors },
        0,
        0.0,
    )
    .unwrap()
}
