use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use som_core::estimation::{PlannerEstimator, RidgeStats, UtilityEstimator, REFRESH_INTERVAL};
use som_core::market::Side;

fn unit_ball_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt().max(1.0);
    x.into_iter().map(|a| a / norm).collect()
}

/// `(lambda I + X^T X)^{-1} X^T y` solved from scratch by LU.
fn batch_ridge(xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> DVector<f64> {
    let dim = xs[0].len();
    let x = DMatrix::from_fn(xs.len(), dim, |r, c| xs[r][c]);
    let y = DVector::from_column_slice(ys);
    let gram = x.transpose() * &x + DMatrix::identity(dim, dim) * lambda;
    gram.lu().solve(&(x.transpose() * y)).unwrap()
}

#[test]
fn incremental_ridge_matches_batch_on_fifty_streams() {
    for stream in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let dim = 1 + (stream as usize % 9);
        let lambda = [0.5, 1.0, 2.0][stream as usize % 3];
        let truth = unit_ball_vector(&mut rng, dim);
        let mut est = UtilityEstimator::new(dim, lambda);
        let mut xs = Vec::new();
        let (mut us, mut vs) = (Vec::new(), Vec::new());
        let n = 50 + 25 * (stream as usize % 40);
        for _ in 0..n {
            let x = unit_ball_vector(&mut rng, dim);
            let mean: f64 = x.iter().zip(&truth).map(|(a, b)| a * b).sum();
            let u = mean + 0.1 * rng.random_range(-1.0..1.0);
            let v = -mean + 0.1 * rng.random_range(-1.0..1.0);
            est.ingest([(x.as_slice(), u, v)]).unwrap();
            xs.push(x);
            us.push(u);
            vs.push(v);
        }
        let theta = batch_ridge(&xs, &us, lambda);
        let gamma = batch_ridge(&xs, &vs, lambda);
        assert!((est.theta_hat() - theta).amax() < 1e-8, "stream {stream}");
        assert!((est.gamma_hat() - gamma).amax() < 1e-8, "stream {stream}");
        assert_eq!(est.observations(), n);
    }
}

#[test]
fn inverse_tracks_batch_inverse_across_refreshes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dim = 9;
    let mut stats = RidgeStats::new(dim, 1.0);
    let mut gram = DMatrix::<f64>::identity(dim, dim);
    for t in 1..=(2 * REFRESH_INTERVAL + 37) {
        let x = unit_ball_vector(&mut rng, dim);
        let col = DVector::from_column_slice(&x);
        gram += &col * col.transpose();
        stats.add(&x);
        if t % 97 == 0 || t == REFRESH_INTERVAL || t == REFRESH_INTERVAL + 1 {
            let inv = gram.clone().try_inverse().unwrap();
            assert!(
                (stats.gram_inv() - &inv).amax() < 1e-10,
                "after {t} updates"
            );
            assert!((stats.gram() - &gram).amax() < 1e-10);
        }
    }
}

#[test]
fn residual_identity() {
    // theta_hat solves the normal equations: (lambda I + X^T X) theta_hat = X^T y.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 4;
    let mut est = UtilityEstimator::new(dim, 1.5);
    for _ in 0..200 {
        let x = unit_ball_vector(&mut rng, dim);
        let y = rng.random_range(-1.0..1.0);
        est.ingest([(x.as_slice(), y, 0.0)]).unwrap();
    }
    let lhs = est.stats().gram() * est.theta_hat();
    assert!((lhs - est.b_theta()).amax() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn widths_never_grow(seed in any::<u64>(), dim in 1usize..6, probes in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stats = RidgeStats::new(dim, 1.0);
        let points: Vec<Vec<f64>> = (0..probes).map(|_| unit_ball_vector(&mut rng, dim)).collect();
        let mut last: Vec<f64> = points.iter().map(|p| stats.width(p)).collect();
        for p in &points {
            let expected = p.iter().map(|a| a * a).sum::<f64>().sqrt();
            prop_assert!((stats.width(p) - expected).abs() < 1e-12);
        }
        for _ in 0..60 {
            stats.add(&unit_ball_vector(&mut rng, dim));
            let now: Vec<f64> = points.iter().map(|p| stats.width(p)).collect();
            for (a, b) in now.iter().zip(&last) {
                prop_assert!(*a <= b + 1e-12);
            }
            last = now;
        }
    }

    #[test]
    fn ucb_is_clipped_and_dominates_point_estimate(seed in any::<u64>(), beta in 0.0..5.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 4;
        let mut est = UtilityEstimator::new(dim, 1.0);
        let probe = unit_ball_vector(&mut rng, dim);
        prop_assert_eq!(est.ucb_utility(&probe, Side::First, beta), 1.0);
        for _ in 0..20 {
            let x = unit_ball_vector(&mut rng, dim);
            est.ingest([(x.as_slice(), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))]).unwrap();
        }
        for side in [Side::First, Side::Second] {
            let ucb = est.ucb_utility(&probe, side, beta);
            prop_assert!((-1.0..=1.0).contains(&ucb));
            let raw = est.point_estimate(&probe, side) + beta * est.width(&probe);
            prop_assert!((ucb - raw.clamp(-1.0, 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn planner_table_is_clipped(
        seed in any::<u64>(),
        beta in 0.0..50.0f64,
        clip in 0.5..6.0f64,
    ) {
        let (nc, na, d) = (3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi: Vec<Vec<f64>> = (0..nc * na)
            .map(|_| {
                let a = rng.random_range(0.0..1.0);
                vec![a, 1.0 - a]
            })
            .collect();
        let mut planner = PlannerEstimator::new(d, nc, na, 1.0);
        for _ in 0..30 {
            let (c, e, n) = (rng.random_range(0..nc), rng.random_range(0..na), rng.random_range(0..nc));
            planner.record(c, e, n, &psi[c * na + e]).unwrap();
        }
        let r_bar: Vec<f64> = (0..nc * na).map(|_| rng.random_range(0.0..2.0)).collect();
        let v_next: Vec<f64> = (0..nc).map(|_| rng.random_range(0.0..clip)).collect();
        let fit = planner.fit(&psi, &r_bar, &v_next, beta, clip).unwrap();
        for c in 0..nc {
            let row: Vec<f64> = (0..na).map(|e| fit.table.get(c, e)).collect();
            prop_assert!(row.iter().all(|q| (0.0..=clip).contains(q)));
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(fit.table.v[c], best);
            let first = row.iter().position(|&q| q == best).unwrap();
            prop_assert_eq!(fit.table.greedy[c], first);
        }
    }
}

#[test]
fn planner_regression_recovers_a_known_kernel() {
    // psi = (1 - a, a), next context 1 with probability a: regressing the
    // indicator value of context 1 on psi recovers w = (0, 1).
    let (nc, na) = (2, 3);
    let psi: Vec<Vec<f64>> = (0..nc * na)
        .map(|cell| {
            let a = (cell % na) as f64 / 2.0;
            vec![1.0 - a, a]
        })
        .collect();
    let mut planner = PlannerEstimator::new(2, nc, na, 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20_000 {
        let (c, e) = (rng.random_range(0..nc), rng.random_range(0..na));
        let a = psi[c * na + e][1];
        let next = usize::from(rng.random_bool(a));
        planner.record(c, e, next, &psi[c * na + e]).unwrap();
    }
    let fit = planner
        .fit(&psi, &vec![0.0; nc * na], &[0.0, 1.0], 0.0, 10.0)
        .unwrap();
    assert!(
        (fit.w_hat[0]).abs() < 0.03 && (fit.w_hat[1] - 1.0).abs() < 0.03,
        "{}",
        fit.w_hat
    );
}
