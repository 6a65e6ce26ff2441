mod common;

use common::{stable_by_definition, two_context_market};
use som_core::evaluation::{exact_pseudo_rewards, optimal_value};
use som_core::experiment::run_on_market;
use som_core::market::{generate_market, MarketConfig};
use som_core::matching::{is_stable, EXACT_TOL};
use som_core::som::{run, simulation_rng, SiTracking, Som, SomConfig};

fn config(episodes: usize, seed: u64) -> SomConfig {
    SomConfig {
        episodes,
        seed,
        ..SomConfig::default()
    }
}

#[test]
fn same_seed_same_trace() {
    let m = generate_market(&MarketConfig::square(2, 3, 3, 2, 3, 0.1), 1).unwrap();
    let cfg = SomConfig {
        beta_scale_u: 0.1,
        beta_scale_v: 0.1,
        ..config(40, 5)
    };
    let (a, _) = run(&m, &cfg).unwrap();
    let (b, _) = run(&m, &cfg).unwrap();
    for (x, y) in a.iter().zip(&b) {
        for (s, t) in x.steps.iter().zip(&y.steps) {
            assert_eq!(
                (s.context, s.action, s.next_context),
                (t.context, t.action, t.next_context)
            );
            assert_eq!(s.outcome, t.outcome);
            assert_eq!(s.observations, t.observations);
            assert_eq!(s.realized_welfare.to_bits(), t.realized_welfare.to_bits());
        }
    }
    let (c, _) = run(&m, &SomConfig { seed: 6, ..cfg }).unwrap();
    assert!(a.iter().zip(&c).any(|(x, y)| x
        .steps
        .iter()
        .zip(&y.steps)
        .any(|(s, t)| s.observations != t.observations)));
}

#[test]
fn single_episode() {
    let m = generate_market(&MarketConfig::square(2, 2, 3, 2, 3, 0.1), 0).unwrap();
    let (traces, est) = run(&m, &config(1, 0)).unwrap();
    assert_eq!(traces.len(), 1);
    assert_eq!(traces[0].episode, 1);
    assert_eq!(traces[0].steps.len(), 2);
    assert!(est.planner.iter().all(|p| p.episodes() == 1));
}

#[test]
fn datasets_count_matched_pairs() {
    let cfg = MarketConfig {
        pool_sizes: [5, 4],
        roster_sizes: [3, 2],
        ..MarketConfig::square(2, 3, 2, 2, 3, 0.1)
    };
    let m = generate_market(&cfg, 3).unwrap();
    let k = 25;
    let (traces, est) = run(
        &m,
        &SomConfig {
            beta_scale_u: 0.3,
            ..config(k, 3)
        },
    )
    .unwrap();
    for h in 0..m.horizon() {
        let matched: usize = traces
            .iter()
            .map(|t| t.steps[h].outcome.matching.len())
            .sum();
        assert_eq!(est.utility[h].observations(), matched);
        assert_eq!(est.planner[h].episodes(), k);
        for t in &traces {
            let r = m.roster(h);
            assert!(t.steps[h]
                .observations
                .iter()
                .all(|o| r.first.contains(&o.pair.0) && r.second.contains(&o.pair.1)));
        }
    }
}

#[test]
fn first_episode_is_uninformed() {
    // No data: every utility estimate is 1, so each cell's pseudo-reward is
    // 2 min(|I_h|, |J_h|), and Q adds beta_V ||psi|| / sqrt(lambda).
    let m = generate_market(&MarketConfig::square(3, 2, 3, 2, 3, 0.1), 2).unwrap();
    let som = Som::new(
        &m,
        SomConfig {
            beta_scale_v: 0.01,
            ..config(10, 0)
        },
    )
    .unwrap();
    let tables = som.backward_pass().unwrap();
    let na = m.num_actions();
    for (h, step) in tables.steps.iter().enumerate() {
        assert!(!step.from_regression);
        for (cell, &r) in step.r_bar.iter().enumerate() {
            assert!((r - 6.0).abs() < 1e-12);
            let psi = m.features().psi(cell / na, cell % na);
            let norm = psi.iter().map(|x| x * x).sum::<f64>().sqrt();
            let expected = (r + som.beta_v() * norm).clamp(0.0, m.welfare_to_go(h));
            assert!((step.q.q[cell] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn one_step_horizon() {
    let m = generate_market(&MarketConfig::square(2, 1, 3, 3, 2, 0.1), 7).unwrap();
    let mut som = Som::new(
        &m,
        SomConfig {
            beta_scale_u: 0.2,
            beta_scale_v: 0.2,
            ..config(30, 7)
        },
    )
    .unwrap();
    let mut rng = simulation_rng(7);
    for _ in 0..30 {
        let tables = som.backward_pass().unwrap();
        let step = &tables.steps[0];
        let stats = som.estimators().planner[0].stats();
        for (cell, &r) in step.r_bar.iter().enumerate() {
            let psi = m.features().psi(cell / 3, cell % 3);
            let expected = (r + som.beta_v() * stats.width(psi)).clamp(0.0, m.welfare_bound(0));
            assert!((step.q.q[cell] - expected).abs() < 1e-12);
        }
        let trace = som.forward_pass(&tables, &mut rng).unwrap();
        som.absorb(&trace).unwrap();
    }
}

#[test]
fn single_action_is_forced() {
    let m = generate_market(&MarketConfig::square(2, 3, 3, 1, 2, 0.1), 4).unwrap();
    let (traces, _) = run(&m, &config(10, 4)).unwrap();
    assert!(traces.iter().flat_map(|t| &t.steps).all(|s| s.action == 0));
}

#[test]
fn tables_are_bounded_stable_and_reproducible() {
    let cfg = MarketConfig {
        pool_sizes: [6, 6],
        ..MarketConfig::square(2, 3, 3, 2, 4, 0.2)
    };
    let m = generate_market(&cfg, 12).unwrap();
    let mut som = Som::new(
        &m,
        SomConfig {
            beta_scale_u: 0.1,
            beta_scale_v: 0.1,
            ..config(60, 12)
        },
    )
    .unwrap();
    let mut rng = simulation_rng(12);
    for _ in 0..60 {
        let tables = som.backward_pass().unwrap();
        let again = som.backward_pass().unwrap();
        for (h, (step, other)) in tables.steps.iter().zip(&again.steps).enumerate() {
            assert_eq!(step.q, other.q);
            assert!(step
                .q
                .q
                .iter()
                .all(|&q| (0.0..=m.welfare_to_go(h)).contains(&q)));
            for cell in 0..step.outcomes.len() {
                let (u, v, o) = (&step.u_est[cell], &step.v_est[cell], &step.outcomes[cell]);
                assert!(is_stable(o, u, v, EXACT_TOL));
                assert!(stable_by_definition(o, u, v, EXACT_TOL));
            }
        }
        let trace = som.forward_pass(&tables, &mut rng).unwrap();
        som.absorb(&trace).unwrap();
        assert!(som.absorb(&trace).is_err());
    }
}

#[test]
fn si_tracking_modes() {
    let small = generate_market(&MarketConfig::square(2, 1, 2, 2, 3, 0.1), 0).unwrap();
    let (traces, _) = run(
        &small,
        &SomConfig {
            si_tracking: SiTracking::Off,
            ..config(3, 0)
        },
    )
    .unwrap();
    assert!(traces[0].steps[0].realized_si.is_none());
    let (traces, _) = run(&small, &config(3, 0)).unwrap();
    assert!(traces[0].steps[0].realized_si.is_some());
    let large = generate_market(&MarketConfig::square(1, 1, 1, 1, 9, 0.1), 0).unwrap();
    assert!(Som::new(
        &large,
        SomConfig {
            si_tracking: SiTracking::On,
            ..config(3, 0)
        }
    )
    .is_err());
    assert!(!Som::new(&large, config(3, 0)).unwrap().si_tracking());
}

#[test]
fn bonus_sum_shrinks_without_noise() {
    // With exact observations the widths follow the elliptical potential, so
    // the late average bonus is far below the early one.
    let (mut early, mut late) = (0.0, 0.0);
    for seed in 0..4 {
        let m = generate_market(&MarketConfig::square(2, 2, 3, 2, 3, 0.0), seed).unwrap();
        let (traces, _) = run(
            &m,
            &SomConfig {
                beta_scale_u: 0.2,
                beta_scale_v: 0.2,
                ..config(400, seed)
            },
        )
        .unwrap();
        let bonus =
            |t: &som_core::som::EpisodeTrace| t.steps.iter().map(|s| s.bonus_sum).sum::<f64>();
        early += traces[..100].iter().map(bonus).sum::<f64>();
        late += traces[300..].iter().map(bonus).sum::<f64>();
    }
    assert!(late < 0.5 * early, "early {early} late {late}");
}

#[test]
fn learns_the_best_action_on_a_toy_market() {
    let m = two_context_market(3, 0.7, [0.2, 0.6], [0.1, 0.3]);
    let exact = optimal_value(&m, exact_pseudo_rewards(&m)).unwrap();
    let (traces, _) = run(
        &m,
        &SomConfig {
            beta_scale_u: 0.2,
            beta_scale_v: 0.2,
            ..config(300, 1)
        },
    )
    .unwrap();
    let late = &traces[200..];
    let good = late
        .iter()
        .flat_map(|t| &t.steps)
        .filter(|s| s.action == 1)
        .count();
    assert_eq!(good, late.len() * 3);
    assert!(exact.optimal_actions.iter().flatten().all(|&e| e == 1));
}

#[test]
fn realized_instability_tracks_expected() {
    let m = generate_market(&MarketConfig::square(2, 2, 3, 2, 3, 0.1), 17).unwrap();
    let cfg = SomConfig {
        beta_scale_u: 0.2,
        beta_scale_v: 0.2,
        ..config(1000, 17)
    };
    let run = run_on_market(&m, &cfg, false).unwrap();
    let slack = 5.0 * m.welfare_to_go(0) / 200f64.sqrt();
    for block in run.ledger.rows().chunks(200) {
        let realized = block.iter().map(|r| r.values[4]).sum::<f64>() / 200.0;
        let expected = block.iter().map(|r| r.values[3]).sum::<f64>() / 200.0;
        assert!(
            (realized - expected).abs() <= slack,
            "{realized} vs {expected}"
        );
    }
    assert_eq!(run.tallies.hard_violations(), 0, "{:?}", run.tallies);
}
