//! Experiment harness: config files, seeded runs with runtime invariant
//! checks, and CSV output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_policy, exact_pseudo_rewards, optimal_value, regret_slope, EpisodeArtifacts,
    ExactValues, RegretLedger, LEDGER_VALUE_COLUMNS,
};
use crate::market::{generate_market, MarketConfig, MarketInstance};
use crate::matching::{
    brute_force_matching, dual_prices, is_stable, max_weight_matching, max_weight_value,
    optimal_outcome, si_bonus_bound, subset_instability, MarketOutcome, WeightMatrix,
    BRUTE_FORCE_CAP, EXACT_TOL,
};
use crate::som::{simulation_rng, EpisodeTables, EpisodeTrace, SiTracking, Som, SomConfig};

/// Environment variable holding the number of worker threads for seeds.
pub const WORKERS_ENV: &str = "SOM_WORKERS";

/// Optimism holds when no UCB is below the truth by more than this.
pub const OPTIMISM_TOL: f64 = 1e-9;
/// Slack for the per-step bonus lemmas and the regret decomposition.
pub const LEMMA_TOL: f64 = 1e-6;
/// Gaps against exact optimal values may dip below zero by rounding only.
pub const GAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub d: usize,
    pub horizon: usize,
    pub num_contexts: usize,
    pub num_actions: usize,
    pub agents_per_side: usize,
    /// Pool size per side; defaults to `agents_per_side` (rosters = pool).
    #[serde(default)]
    pub pool_per_side: Option<usize>,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "one")]
    pub utility_target_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SomSection {
    pub episodes: usize,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "one")]
    pub beta_scale_u: f64,
    #[serde(default = "one")]
    pub beta_scale_v: f64,
    #[serde(default)]
    pub si_tracking: SiTracking,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub emit_traces: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            out_dir: default_out_dir(),
            emit_traces: false,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_noise_sigma() -> f64 {
    0.1
}

fn default_delta() -> f64 {
    0.1
}

fn default_eta() -> f64 {
    0.1
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub market: MarketSection,
    pub som: SomSection,
    #[serde(default)]
    pub run: RunSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Checks every field against the preconditions of the module it feeds.
    /// Errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let m = &self.market;
        for (key, value) in [
            ("market.d", m.d),
            ("market.horizon", m.horizon),
            ("market.num_contexts", m.num_contexts),
            ("market.num_actions", m.num_actions),
            ("market.agents_per_side", m.agents_per_side),
            ("som.episodes", self.som.episodes),
        ] {
            if value == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if let Some(pool) = m.pool_per_side {
            if pool < m.agents_per_side {
                return Err(Error::config(
                    "market.pool_per_side",
                    format!(
                        "{pool} is smaller than agents_per_side {}",
                        m.agents_per_side
                    ),
                ));
            }
        }
        if !(0.0..=1.0).contains(&m.noise_sigma) {
            return Err(Error::config(
                "market.noise_sigma",
                format!("{} outside [0, 1]", m.noise_sigma),
            ));
        }
        if !(m.utility_target_scale > 0.0 && m.utility_target_scale <= 1.0) {
            return Err(Error::config(
                "market.utility_target_scale",
                format!("{} outside (0, 1]", m.utility_target_scale),
            ));
        }
        let s = &self.som;
        if !(s.lambda > 0.0 && s.lambda.is_finite()) {
            return Err(Error::config(
                "som.lambda",
                format!("{} must be positive", s.lambda),
            ));
        }
        if !(s.delta > 0.0 && s.delta < 1.0) {
            return Err(Error::config(
                "som.delta",
                format!("{} outside (0, 1)", s.delta),
            ));
        }
        if !(s.eta > 0.0 && s.eta.is_finite()) {
            return Err(Error::config(
                "som.eta",
                format!("{} must be positive", s.eta),
            ));
        }
        for (key, value) in [
            ("som.beta_scale_u", s.beta_scale_u),
            ("som.beta_scale_v", s.beta_scale_v),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::config(key, format!("{value} must be nonnegative")));
            }
        }
        if s.si_tracking == SiTracking::On && m.agents_per_side > crate::matching::SI_CAP {
            return Err(Error::config(
                "som.si_tracking",
                format!(
                    "\"on\" needs at most {} agents per side",
                    crate::matching::SI_CAP
                ),
            ));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::config("run.seeds", "needs at least one seed"));
        }
        Ok(())
    }

    pub fn market_config(&self) -> MarketConfig {
        let m = &self.market;
        let pool = m.pool_per_side.unwrap_or(m.agents_per_side);
        MarketConfig {
            d: m.d,
            horizon: m.horizon,
            num_contexts: m.num_contexts,
            num_actions: m.num_actions,
            pool_sizes: [pool; 2],
            roster_sizes: [m.agents_per_side; 2],
            noise_sigma: m.noise_sigma,
            utility_target_scale: m.utility_target_scale,
        }
    }

    pub fn som_config(&self, seed: u64) -> SomConfig {
        let s = &self.som;
        SomConfig {
            episodes: s.episodes,
            lambda: s.lambda,
            delta: s.delta,
            eta: s.eta,
            beta_scale_u: s.beta_scale_u,
            beta_scale_v: s.beta_scale_v,
            si_tracking: s.si_tracking,
            seed,
        }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::parse(&text, path)
}

/// Counts of the runtime checks performed during one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InvariantTallies {
    /// `(k, h)` steps inspected.
    pub steps: usize,
    /// Steps at which some UCB fell below the true utility.
    pub optimism_violations: usize,
    /// Bonus-bound checks performed (cells of steps where optimism held).
    pub lemma_checks: usize,
    pub lemma_violations: usize,
    pub decomposition_checks: usize,
    pub decomposition_violations: usize,
    /// Outcomes not stable for the estimated utilities.
    pub stability_violations: usize,
    /// Outcomes whose prices do not certify the optimistic pseudo-reward.
    pub duality_violations: usize,
    /// Episodes with a planner or total gap below `-GAP_TOL`.
    pub gap_violations: usize,
    /// Steps where realized SI exceeded the width-based bonus sum. These are
    /// legitimate outside the confidence event and are reported only.
    pub width_bound_exceedances: usize,
}

impl InvariantTallies {
    pub fn optimism_violated(&self) -> bool {
        self.optimism_violations > 0
    }

    pub fn hard_violations(&self) -> usize {
        self.lemma_violations
            + self.decomposition_violations
            + self.stability_violations
            + self.duality_violations
            + self.gap_violations
    }
}

/// Result of one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub ledger: RegretLedger,
    pub tallies: InvariantTallies,
    /// Slope of log cumulative regret over the second half of the run, when
    /// defined.
    pub slope: Option<f64>,
    pub traces: Option<Vec<EpisodeTrace>>,
}

/// Episodes `ceil(K/2)..=K`, the window used for the summary slope.
pub fn slope_window(episodes: usize) -> std::ops::RangeInclusive<usize> {
    episodes.div_ceil(2).max(1)..=episodes
}

/// Market from stream 0 of the seed, simulation from stream 1.
pub fn run_seed(config: &ExperimentConfig, seed: u64, keep_traces: bool) -> Result<SeedRun> {
    let market = generate_market(&config.market_config(), seed)?;
    run_on_market(&market, &config.som_config(seed), keep_traces)
}

pub fn run_on_market(
    market: &MarketInstance,
    som_config: &SomConfig,
    keep_traces: bool,
) -> Result<SeedRun> {
    let exact = optimal_value(market, exact_pseudo_rewards(market))?;
    let mut som = Som::new(market, som_config.clone())?;
    let mut rng = simulation_rng(som_config.seed);
    let mut ledger = RegretLedger::new();
    let mut tallies = InvariantTallies::default();
    let mut traces = keep_traces.then(Vec::new);
    let with_si = som.si_tracking();

    for _ in 0..som_config.episodes {
        let tables = som.backward_pass()?;
        check_tables(&exact, &tables, with_si, &mut tallies)?;
        let values = evaluate_policy(market, &exact, &tables.policy(), with_si)?;
        let trace = som.forward_pass(&tables, &mut rng)?;
        som.absorb(&trace)?;

        let planner_gap = exact.initial_value - values.pseudo_value;
        let total_gap = exact.initial_value - values.true_value;
        if planner_gap < -GAP_TOL || total_gap < -GAP_TOL {
            tallies.gap_violations += 1;
        }
        if let Some(expected_si) = values.expected_si {
            tallies.decomposition_checks += 1;
            if total_gap > planner_gap + expected_si + LEMMA_TOL {
                tallies.decomposition_violations += 1;
            }
        }
        let mut artifacts = EpisodeArtifacts {
            episode: trace.episode,
            realized_welfare: 0.0,
            pseudo_welfare: 0.0,
            planner_gap,
            agents_gap_expected: values.expected_si.unwrap_or(f64::NAN),
            agents_gap_realized: if with_si { 0.0 } else { f64::NAN },
            total_gap,
            bonus_sum: 0.0,
        };
        for (h, record) in trace.steps.iter().enumerate() {
            artifacts.realized_welfare += record.realized_welfare;
            artifacts.pseudo_welfare += exact.r_bar.get(h, record.context, record.action);
            artifacts.bonus_sum += record.bonus_sum;
            if let Some(si) = record.realized_si {
                artifacts.agents_gap_realized += si;
                if si > record.bonus_sum + LEMMA_TOL {
                    tallies.width_bound_exceedances += 1;
                }
            }
        }
        ledger.append(&artifacts)?;
        if let Some(traces) = traces.as_mut() {
            traces.push(trace);
        }
    }

    let window = slope_window(som_config.episodes);
    let slope = regret_slope(&ledger, window).ok();
    Ok(SeedRun {
        seed: som_config.seed,
        ledger,
        tallies,
        slope,
        traces,
    })
}

/// Per-step checks on the backward pass: the stable-outcome contract on every
/// cell, the optimism event, and under optimism the two bonus bounds with the
/// true utility gaps as bonuses.
fn check_tables(
    exact: &ExactValues,
    tables: &EpisodeTables,
    with_si: bool,
    tallies: &mut InvariantTallies,
) -> Result<()> {
    let na = tables.num_actions;
    for (h, step) in tables.steps.iter().enumerate() {
        tallies.steps += 1;
        let cells = step.r_bar.len();
        let mut optimistic = true;
        for cell in 0..cells {
            let (u_est, v_est, outcome) =
                (&step.u_est[cell], &step.v_est[cell], &step.outcomes[cell]);
            if !is_stable(outcome, u_est, v_est, EXACT_TOL) {
                tallies.stability_violations += 1;
            }
            let welfare = outcome.matching.value(&u_est.sum(v_est)?);
            let scale = 1.0 + step.r_bar[cell].abs();
            if (welfare - step.r_bar[cell]).abs() > EXACT_TOL * scale
                || outcome.transfers.total().abs() > EXACT_TOL * scale
            {
                tallies.duality_violations += 1;
            }
            let (u, v) = exact.utilities(h, cell / na, cell % na);
            optimistic &= dominates(u_est, u) && dominates(v_est, v);
        }
        if !optimistic {
            tallies.optimism_violations += 1;
            continue;
        }
        for cell in 0..cells {
            let (c, e) = (cell / na, cell % na);
            let (u, v) = exact.utilities(h, c, e);
            let outcome = &step.outcomes[cell];
            let pairs = outcome.matching.pairs();
            let gap_u: Vec<f64> = pairs
                .iter()
                .map(|&(a, b)| (step.u_est[cell].get(a, b) - u.get(a, b)).max(0.0))
                .collect();
            let gap_v: Vec<f64> = pairs
                .iter()
                .map(|&(a, b)| (step.v_est[cell].get(a, b) - v.get(a, b)).max(0.0))
                .collect();
            let bound = si_bonus_bound(&outcome.matching, &gap_u, &gap_v)?;
            let excess = step.r_bar[cell] - exact.r_bar.get(h, c, e);
            tallies.lemma_checks += 1;
            let mut violated = excess < -LEMMA_TOL || excess > bound + LEMMA_TOL;
            if with_si {
                violated |= exact.subset_instability(h, c, e, outcome)? > bound + LEMMA_TOL;
            }
            if violated {
                tallies.lemma_violations += 1;
            }
        }
    }
    Ok(())
}

fn dominates(estimate: &WeightMatrix, truth: &WeightMatrix) -> bool {
    (0..truth.rows())
        .all(|a| (0..truth.cols()).all(|b| estimate.get(a, b) >= truth.get(a, b) - OPTIMISM_TOL))
}

/// Per-seed rows and aggregate statistics of an experiment.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub episodes: usize,
    pub seeds: Vec<SeedSummary>,
    /// Mean and sample standard deviation of each numeric summary column.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SeedSummary {
    pub seed: u64,
    /// Final cumulative value of each ledger column.
    pub cumulative: [f64; 7],
    pub slope: Option<f64>,
    pub tallies: InvariantTallies,
    pub ledger_path: Option<PathBuf>,
}

impl SeedSummary {
    fn numeric(&self) -> Vec<f64> {
        let t = &self.tallies;
        let mut row = self.cumulative.to_vec();
        row.push(self.slope.unwrap_or(f64::NAN));
        row.extend(
            [
                t.optimism_violated() as usize,
                t.optimism_violations,
                t.lemma_violations,
                t.decomposition_violations,
                t.stability_violations,
                t.duality_violations,
                t.gap_violations,
                t.width_bound_exceedances,
            ]
            .map(|x| x as f64),
        );
        row
    }
}

const SUMMARY_EXTRA_COLUMNS: [&str; 9] = [
    "regret_slope",
    "optimism_violated",
    "optimism_violations",
    "lemma_violations",
    "decomposition_violations",
    "stability_violations",
    "duality_violations",
    "gap_violations",
    "width_bound_exceedances",
];

impl RunSummary {
    pub fn from_runs(episodes: usize, runs: &[(SeedRun, Option<PathBuf>)]) -> Self {
        let seeds: Vec<SeedSummary> = runs
            .iter()
            .map(|(run, path)| SeedSummary {
                seed: run.seed,
                cumulative: run.ledger.rows().last().map_or([0.0; 7], |r| r.cumulative),
                slope: run.slope,
                tallies: run.tallies,
                ledger_path: path.clone(),
            })
            .collect();
        let rows: Vec<Vec<f64>> = seeds.iter().map(SeedSummary::numeric).collect();
        let width = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..width)
            .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n)
            .collect();
        let std = (0..width)
            .map(|c| {
                if rows.len() < 2 {
                    return 0.0;
                }
                let ss: f64 = rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum();
                (ss / (n - 1.0)).sqrt()
            })
            .collect();
        Self {
            episodes,
            seeds,
            mean,
            std,
        }
    }

    pub fn optimism_violated_runs(&self) -> usize {
        self.seeds
            .iter()
            .filter(|s| s.tallies.optimism_violated())
            .count()
    }

    pub fn hard_violations(&self) -> usize {
        self.seeds.iter().map(|s| s.tallies.hard_violations()).sum()
    }

    /// 0 when every invariant held, 1 on any hard breach, 2 when only the
    /// optimism event failed.
    pub fn exit_code(&self) -> i32 {
        if self.hard_violations() > 0 {
            1
        } else if self.optimism_violated_runs() > 0 {
            2
        } else {
            0
        }
    }
}

/// Formats like C's `%.12g`.
pub fn format_float(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exponent) = sci.split_once('e').expect("exponent present");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    if !(-4..DIGITS).contains(&exponent) {
        let mantissa = strip_zeros(mantissa);
        let sign = if exponent < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exponent.abs())
    } else {
        let decimals = (DIGITS - 1 - exponent).max(0) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn ledger_header() -> Vec<String> {
    let mut header = vec!["episode".to_string()];
    header.extend(LEDGER_VALUE_COLUMNS.iter().map(|c| c.to_string()));
    header.extend(LEDGER_VALUE_COLUMNS.iter().map(|c| format!("cum_{c}")));
    header
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn write_ledger(path: &Path, ledger: &RegretLedger) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(ledger_header())
        .map_err(|e| csv_error(path, e))?;
    for row in ledger.rows() {
        let mut record = vec![row.episode.to_string()];
        record.extend(
            row.values
                .iter()
                .chain(&row.cumulative)
                .map(|&x| format_float(x)),
        );
        w.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_traces(path: &Path, traces: &[EpisodeTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record([
        "episode",
        "h",
        "context",
        "action",
        "pairs",
        "realized_welfare",
        "bonus_sum",
        "realized_si",
        "next_context",
    ])
    .map_err(|e| csv_error(path, e))?;
    for trace in traces {
        for (h, r) in trace.steps.iter().enumerate() {
            let mut pairs = String::new();
            for (n, obs) in r.observations.iter().enumerate() {
                if n > 0 {
                    pairs.push(';');
                }
                let _ = write!(pairs, "{}-{}", obs.pair.0, obs.pair.1);
            }
            w.write_record([
                trace.episode.to_string(),
                (h + 1).to_string(),
                r.context.to_string(),
                r.action.to_string(),
                pairs,
                format_float(r.realized_welfare),
                format_float(r.bonus_sum),
                r.realized_si
                    .map_or_else(|| "nan".to_string(), format_float),
                r.next_context.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["seed".to_string()];
    header.extend(LEDGER_VALUE_COLUMNS.iter().map(|c| format!("cum_{c}")));
    header.extend(SUMMARY_EXTRA_COLUMNS.iter().map(|c| c.to_string()));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for seed in &summary.seeds {
        let mut record = vec![seed.seed.to_string()];
        record.extend(seed.numeric().into_iter().map(format_float));
        w.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    for (label, stats) in [("mean", &summary.mean), ("std", &summary.std)] {
        let mut record = vec![label.to_string()];
        record.extend(stats.iter().map(|&x| format_float(x)));
        w.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn ledger_path(out_dir: &Path, run_index: usize, seed: u64) -> PathBuf {
    out_dir.join(format!("ledger_run{run_index:03}_seed{seed}.csv"))
}

pub fn trace_path(out_dir: &Path, run_index: usize, seed: u64) -> PathBuf {
    out_dir.join(format!("trace_run{run_index:03}_seed{seed}.csv"))
}

/// Worker count from [`WORKERS_ENV`]; all cores when unset or invalid.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0)
}

/// Runs every seed in parallel, writes one ledger per seed and a summary
/// after all seeds finish.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let out_dir = &config.run.out_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let runs: Vec<Result<(SeedRun, Option<PathBuf>)>> = pool.install(|| {
        config
            .run
            .seeds
            .par_iter()
            .enumerate()
            .map(|(index, &seed)| {
                let run = run_seed(config, seed, config.run.emit_traces)?;
                let path = ledger_path(out_dir, index, seed);
                write_ledger(&path, &run.ledger)?;
                if let Some(traces) = &run.traces {
                    write_traces(&trace_path(out_dir, index, seed), traces)?;
                }
                Ok((run, Some(path)))
            })
            .collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = RunSummary::from_runs(config.som.episodes, &runs);
    write_summary(&out_dir.join("summary.csv"), &summary)?;
    Ok(summary)
}

/// Failure counts of the standalone oracle suite.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OracleReport {
    pub cases: usize,
    pub assignment_mismatches: usize,
    pub duality_failures: usize,
    pub stability_failures: usize,
    pub instability_failures: usize,
}

impl OracleReport {
    pub fn failures(&self) -> usize {
        self.assignment_mismatches
            + self.duality_failures
            + self.stability_failures
            + self.instability_failures
    }
}

/// Random markets up to 5x5 with utilities in `[-1, 1]`: the assignment
/// solver against enumeration, duality of the prices, stability of the
/// implemented outcome, and two exact values of Subset Instability (zero at
/// the optimum, the max-weight value for the empty outcome).
pub fn oracle_suite(cases: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport {
        cases,
        ..OracleReport::default()
    };
    for _ in 0..cases {
        let rows = rng.random_range(1..=5);
        let cols = rng.random_range(1..=5);
        let u = WeightMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0));
        let v = WeightMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0));
        let w = u.sum(&v)?;
        let (fast, fast_value) = max_weight_matching(&w)?;
        let (_, brute_value) = brute_force_matching(&w, BRUTE_FORCE_CAP)?;
        if (fast_value - brute_value).abs() > EXACT_TOL
            || (fast.value(&w) - fast_value).abs() > EXACT_TOL
        {
            report.assignment_mismatches += 1;
        }
        match dual_prices(&w, &fast) {
            Ok(prices) if (prices.total() - fast_value).abs() <= EXACT_TOL => {}
            _ => report.duality_failures += 1,
        }
        let (outcome, _) = optimal_outcome(&u, &v)?;
        if !is_stable(&outcome, &u, &v, EXACT_TOL) {
            report.stability_failures += 1;
        }
        let si_opt = subset_instability(&outcome, &u, &v)?;
        let si_empty = subset_instability(&MarketOutcome::unmatched(rows, cols), &u, &v)?;
        if si_opt.abs() > EXACT_TOL || (si_empty - max_weight_value(&w)).abs() > EXACT_TOL {
            report.instability_failures += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
[market]
d = 2
horizon = 2
num_contexts = 3
num_actions = 2
agents_per_side = 3

[som]
episodes = 5
";

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("test.toml"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.market.noise_sigma, 0.1);
        assert_eq!(c.market.utility_target_scale, 1.0);
        assert_eq!(c.market.pool_per_side, None);
        assert_eq!(c.som.lambda, 1.0);
        assert_eq!(c.som.delta, 0.1);
        assert_eq!(c.som.eta, 0.1);
        assert_eq!(c.som.beta_scale_u, 1.0);
        assert_eq!(c.som.beta_scale_v, 1.0);
        assert_eq!(c.som.si_tracking, SiTracking::Auto);
        assert_eq!(c.run, RunSection::default());
    }

    #[test]
    fn negative_lambda_names_key() {
        let err = parse(&format!("{MINIMAL}lambda = -1.0\n")).unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "som.lambda"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_and_unknown_keys_fail_to_parse() {
        assert!(matches!(
            parse(&format!("{MINIMAL}episodes = 6\n")),
            Err(Error::Parse { .. })
        ));
        let unknown = parse(&format!("{MINIMAL}gamma = 6\n")).unwrap_err();
        assert!(matches!(unknown, Error::Parse { .. }));
        assert!(unknown.to_string().contains("gamma"));
        assert!(matches!(
            parse(&MINIMAL.replace("[som]", "[som]\nsi_tracking = \"maybe\"")),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_config("/nonexistent/som.toml"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn float_format_matches_printf_g() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333333"),
            (123456789012.0, "123456789012"),
            (1234567890123.0, "1.23456789012e+12"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (f64::NAN, "nan"),
        ];
        for (x, expected) in cases {
            assert_eq!(format_float(x), expected, "{x}");
        }
    }

    #[test]
    fn one_episode_gives_one_row() {
        let mut c = parse(MINIMAL).unwrap();
        c.som.episodes = 1;
        let run = run_seed(&c, 3, false).unwrap();
        assert_eq!(run.ledger.len(), 1);
        assert_eq!(run.tallies.hard_violations(), 0);
        assert!(run.slope.is_none());
    }

    #[test]
    fn oracle_suite_is_clean() {
        let report = oracle_suite(100, 1).unwrap();
        assert_eq!(report.failures(), 0, "{report:?}");
    }
}
