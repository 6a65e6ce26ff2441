//! Sequential optimistic matching: the episode loop.
//!
//! Every episode first runs a backward pass over the steps `h = H, ..., 1`
//! (utility UCBs, optimistic pseudo-rewards from the matching oracle, and the
//! truncated optimistic Q-table), then acts forward: the planner plays the
//! greedy action, the market implements the stable outcome for the estimated
//! utilities, and matched pairs report noisy utilities. Data is absorbed only
//! after the episode ends.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimation::{beta_u, beta_v, PlannerEstimator, QTable, UtilityEstimator};
use crate::evaluation::PolicySnapshot;
use crate::market::{MarketInstance, Observation, Side};
use crate::matching::{optimal_outcome, subset_instability, MarketOutcome, WeightMatrix, SI_CAP};

/// Whether realized Subset Instability is computed at every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiTracking {
    /// On when every roster fits under [`SI_CAP`].
    #[default]
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SomConfig {
    pub episodes: usize,
    pub lambda: f64,
    pub delta: f64,
    pub eta: f64,
    pub beta_scale_u: f64,
    pub beta_scale_v: f64,
    pub si_tracking: SiTracking,
    pub seed: u64,
}

impl Default for SomConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            lambda: 1.0,
            delta: 0.1,
            eta: 0.1,
            beta_scale_u: 1.0,
            beta_scale_v: 1.0,
            si_tracking: SiTracking::Auto,
            seed: 0,
        }
    }
}

impl SomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::invalid("episodes must be at least 1"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda {} must be positive",
                self.lambda
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!(
                "delta {} outside (0, 1)",
                self.delta
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("eta {} must be positive", self.eta)));
        }
        if !(self.beta_scale_u >= 0.0 && self.beta_scale_v >= 0.0) {
            return Err(Error::invalid("bonus scales must be nonnegative"));
        }
        Ok(())
    }
}

/// Estimated quantities for one step of one episode.
#[derive(Debug, Clone)]
pub struct StepTables {
    /// Optimistic utilities per `(C, e)` cell over roster positions.
    pub u_est: Vec<WeightMatrix>,
    pub v_est: Vec<WeightMatrix>,
    /// `||Phi||_{Sigma^{-1}}` per cell and roster pair.
    pub widths: Vec<WeightMatrix>,
    /// Optimistic pseudo-reward per cell.
    pub r_bar: Vec<f64>,
    /// Stable outcome for the estimated utilities per cell.
    pub outcomes: Vec<MarketOutcome>,
    pub q: QTable,
    /// False while the step has no data and utilities are the constant 1.
    pub from_regression: bool,
}

/// Output of the backward pass.
#[derive(Debug, Clone)]
pub struct EpisodeTables {
    pub episode: usize,
    pub num_actions: usize,
    pub steps: Vec<StepTables>,
}

impl EpisodeTables {
    /// The episode's policy: greedy planner actions and the outcome the
    /// market implements at each `(h, C)`.
    pub fn policy(&self) -> PolicySnapshot {
        let mut actions = Vec::with_capacity(self.steps.len());
        let mut outcomes = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            actions.push(step.q.greedy.clone());
            outcomes.push(
                step.q
                    .greedy
                    .iter()
                    .enumerate()
                    .map(|(c, &e)| step.outcomes[c * self.num_actions + e].clone())
                    .collect(),
            );
        }
        PolicySnapshot { actions, outcomes }
    }
}

/// What happened at one step of the forward pass.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub context: usize,
    pub action: usize,
    /// Outcome in roster positions.
    pub outcome: MarketOutcome,
    /// Observations in the order of `outcome.matching.pairs()`, pool ids.
    pub observations: Vec<Observation>,
    /// True welfare of the implemented matching.
    pub realized_welfare: f64,
    /// `sum over matched pairs of 2 beta_u ||Phi||_{Sigma^{-1}}`: the bonus
    /// added to both sides' utility estimates.
    pub bonus_sum: f64,
    pub realized_si: Option<f64>,
    pub next_context: usize,
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub episode: usize,
    pub steps: Vec<StepRecord>,
}

/// Per-step estimator states.
#[derive(Debug, Clone)]
pub struct Estimators {
    pub utility: Vec<UtilityEstimator>,
    pub planner: Vec<PlannerEstimator>,
}

/// A running instance of the algorithm on one market.
pub struct Som<'m> {
    market: &'m MarketInstance,
    config: SomConfig,
    estimators: Estimators,
    beta_u: f64,
    beta_v: f64,
    si_tracking: bool,
    /// `psi(C, e)` per cell.
    psi: Vec<Vec<f64>>,
    /// `Phi(C, e, i, j)` per step, cell and roster pair (row-major).
    pair_features: Vec<Vec<Vec<Vec<f64>>>>,
    next_episode: usize,
}

impl<'m> Som<'m> {
    pub fn new(market: &'m MarketInstance, config: SomConfig) -> Result<Self> {
        config.validate()?;
        let d = market.d();
        let fits_cap = (0..market.horizon()).all(|h| {
            let r = market.roster(h);
            r.first.len() <= SI_CAP && r.second.len() <= SI_CAP
        });
        let si_tracking = match config.si_tracking {
            SiTracking::Auto => fits_cap,
            SiTracking::On if !fits_cap => {
                return Err(Error::invalid(format!(
                    "SI tracking needs rosters of at most {SI_CAP} agents per side"
                )))
            }
            SiTracking::On => true,
            SiTracking::Off => false,
        };
        let beta_u = config.beta_scale_u
            * beta_u(
                config.delta,
                d,
                config.episodes,
                config.lambda,
                market.max_min_roster(),
            )?;
        let pools = market.pool_sizes();
        let beta_v = config.beta_scale_v
            * beta_v(
                config.eta,
                d,
                config.episodes,
                market.horizon(),
                pools[0].min(pools[1]),
                config.delta,
                market.welfare_to_go(0),
            )?;

        let (nc, na) = (market.num_contexts(), market.num_actions());
        let features = market.features();
        let psi = (0..nc * na)
            .map(|cell| features.psi(cell / na, cell % na).to_vec())
            .collect();
        let pair_features = (0..market.horizon())
            .map(|h| {
                let roster = market.roster(h);
                (0..nc * na)
                    .map(|cell| {
                        let mut grid = Vec::with_capacity(roster.first.len() * roster.second.len());
                        for &i in &roster.first {
                            for &j in &roster.second {
                                grid.push(features.pair_feature(cell / na, cell % na, i, j));
                            }
                        }
                        grid
                    })
                    .collect()
            })
            .collect();
        let estimators = Estimators {
            utility: (0..market.horizon())
                .map(|_| UtilityEstimator::new(d * d, config.lambda))
                .collect(),
            planner: (0..market.horizon())
                .map(|_| PlannerEstimator::new(d, nc, na, config.lambda))
                .collect(),
        };
        Ok(Self {
            market,
            config,
            estimators,
            beta_u,
            beta_v,
            si_tracking,
            psi,
            pair_features,
            next_episode: 1,
        })
    }

    pub fn market(&self) -> &MarketInstance {
        self.market
    }

    pub fn config(&self) -> &SomConfig {
        &self.config
    }

    /// Effective (scaled) utility bonus scale.
    pub fn beta_u(&self) -> f64 {
        self.beta_u
    }

    /// Effective (scaled) planner bonus scale.
    pub fn beta_v(&self) -> f64 {
        self.beta_v
    }

    pub fn si_tracking(&self) -> bool {
        self.si_tracking
    }

    pub fn estimators(&self) -> &Estimators {
        &self.estimators
    }

    pub fn into_estimators(self) -> Estimators {
        self.estimators
    }

    /// The 1-based index of the episode the next backward pass belongs to.
    pub fn next_episode(&self) -> usize {
        self.next_episode
    }

    /// `Phi` for roster positions `(a, b)` at `(h, cell)`.
    pub fn pair_feature(&self, h: usize, cell: usize, a: usize, b: usize) -> &[f64] {
        let cols = self.market.roster(h).second.len();
        &self.pair_features[h][cell][a * cols + b]
    }

    /// Estimates for every step from data of episodes `1..k-1`.
    pub fn backward_pass(&self) -> Result<EpisodeTables> {
        let market = self.market;
        let na = market.num_actions();
        let cells = market.num_contexts() * na;
        let mut v_next = vec![0.0; market.num_contexts()];
        let mut steps = Vec::with_capacity(market.horizon());
        for h in (0..market.horizon()).rev() {
            let estimator = &self.estimators.utility[h];
            let roster = market.roster(h);
            let (n, m) = (roster.first.len(), roster.second.len());
            let from_regression = estimator.has_data();
            let mut u_est = Vec::with_capacity(cells);
            let mut v_est = Vec::with_capacity(cells);
            let mut widths = Vec::with_capacity(cells);
            let mut r_bar = Vec::with_capacity(cells);
            let mut outcomes = Vec::with_capacity(cells);
            for cell in 0..cells {
                let grid = &self.pair_features[h][cell];
                let width = WeightMatrix::from_fn(n, m, |a, b| estimator.width(&grid[a * m + b]));
                let (u, v) = if from_regression {
                    let ucb = |side: Side| {
                        WeightMatrix::from_fn(n, m, |a, b| {
                            let phi = &grid[a * m + b];
                            (estimator.point_estimate(phi, side) + self.beta_u * width.get(a, b))
                                .clamp(-1.0, 1.0)
                        })
                    };
                    (ucb(Side::First), ucb(Side::Second))
                } else {
                    (
                        WeightMatrix::from_fn(n, m, |_, _| 1.0),
                        WeightMatrix::from_fn(n, m, |_, _| 1.0),
                    )
                };
                let (outcome, value) = optimal_outcome(&u, &v)?;
                u_est.push(u);
                v_est.push(v);
                widths.push(width);
                r_bar.push(value);
                outcomes.push(outcome);
            }
            let fit = self.estimators.planner[h].fit(
                &self.psi,
                &r_bar,
                &v_next,
                self.beta_v,
                market.welfare_to_go(h),
            )?;
            v_next = fit.table.v.clone();
            steps.push(StepTables {
                u_est,
                v_est,
                widths,
                r_bar,
                outcomes,
                q: fit.table,
                from_regression,
            });
        }
        steps.reverse();
        Ok(EpisodeTables {
            episode: self.next_episode,
            num_actions: na,
            steps,
        })
    }

    /// Plays one episode with fixed tables.
    pub fn forward_pass<R: Rng + ?Sized>(
        &self,
        tables: &EpisodeTables,
        rng: &mut R,
    ) -> Result<EpisodeTrace> {
        let market = self.market;
        let na = market.num_actions();
        let mut context = market.initial_context();
        let mut steps = Vec::with_capacity(market.horizon());
        for (h, step) in tables.steps.iter().enumerate() {
            let action = step.q.greedy[context];
            let cell = context * na + action;
            let outcome = step.outcomes[cell].clone();
            let roster = market.roster(h);
            let pool_pairs: Vec<(usize, usize)> = outcome
                .matching
                .pairs()
                .iter()
                .map(|&(a, b)| (roster.first[a], roster.second[b]))
                .collect();
            let observations = market.observe_utilities(h, context, action, &pool_pairs, rng)?;
            let (u, v) = market.utility_matrices(h, context, action);
            let realized_welfare = outcome
                .matching
                .pairs()
                .iter()
                .map(|&(a, b)| u.get(a, b) + v.get(a, b))
                .sum();
            let bonus_sum = outcome
                .matching
                .pairs()
                .iter()
                .map(|&(a, b)| 2.0 * self.beta_u * step.widths[cell].get(a, b))
                .sum();
            let realized_si = if self.si_tracking {
                Some(subset_instability(&outcome, &u, &v)?)
            } else {
                None
            };
            let next_context = market.sample_transition(h, context, action, rng)?;
            steps.push(StepRecord {
                context,
                action,
                outcome,
                observations,
                realized_welfare,
                bonus_sum,
                realized_si,
                next_context,
            });
            context = next_context;
        }
        Ok(EpisodeTrace {
            episode: tables.episode,
            steps,
        })
    }

    /// Adds an episode's data to the per-step datasets.
    pub fn absorb(&mut self, trace: &EpisodeTrace) -> Result<()> {
        if trace.episode != self.next_episode {
            return Err(Error::invalid(format!(
                "expected episode {}, got {}",
                self.next_episode, trace.episode
            )));
        }
        let na = self.market.num_actions();
        for (h, record) in trace.steps.iter().enumerate() {
            let cell = record.context * na + record.action;
            let cols = self.market.roster(h).second.len();
            let grid = &self.pair_features[h][cell];
            let data = record
                .outcome
                .matching
                .pairs()
                .iter()
                .zip(&record.observations)
                .map(|(&(a, b), obs)| (grid[a * cols + b].as_slice(), obs.u, obs.v));
            self.estimators.utility[h].ingest(data)?;
            self.estimators.planner[h].record(
                record.context,
                record.action,
                record.next_context,
                &self.psi[cell],
            )?;
        }
        self.next_episode += 1;
        Ok(())
    }

    /// Backward pass, forward pass and data update for one episode.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(EpisodeTables, EpisodeTrace)> {
        let tables = self.backward_pass()?;
        let trace = self.forward_pass(&tables, rng)?;
        self.absorb(&trace)?;
        Ok((tables, trace))
    }
}

/// The random stream used for simulation, derived from the run seed but
/// independent of the stream that generated the market.
pub fn simulation_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Runs `config.episodes` episodes and returns the traces in order.
pub fn run(market: &MarketInstance, config: &SomConfig) -> Result<(Vec<EpisodeTrace>, Estimators)> {
    let mut som = Som::new(market, config.clone())?;
    let mut rng = simulation_rng(config.seed);
    let mut traces = Vec::with_capacity(config.episodes);
    for _ in 0..config.episodes {
        let (_, trace) = som.step(&mut rng)?;
        traces.push(trace);
    }
    Ok((traces, som.into_estimators()))
}
