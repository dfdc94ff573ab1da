//! Offline replay of user arrivals.
//!
//! Users are shuffled and cut into batches. For each batch the fairness state
//! is computed once from the history window, the choice function assigns a
//! re-ranker (or none) to every user, the re-ranked slates are delivered, and
//! the batch enters the window.

use rayon::prelude::*;

use crate::catalog::{ItemCatalog, ProtectionTable, SensitiveSpec};
use crate::choice::{self, ChoiceFunction, Lottery};
use crate::error::{Error, Result};
use crate::fairness::{
    self, list_exposure, unfairness_vector, AbsoluteUnfairness, Delivery, FairnessMetric,
    HistoryWindow, RegretRecord,
};
use crate::profiles::{compute_tolerance, UserProfile};
use crate::recommender::{recommend, RecommendationList, ScoreModel};
use crate::rerank::{rerank, Reranker};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub seed: u64,
    pub batch_fraction: f64,
    pub window_batches: usize,
    pub display_length: usize,
    pub candidate_pool_size: usize,
    pub choice: ChoiceFunction,
    pub epsilon: f64,
    pub exclude_train: bool,
    /// Evaluate users of a batch on the rayon pool. Results do not depend
    /// on it.
    pub parallel: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_fraction: 0.005,
            window_batches: 20,
            display_length: 10,
            candidate_pool_size: 100,
            choice: ChoiceFunction::Fixed,
            epsilon: 0.05,
            exclude_train: true,
            parallel: true,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "simulation.batch_fraction = {} must lie in (0, 1]",
                self.batch_fraction
            )));
        }
        if self.window_batches == 0 {
            return Err(Error::Config(
                "simulation.window_batches must be at least 1".into(),
            ));
        }
        if self.display_length == 0 {
            return Err(Error::Config(
                "simulation.display_length must be at least 1".into(),
            ));
        }
        if self.candidate_pool_size < self.display_length {
            return Err(Error::Config(format!(
                "simulation.candidate_pool_size = {} is smaller than display_length = {}",
                self.candidate_pool_size, self.display_length
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "simulation.epsilon = {} must lie in (0, 1)",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Users per batch for a population of `n_users`.
    pub fn batch_size(&self, n_users: usize) -> usize {
        ((self.batch_fraction * n_users as f64 - 1e-9).ceil() as usize).max(1)
    }
}

/// One batch of the replay.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub batch_index: usize,
    pub users: usize,
    /// Window metric per feature after this batch was delivered.
    pub metrics: Vec<f64>,
    pub regret: Vec<f64>,
    pub average_regret: f64,
    /// Mean protected exposure of this batch's slates, per feature.
    pub exposure: Vec<f64>,
    /// Users re-ranked by each feature's re-ranker.
    pub selections: Vec<usize>,
    pub skipped: usize,
    /// Mean nDCG over users in the batch with a positive test rating.
    pub ndcg: f64,
    pub ndcg_users: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub choice: ChoiceFunction,
    pub features: Vec<String>,
    pub trace: Vec<TraceRow>,
    /// Mean nDCG over all users with a positive test rating.
    pub ndcg: f64,
    /// Mean protected exposure over all delivered lists, per feature.
    pub exposure: Vec<f64>,
    /// Mean of `exposure` across features.
    pub fairness: f64,
    pub regret_mean: f64,
    /// Population variance of the per-batch average regret.
    pub regret_variance: f64,
    pub selections: Vec<usize>,
    pub skipped: usize,
}

impl SimulationResult {
    pub fn regret_series(&self) -> Vec<RegretRecord> {
        self.trace
            .iter()
            .map(|r| RegretRecord {
                batch_index: r.batch_index,
                per_feature: r.regret.clone(),
                average: r.average_regret,
            })
            .collect()
    }
}

/// Mutable state carried between batches.
#[derive(Debug, Clone)]
pub struct RunState {
    pub choice: ChoiceFunction,
    pub window: HistoryWindow,
    pub batch_index: usize,
}

impl RunState {
    pub fn new(choice: ChoiceFunction, window_batches: usize) -> Result<Self> {
        Ok(Self {
            choice,
            window: HistoryWindow::new(window_batches)?,
            batch_index: 0,
        })
    }
}

/// Everything that stays fixed across runs on one dataset: candidate pools,
/// protection flags, re-rankers and user tolerances.
pub struct Simulation<'a> {
    config: SimulationConfig,
    catalog: &'a ItemCatalog,
    profiles: &'a [UserProfile],
    features: Vec<String>,
    table: ProtectionTable,
    rerankers: Vec<Reranker>,
    pools: Vec<RecommendationList>,
    /// Per user, per sensitive feature.
    tolerance: Vec<Vec<f64>>,
}

struct UserOutcome {
    delivery: Delivery,
    chosen: Option<usize>,
    exposure: Vec<f64>,
    ndcg: Option<f64>,
}

impl<'a> Simulation<'a> {
    pub fn new(
        config: SimulationConfig,
        profiles: &'a [UserProfile],
        catalog: &'a ItemCatalog,
        spec: &SensitiveSpec,
        model: &ScoreModel,
    ) -> Result<Self> {
        config.validate()?;
        if profiles.is_empty() {
            return Err(Error::InvalidArgument("no users to simulate".into()));
        }
        if !profiles.iter().any(|p| !p.test.is_empty()) {
            return Err(Error::InvalidArgument("no user has test ratings".into()));
        }
        if spec.is_empty() {
            return Err(Error::Config("no sensitive features configured".into()));
        }
        let rerankers = spec
            .entries()
            .iter()
            .enumerate()
            .map(|(j, e)| Reranker::new(j, e.lambda))
            .collect::<Result<Vec<_>>>()?;
        let features = spec.names();
        let build_pool = |p: &UserProfile| {
            recommend(
                model,
                catalog,
                p,
                config.candidate_pool_size,
                config.exclude_train,
            )
        };
        let pools: Vec<RecommendationList> = if config.parallel {
            profiles.par_iter().map(build_pool).collect()
        } else {
            profiles.iter().map(build_pool).collect()
        };
        let tolerance = profiles
            .iter()
            .map(|p| {
                features
                    .iter()
                    .map(|f| compute_tolerance(p, catalog, f))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            catalog,
            profiles,
            table: ProtectionTable::new(catalog, spec),
            features,
            rerankers,
            pools,
            tolerance,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn pools(&self) -> &[RecommendationList] {
        &self.pools
    }

    /// Shuffled user indices cut into batches.
    pub fn batches(&self) -> Vec<Vec<usize>> {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..self.profiles.len()).collect();
        order.shuffle(&mut rng::substream(self.config.seed, streams::SHUFFLE, 0));
        let size = self.config.batch_size(order.len());
        order.chunks(size).map(<[usize]>::to_vec).collect()
    }

    /// Runs the full replay with the configured choice function.
    pub fn run(&self) -> Result<SimulationResult> {
        self.run_with(self.config.choice)
    }

    /// Runs the full replay with `choice`, reusing the precomputed pools.
    pub fn run_with(&self, choice: ChoiceFunction) -> Result<SimulationResult> {
        let mut state = RunState::new(choice, self.config.window_batches)?;
        let mut trace = Vec::new();
        for batch in self.batches() {
            trace.push(self.step_batch(&mut state, &batch)?);
        }
        Ok(self.summarize(choice, trace))
    }

    /// Decides one lottery per user in the batch from a frozen view of the
    /// window.
    pub fn lotteries(&self, state: &RunState, batch: &[usize]) -> Result<Vec<Lottery>> {
        let n_features = self.features.len();
        let everyone = |l: Lottery| vec![l; batch.len()];
        if state.choice == ChoiceFunction::Base {
            return Ok(everyone(Lottery::Skip));
        }
        if state.window.is_empty() || state.choice == ChoiceFunction::Fixed {
            return Ok(everyone(choice::fixed_lottery(&vec![true; n_features])));
        }
        let metrics: Vec<f64> = (0..n_features)
            .map(|j| {
                AbsoluteUnfairness {
                    table: &self.table,
                    feature: j,
                }
                .evaluate(&state.window)
                .expect("window is non-empty")
            })
            .collect();
        let fs = unfairness_vector(&metrics, self.config.epsilon)?;
        Ok(match state.choice {
            ChoiceFunction::LeastMisery => everyone(match choice::least_misery(&fs) {
                Some(j) => {
                    let mut w = vec![0.0; n_features];
                    w[j] = 1.0;
                    Lottery::Weights(w)
                }
                None => Lottery::Skip,
            }),
            ChoiceFunction::Dynamic => everyone(choice::dynamic_lottery(&fs)),
            ChoiceFunction::Allocation => {
                let prefs: Vec<Vec<usize>> = batch
                    .iter()
                    .map(|&u| {
                        let mut rng = rng::substream(self.config.seed, streams::TIES, u as u64);
                        crate::profiles::order_by_tolerance(&self.tolerance[u], &mut rng)
                    })
                    .collect();
                choice::allocation_lottery(&fs, &prefs)?
            }
            ChoiceFunction::Base | ChoiceFunction::Fixed => unreachable!(),
        })
    }

    /// Serves one batch and appends it to the window.
    pub fn step_batch(&self, state: &mut RunState, batch: &[usize]) -> Result<TraceRow> {
        let lotteries = self.lotteries(state, batch)?;
        let serve = |(pos, &u): (usize, &usize)| self.serve(u, &lotteries[pos]);
        let outcomes: Vec<UserOutcome> = if self.config.parallel {
            batch.par_iter().enumerate().map(serve).collect()
        } else {
            batch.iter().enumerate().map(serve).collect()
        };

        let n_features = self.features.len();
        let mut selections = vec![0usize; n_features];
        let mut skipped = 0;
        let mut exposure = vec![0.0; n_features];
        let (mut ndcg_sum, mut ndcg_users) = (0.0, 0usize);
        for o in &outcomes {
            match o.chosen {
                Some(j) => selections[j] += 1,
                None => skipped += 1,
            }
            for (acc, e) in exposure.iter_mut().zip(&o.exposure) {
                *acc += e;
            }
            if let Some(v) = o.ndcg {
                ndcg_sum += v;
                ndcg_users += 1;
            }
        }
        let users = outcomes.len();
        if users > 0 {
            exposure.iter_mut().for_each(|e| *e /= users as f64);
        }
        state
            .window
            .push_batch(outcomes.into_iter().map(|o| o.delivery).collect());
        let metrics: Vec<f64> = (0..n_features)
            .map(|j| {
                AbsoluteUnfairness {
                    table: &self.table,
                    feature: j,
                }
                .evaluate(&state.window)
                .unwrap_or(0.0)
            })
            .collect();
        let regret = RegretRecord::from_metrics(state.batch_index, &metrics);
        let row = TraceRow {
            batch_index: state.batch_index,
            users,
            metrics,
            regret: regret.per_feature,
            average_regret: regret.average,
            exposure,
            selections,
            skipped,
            ndcg: if ndcg_users > 0 {
                ndcg_sum / ndcg_users as f64
            } else {
                0.0
            },
            ndcg_users,
        };
        state.batch_index += 1;
        Ok(row)
    }

    fn serve(&self, user: usize, lottery: &Lottery) -> UserOutcome {
        let mut rng = rng::substream(self.config.seed, streams::SAMPLING, user as u64);
        let chosen = choice::sample(lottery, &mut rng);
        let pool = &self.pools[user];
        let k = self.config.display_length;
        let slate = match chosen {
            Some(j) => rerank(&self.rerankers[j], pool, &self.table, k),
            None => pool.truncated(k),
        };
        let exposure = (0..self.features.len())
            .map(|j| list_exposure(&slate, &self.table, j))
            .collect();
        let profile = &self.profiles[user];
        let ndcg = profile
            .test
            .iter()
            .any(|r| r.value > 0.0)
            .then(|| fairness::ndcg(&slate, &profile.test, self.catalog, k));
        UserOutcome {
            delivery: Delivery {
                user: profile.user_id.clone(),
                list: slate,
            },
            chosen,
            exposure,
            ndcg,
        }
    }

    fn summarize(&self, choice: ChoiceFunction, trace: Vec<TraceRow>) -> SimulationResult {
        let n_features = self.features.len();
        let total_users: usize = trace.iter().map(|r| r.users).sum();
        let mut exposure = vec![0.0; n_features];
        let mut selections = vec![0usize; n_features];
        let mut skipped = 0;
        let (mut ndcg_sum, mut ndcg_users) = (0.0, 0usize);
        for r in &trace {
            for j in 0..n_features {
                exposure[j] += r.exposure[j] * r.users as f64;
                selections[j] += r.selections[j];
            }
            skipped += r.skipped;
            ndcg_sum += r.ndcg * r.ndcg_users as f64;
            ndcg_users += r.ndcg_users;
        }
        exposure
            .iter_mut()
            .for_each(|e| *e /= total_users.max(1) as f64);
        let fairness = exposure.iter().sum::<f64>() / n_features as f64;
        let (regret_mean, regret_variance) = if trace.is_empty() {
            (0.0, 0.0)
        } else {
            fairness::mean_variance(trace.iter().map(|r| r.average_regret))
        };
        SimulationResult {
            choice,
            features: self.features.clone(),
            trace,
            ndcg: if ndcg_users > 0 {
                ndcg_sum / ndcg_users as f64
            } else {
                0.0
            },
            exposure,
            fairness,
            regret_mean,
            regret_variance,
            selections,
            skipped,
        }
    }
}

/// Builds a [`Simulation`] and runs the configured choice function.
pub fn run(
    config: &SimulationConfig,
    profiles: &[UserProfile],
    catalog: &ItemCatalog,
    spec: &SensitiveSpec,
    model: &ScoreModel,
) -> Result<SimulationResult> {
    Simulation::new(config.clone(), profiles, catalog, spec, model)?.run()
}
