//! The active-learning round: reset the learner, train while recording pool
//! switch events, evaluate every test split, query a batch, and move it from
//! the pool into the training set.

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetBundle, Sample};
use crate::events::{self, EventError, EventLedger, SampleId};
use crate::learner::{Learner, LearnerConfig, LearnerError, Mlp, Standardizer, TrainReport};
use crate::seed;
use crate::strategies::{QueryBatch, Strategy, StrategyContext, StrategyError, StrategyKind};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: `{field}` {reason}")]
    Config { field: &'static str, reason: String },
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Events(#[from] EventError),
    #[error("strategy {strategy} failed in round {round}: {source}")]
    Strategy {
        strategy: StrategyKind,
        round: usize,
        source: StrategyError,
    },
    #[error("pool has {pool} samples, fewer than the batch size {b}")]
    PoolExhausted { pool: usize, b: usize },
    #[error("experiment already ran all {0} rounds")]
    Finished(usize),
}

fn config_err(field: &'static str, reason: impl Into<String>) -> ExperimentError {
    ExperimentError::Config {
        field,
        reason: reason.into(),
    }
}

/// Round bookkeeping shared by every cell of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub initial_pool_size: usize,
    pub query_batch: usize,
    /// Number of rounds; each round trains, evaluates and then queries, so
    /// records cover rounds `0..rounds`.
    pub rounds: usize,
    pub seeds: usize,
    pub diagnostic_events: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            initial_pool_size: 128,
            query_batch: 1024,
            rounds: 20,
            seeds: 5,
            diagnostic_events: false,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self, pool_size: usize) -> Result<(), ExperimentError> {
        if self.initial_pool_size < 1 {
            return Err(config_err("initial_pool_size", "must be at least 1"));
        }
        if self.query_batch < 1 {
            return Err(config_err("query_batch", "must be at least 1"));
        }
        if self.seeds < 1 {
            return Err(config_err("seeds", "must be at least 1"));
        }
        let needed = self
            .rounds
            .checked_mul(self.query_batch)
            .and_then(|q| q.checked_add(self.initial_pool_size));
        match needed {
            Some(n) if n <= pool_size => Ok(()),
            _ => Err(config_err(
                "rounds",
                format!(
                    "initial_pool_size + rounds * query_batch = {} + {} * {} exceeds the pool of {pool_size}",
                    self.initial_pool_size, self.rounds, self.query_batch
                ),
            )),
        }
    }
}

/// One grid cell: a strategy under one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment_seed: u64,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub loop_config: LoopConfig,
    pub learner: LearnerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub experiment_seed: u64,
    pub strategies: Vec<StrategyKind>,
    pub loop_config: LoopConfig,
    pub learner: LearnerConfig,
}

impl GridConfig {
    /// Cartesian product of strategies and seeds `0..seeds`.
    pub fn cells(&self) -> Vec<ExperimentConfig> {
        self.strategies
            .iter()
            .flat_map(|&strategy| {
                (0..self.loop_config.seeds as u64).map(move |seed| ExperimentConfig {
                    experiment_seed: self.experiment_seed,
                    strategy,
                    seed,
                    loop_config: self.loop_config.clone(),
                    learner: self.learner.clone(),
                })
            })
            .collect()
    }
}

/// Accuracy of one strategy/seed/round on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub round: usize,
    pub split: String,
    /// Fraction in [0, 1].
    pub accuracy: f64,
    pub epochs_run: usize,
    pub reached_threshold: bool,
}

impl RunRecord {
    pub fn sort_key(&self) -> (&'static str, u64, usize, &str) {
        (self.strategy.name(), self.seed, self.round, &self.split)
    }
}

pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// A dataset standardized with statistics of its unlabeled pool.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub pool: Vec<Sample>,
    pub eval: Vec<(String, Vec<Sample>)>,
    pub dim: usize,
    pub classes: usize,
    pub standardizer: Standardizer,
}

impl PreparedData {
    pub fn new(bundle: &DatasetBundle) -> Self {
        let standardizer = Standardizer::fit(&bundle.train_pool);
        let pool = bundle.train_pool.iter().map(|s| standardizer.apply(s)).collect();
        let eval = bundle
            .eval_splits()
            .into_iter()
            .filter(|(_, samples)| !samples.is_empty())
            .map(|(name, samples)| (name, samples.iter().map(|s| standardizer.apply(s)).collect()))
            .collect();
        Self {
            pool,
            eval,
            dim: bundle.dim,
            classes: bundle.num_classes,
            standardizer,
        }
    }
}

/// Labeled/unlabeled partition of the training pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    train_ids: Vec<SampleId>,
    pool_ids: Vec<SampleId>,
    total: usize,
}

impl PoolState {
    pub fn new(total: usize, initial: &[SampleId]) -> Self {
        let chosen: BTreeSet<SampleId> = initial.iter().copied().collect();
        Self {
            train_ids: initial.to_vec(),
            pool_ids: (0..total).map(SampleId).filter(|id| !chosen.contains(id)).collect(),
            total,
        }
    }

    pub fn train_ids(&self) -> &[SampleId] {
        &self.train_ids
    }

    /// Unlabeled ids in ascending order.
    pub fn pool_ids(&self) -> &[SampleId] {
        &self.pool_ids
    }

    pub fn total(&self) -> usize {
        self.total
    }

    fn move_to_train(&mut self, ids: &[SampleId]) -> Result<(), EventError> {
        self.pool_ids = events::remove_queried(&self.pool_ids, ids)?;
        self.train_ids.extend_from_slice(ids);
        Ok(())
    }
}

/// Hooks into a running experiment. All methods default to no-ops.
pub trait RoundObserver {
    /// Called right after the learner is reset, before training.
    fn on_round_start(&mut self, _round: usize, _learner: &dyn Learner, _pool: &PoolState) {}
    /// Called once training finished with the round's complete ledger.
    fn on_ledger(&mut self, _round: usize, _ledger: &EventLedger) {}
}

pub struct NoopObserver;

impl RoundObserver for NoopObserver {}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub round: usize,
    pub records: Vec<RunRecord>,
    pub train_report: TrainReport,
    pub queried: QueryBatch,
}

pub struct Experiment {
    config: ExperimentConfig,
    data: Arc<PreparedData>,
    pool: PoolState,
    learner: Box<dyn Learner>,
    strategy: Strategy,
    round: usize,
}

impl Experiment {
    /// Draws the initial labeled set and constructs the learner. Streams that
    /// shape the initial split, the initial weights and the mini-batch order
    /// ignore the strategy, so every strategy under the same seed starts from
    /// the same round-0 model.
    pub fn new(config: ExperimentConfig, data: Arc<PreparedData>) -> Result<Self, ExperimentError> {
        config.loop_config.validate(data.pool.len())?;
        let mut learner_config = config.learner.clone();
        learner_config.init_seed = seed::derive_seed(config.experiment_seed, "learner-init", &[config.seed]);
        let learner = Mlp::new(learner_config, data.dim, data.classes)?;
        Self::with_learner(config, data, Box::new(learner))
    }

    pub fn with_learner(
        config: ExperimentConfig,
        data: Arc<PreparedData>,
        learner: Box<dyn Learner>,
    ) -> Result<Self, ExperimentError> {
        config.loop_config.validate(data.pool.len())?;
        if learner.dim() != data.dim {
            return Err(config_err(
                "learner",
                format!("expects dim {}, data has {}", learner.dim(), data.dim),
            ));
        }
        let mut rng = seed::stream(config.experiment_seed, "initial-split", &[config.seed]);
        let initial: Vec<SampleId> =
            rand::seq::index::sample(&mut rng, data.pool.len(), config.loop_config.initial_pool_size)
                .into_iter()
                .map(SampleId)
                .collect();
        let pool = PoolState::new(data.pool.len(), &initial);
        Ok(Self {
            strategy: Strategy::new(config.strategy),
            config,
            data,
            pool,
            learner,
            round: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn pool(&self) -> &PoolState {
        &self.pool
    }

    pub fn learner(&self) -> &dyn Learner {
        self.learner.as_ref()
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn is_finished(&self) -> bool {
        self.round >= self.config.loop_config.rounds
    }

    /// Runs one round. On a strategy failure the pool and strategy state are
    /// left as they were before the round.
    pub fn run_round(&mut self, observer: &mut dyn RoundObserver) -> Result<RoundOutcome, ExperimentError> {
        if self.is_finished() {
            return Err(ExperimentError::Finished(self.config.loop_config.rounds));
        }
        let b = self.config.loop_config.query_batch;
        let round = self.round;
        let data = Arc::clone(&self.data);
        let pool_ids = self.pool.pool_ids().to_vec();
        if pool_ids.len() < b {
            return Err(ExperimentError::PoolExhausted {
                pool: pool_ids.len(),
                b,
            });
        }

        self.learner.reset_to_snapshot();
        observer.on_round_start(round, self.learner.as_ref(), &self.pool);

        let diagnostic = self.config.loop_config.diagnostic_events;
        let mut ledger = EventLedger::new_round(&pool_ids, diagnostic)?;
        let hidden_labels: Option<Vec<usize>> =
            diagnostic.then(|| pool_ids.iter().map(|id| data.pool[id.0].label).collect());
        let train: Vec<&Sample> = self.pool.train_ids().iter().map(|id| &data.pool[id.0]).collect();
        let pool_view = features(&data, &pool_ids);
        let order_seed = seed::derive_seed(
            self.config.experiment_seed,
            "minibatch-order",
            &[self.config.seed, round as u64],
        );
        let mut ledger_error = None;
        let report = self
            .learner
            .train_until(&train, &pool_view, order_seed, &mut |_, preds| {
                if ledger_error.is_none() {
                    if let Err(e) = ledger.record_epoch(preds, hidden_labels.as_deref()) {
                        ledger_error = Some(e);
                    }
                }
            })?;
        if let Some(e) = ledger_error {
            return Err(e.into());
        }
        observer.on_ledger(round, &ledger);

        let mut records = Vec::with_capacity(self.data.eval.len());
        let mut id_accuracy = None;
        for (split, samples) in &data.eval {
            let xs: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
            let preds = self.learner.predict(&xs)?;
            let correct = preds.iter().zip(samples).filter(|(p, s)| **p == s.label).count();
            let accuracy = correct as f64 / samples.len() as f64;
            if split == crate::dataset::TEST_ID {
                id_accuracy = Some(accuracy);
            }
            records.push(RunRecord {
                strategy: self.config.strategy,
                seed: self.config.seed,
                round,
                split: split.clone(),
                accuracy,
                epochs_run: report.epochs_run,
                reached_threshold: report.reached_threshold,
            });
        }

        let previous_strategy = self.strategy.clone();
        if let Some(acc) = id_accuracy {
            self.strategy.observe_accuracy(acc);
        }
        let queried = match self.query(&pool_ids, &pool_view, &ledger, round) {
            Ok(q) => q,
            Err(e) => {
                self.strategy = previous_strategy;
                return Err(e);
            }
        };
        // labels of the queried ids are revealed by moving them into D_train
        if let Err(e) = self.pool.move_to_train(&queried.ids) {
            self.strategy = previous_strategy;
            return Err(e.into());
        }
        self.round += 1;
        Ok(RoundOutcome {
            round,
            records,
            train_report: report,
            queried,
        })
    }

    fn query(
        &mut self,
        pool_ids: &[SampleId],
        pool_view: &[&[f64]],
        ledger: &EventLedger,
        round: usize,
    ) -> Result<QueryBatch, ExperimentError> {
        let needs = self.strategy.needs();
        let probabilities = if needs.probabilities {
            Some(self.learner.predict_proba(pool_view)?)
        } else {
            None
        };
        let (pool_embeddings, labeled_embeddings) = if needs.embeddings {
            let labeled = features(&self.data, self.pool.train_ids());
            (
                Some(self.learner.embed(pool_view)?),
                Some(self.learner.embed(&labeled)?),
            )
        } else {
            (None, None)
        };
        let strategy_seed = seed::derive_seed(
            self.config.experiment_seed,
            "strategy",
            &[self.config.strategy as u64, self.config.seed, round as u64],
        );
        let ctx = StrategyContext {
            pool_ids,
            switch_counts: needs.switch_counts.then(|| ledger.switch_counts()),
            probabilities: probabilities.as_deref(),
            pool_embeddings: pool_embeddings.as_deref(),
            labeled_embeddings: labeled_embeddings.as_deref(),
            round,
            seed: strategy_seed,
        };
        let strategy = self.config.strategy;
        self.strategy
            .select(&ctx, self.config.loop_config.query_batch)
            .map_err(|source| ExperimentError::Strategy {
                strategy,
                round,
                source,
            })
    }

    /// Runs every remaining round and returns the records in round order.
    pub fn run(&mut self, observer: &mut dyn RoundObserver) -> Result<Vec<RunRecord>, ExperimentError> {
        let mut records = Vec::new();
        while !self.is_finished() {
            records.extend(self.run_round(observer)?.records);
        }
        Ok(records)
    }
}

fn features<'a>(data: &'a PreparedData, ids: &[SampleId]) -> Vec<&'a [f64]> {
    ids.iter().map(|id| data.pool[id.0].features.as_slice()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellStatus {
    Completed,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub status: CellStatus,
    pub records: Vec<RunRecord>,
}

/// Per-cell hooks for [`run_grid`]. Called from worker threads.
pub trait GridHooks: Sync {
    fn observer(&self, _cell: &ExperimentConfig) -> Box<dyn RoundObserver> {
        Box::new(NoopObserver)
    }

    fn on_cell_done(&self, _result: &CellResult) {}
}

pub struct NoHooks;

impl GridHooks for NoHooks {}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    /// Sorted by (strategy, seed, round, split).
    pub records: Vec<RunRecord>,
    /// In input cell order.
    pub cells: Vec<CellResult>,
}

impl GridOutcome {
    pub fn all_completed(&self) -> bool {
        self.cells.iter().all(|c| c.status == CellStatus::Completed)
    }
}

fn run_cell(cell: ExperimentConfig, data: Arc<PreparedData>, hooks: &dyn GridHooks) -> CellResult {
    let (strategy, seed) = (cell.strategy, cell.seed);
    let mut observer = hooks.observer(&cell);
    let outcome = Experiment::new(cell, data).and_then(|mut e| e.run(observer.as_mut()));
    let result = match outcome {
        Ok(records) => CellResult {
            strategy,
            seed,
            status: CellStatus::Completed,
            records,
        },
        Err(e) => CellResult {
            strategy,
            seed,
            status: CellStatus::Failed(e.to_string()),
            records: Vec::new(),
        },
    };
    hooks.on_cell_done(&result);
    result
}

/// Runs every cell on `workers` threads. A failing cell is reported in its
/// status and contributes no records; the rest still run.
pub fn run_grid(
    cells: &[ExperimentConfig],
    data: Arc<PreparedData>,
    workers: usize,
    hooks: &dyn GridHooks,
) -> GridOutcome {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("failed to build worker pool");
    let results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(cell.clone(), Arc::clone(&data), hooks))
            .collect()
    });
    let mut records: Vec<RunRecord> = results.iter().flat_map(|c| c.records.iter().cloned()).collect();
    sort_records(&mut records);
    GridOutcome {
        records,
        cells: results,
    }
}
