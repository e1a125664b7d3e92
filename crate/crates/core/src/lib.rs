//! Pool-based active learning simulation.
//!
//! The experiment loop trains a small classifier each round from a fixed
//! initial snapshot, records how often each unlabeled pool sample's predicted
//! label switches between consecutive epochs, and queries a batch through one
//! of six strategies:
//!
//! - `false`: the samples with the most switch events this round
//! - `random`, `entropy`, `least_confidence`
//! - `coreset`: greedy k-center in the hidden-layer embedding
//! - `albl`: an EXP3 bandit choosing between coreset and least confidence
//!
//! Curves are averaged over seeds and summarised as the area under the
//! difference curve against random selection.

pub mod dataset;
pub mod events;
pub mod experiment;
pub mod learner;
pub mod metrics;
pub mod seed;
pub mod strategies;

pub use dataset::{CorruptionKind, CorruptionSpec, DatasetBundle, DatasetConfig, Family, Sample};
pub use events::{EventLedger, SampleId};
pub use experiment::{Experiment, ExperimentConfig, GridConfig, LoopConfig, PreparedData, RunRecord};
pub use learner::{Learner, LearnerConfig, Mlp, TrainReport};
pub use strategies::{QueryBatch, Strategy, StrategyContext, StrategyKind};
