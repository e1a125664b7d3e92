//! Query strategies. Each maps one round's artifacts to a batch of `b`
//! distinct pool ids. Ties are always broken by ascending pool id.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::events::SampleId;
use crate::seed;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StrategyError {
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error("batch size {b} exceeds pool size {pool}")]
    BatchTooLarge { b: usize, pool: usize },
    #[error("strategy needs {0} but the context has none")]
    MissingInput(&'static str),
    #[error("{what} has {found} rows but the pool has {expected}")]
    Misaligned {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("coreset selection needs a nonempty labeled set")]
    EmptyLabeledSet,
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StrategyKind {
    False,
    Random,
    Entropy,
    LeastConfidence,
    Coreset,
    Albl,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        Self::False,
        Self::Random,
        Self::Entropy,
        Self::LeastConfidence,
        Self::Coreset,
        Self::Albl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::False => "false",
            Self::Random => "random",
            Self::Entropy => "entropy",
            Self::LeastConfidence => "least_confidence",
            Self::Coreset => "coreset",
            Self::Albl => "albl",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = StrategyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| StrategyError::UnknownStrategy(s.to_string()))
    }
}

impl TryFrom<String> for StrategyKind {
    type Error = StrategyError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<StrategyKind> for String {
    fn from(k: StrategyKind) -> String {
        k.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    pub ids: Vec<SampleId>,
    pub scores: Option<Vec<f64>>,
}

/// Everything a strategy may look at. Views are aligned with `pool_ids`;
/// there is deliberately no field for pool labels.
#[derive(Debug, Clone, Copy)]
pub struct StrategyContext<'a> {
    pub pool_ids: &'a [SampleId],
    pub switch_counts: Option<&'a [u32]>,
    pub probabilities: Option<&'a [Vec<f64>]>,
    pub pool_embeddings: Option<&'a [Vec<f64>]>,
    pub labeled_embeddings: Option<&'a [Vec<f64>]>,
    pub round: usize,
    pub seed: u64,
}

impl<'a> StrategyContext<'a> {
    pub fn new(pool_ids: &'a [SampleId], round: usize, seed: u64) -> Self {
        Self {
            pool_ids,
            switch_counts: None,
            probabilities: None,
            pool_embeddings: None,
            labeled_embeddings: None,
            round,
            seed,
        }
    }

    fn check_batch(&self, b: usize) -> Result<(), StrategyError> {
        if b == 0 {
            return Err(StrategyError::EmptyBatch);
        }
        if b > self.pool_ids.len() {
            return Err(StrategyError::BatchTooLarge {
                b,
                pool: self.pool_ids.len(),
            });
        }
        Ok(())
    }

    fn aligned<T>(&self, what: &'static str, view: Option<&'a [T]>) -> Result<&'a [T], StrategyError> {
        let view = view.ok_or(StrategyError::MissingInput(what))?;
        if view.len() != self.pool_ids.len() {
            return Err(StrategyError::Misaligned {
                what,
                expected: self.pool_ids.len(),
                found: view.len(),
            });
        }
        Ok(view)
    }
}

/// Picks the `b` highest scores; equal scores go to the smaller id.
pub fn top_b(ids: &[SampleId], scores: &[f64], b: usize) -> QueryBatch {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then(ids[x].cmp(&ids[y])));
    order.truncate(b);
    QueryBatch {
        ids: order.iter().map(|&i| ids[i]).collect(),
        scores: Some(order.iter().map(|&i| scores[i]).collect()),
    }
}

pub fn entropy_score(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

pub fn least_confidence_score(p: &[f64]) -> f64 {
    1.0 - p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// The `b` pool samples with the most switch events this round.
pub fn select_false(ctx: &StrategyContext<'_>, b: usize) -> Result<QueryBatch, StrategyError> {
    ctx.check_batch(b)?;
    let counts = ctx.aligned("switch counts", ctx.switch_counts)?;
    let scores: Vec<f64> = counts.iter().map(|&c| f64::from(c)).collect();
    Ok(top_b(ctx.pool_ids, &scores, b))
}

/// Uniform sample without replacement, seeded by `ctx.seed`.
pub fn select_random(ctx: &StrategyContext<'_>, b: usize) -> Result<QueryBatch, StrategyError> {
    ctx.check_batch(b)?;
    let mut rng = seed::stream(ctx.seed, "random-query", &[]);
    let picked = rand::seq::index::sample(&mut rng, ctx.pool_ids.len(), b);
    Ok(QueryBatch {
        ids: picked.iter().map(|i| ctx.pool_ids[i]).collect(),
        scores: None,
    })
}

fn select_by_probability(
    ctx: &StrategyContext<'_>,
    b: usize,
    score: fn(&[f64]) -> f64,
) -> Result<QueryBatch, StrategyError> {
    ctx.check_batch(b)?;
    let probs = ctx.aligned("probabilities", ctx.probabilities)?;
    let scores: Vec<f64> = probs.iter().map(|p| score(p)).collect();
    Ok(top_b(ctx.pool_ids, &scores, b))
}

pub fn select_entropy(ctx: &StrategyContext<'_>, b: usize) -> Result<QueryBatch, StrategyError> {
    select_by_probability(ctx, b, entropy_score)
}

pub fn select_least_confidence(ctx: &StrategyContext<'_>, b: usize) -> Result<QueryBatch, StrategyError> {
    select_by_probability(ctx, b, least_confidence_score)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Greedy k-center: repeatedly take the pool point farthest from its nearest
/// covered point (labeled set plus earlier picks).
pub fn select_coreset(ctx: &StrategyContext<'_>, b: usize) -> Result<QueryBatch, StrategyError> {
    let labeled = ctx
        .labeled_embeddings
        .ok_or(StrategyError::MissingInput("labeled embeddings"))?;
    if labeled.is_empty() {
        return Err(StrategyError::EmptyLabeledSet);
    }
    ctx.check_batch(b)?;
    let pool = ctx.aligned("pool embeddings", ctx.pool_embeddings)?;
    let mut nearest: Vec<f64> = pool
        .iter()
        .map(|p| labeled.iter().map(|l| euclidean(p, l)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut taken = vec![false; pool.len()];
    let mut ids = Vec::with_capacity(b);
    let mut scores = Vec::with_capacity(b);
    for _ in 0..b {
        let mut best: Option<usize> = None;
        for i in 0..pool.len() {
            if taken[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(j) => match nearest[i].total_cmp(&nearest[j]) {
                    Ordering::Greater => Some(i),
                    Ordering::Equal if ctx.pool_ids[i] < ctx.pool_ids[j] => Some(i),
                    _ => Some(j),
                },
            };
        }
        let pick = best.expect("b <= pool size");
        taken[pick] = true;
        ids.push(ctx.pool_ids[pick]);
        scores.push(nearest[pick]);
        for (i, p) in pool.iter().enumerate() {
            nearest[i] = nearest[i].min(euclidean(p, &pool[pick]));
        }
    }
    Ok(QueryBatch {
        ids,
        scores: Some(scores),
    })
}

/// EXP3 over a fixed set of arms.
#[derive(Debug, Clone, PartialEq)]
pub struct Exp3 {
    weights: Vec<f64>,
    gamma: f64,
}

impl Exp3 {
    pub fn new(arms: usize, gamma: f64) -> Self {
        assert!(arms >= 1, "EXP3 needs at least one arm");
        assert!((0.0..=1.0).contains(&gamma), "gamma {gamma} outside [0, 1]");
        Self {
            weights: vec![1.0; arms],
            gamma,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let k = self.weights.len() as f64;
        let total: f64 = self.weights.iter().sum();
        self.weights
            .iter()
            .map(|w| (1.0 - self.gamma) * w / total + self.gamma / k)
            .collect()
    }

    /// Maps a uniform draw `u ∈ [0, 1)` to an arm by inverse CDF.
    pub fn draw(&self, u: f64) -> usize {
        let probs = self.probabilities();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    /// Importance-weighted update of the pulled arm; `reward` must be in [0, 1].
    pub fn update(&mut self, arm: usize, reward: f64) {
        assert!((0.0..=1.0).contains(&reward), "reward {reward} outside [0, 1]");
        let p = self.probabilities()[arm];
        let k = self.weights.len() as f64;
        self.weights[arm] *= (self.gamma * (reward / p) / k).exp();
        // probabilities are scale-free; keep weights representable
        let max = self.weights.iter().copied().fold(0.0, f64::max);
        if max > 1e100 {
            self.weights.iter_mut().for_each(|w| *w /= max);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlblArm {
    Coreset,
    LeastConfidence,
}

/// Active learning by learning, as a two-armed EXP3 bandit choosing between
/// coreset and least-confidence each round. The reward for the arm pulled in
/// round `N` is `(acc(N+1) - acc(N) + 1) / 2` on the in-distribution test
/// split.
#[derive(Debug, Clone, PartialEq)]
pub struct Albl {
    arms: Vec<AlblArm>,
    bandit: Exp3,
    pending: Option<usize>,
    last_accuracy: Option<f64>,
}

impl Albl {
    pub const GAMMA: f64 = 0.1;

    pub fn new() -> Self {
        Self::with_arms(vec![AlblArm::Coreset, AlblArm::LeastConfidence])
    }

    pub fn with_arms(arms: Vec<AlblArm>) -> Self {
        let bandit = Exp3::new(arms.len(), Self::GAMMA);
        Self {
            arms,
            bandit,
            pending: None,
            last_accuracy: None,
        }
    }

    pub fn bandit(&self) -> &Exp3 {
        &self.bandit
    }

    pub fn pending_arm(&self) -> Option<AlblArm> {
        self.pending.map(|i| self.arms[i])
    }

    /// Feeds this round's in-distribution accuracy (fraction in [0, 1]).
    pub fn observe_accuracy(&mut self, accuracy: f64) {
        if let (Some(arm), Some(prev)) = (self.pending.take(), self.last_accuracy) {
            let reward = ((accuracy - prev + 1.0) / 2.0).clamp(0.0, 1.0);
            self.bandit.update(arm, reward);
        }
        self.last_accuracy = Some(accuracy);
    }

    pub fn select(&mut self, ctx: &StrategyContext<'_>, b: usize) -> Result<QueryBatch, StrategyError> {
        let u: f64 = seed::stream(ctx.seed, "albl-arm", &[]).random();
        let arm = self.bandit.draw(u);
        let batch = match self.arms[arm] {
            AlblArm::Coreset => select_coreset(ctx, b)?,
            AlblArm::LeastConfidence => select_least_confidence(ctx, b)?,
        };
        self.pending = Some(arm);
        Ok(batch)
    }
}

impl Default for Albl {
    fn default() -> Self {
        Self::new()
    }
}

/// A strategy instance with whatever state it carries across rounds.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    False,
    Random,
    Entropy,
    LeastConfidence,
    Coreset,
    Albl(Albl),
}

/// Which round artifacts a strategy reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Needs {
    pub switch_counts: bool,
    pub probabilities: bool,
    pub embeddings: bool,
}

impl Strategy {
    pub fn new(kind: StrategyKind) -> Self {
        match kind {
            StrategyKind::False => Self::False,
            StrategyKind::Random => Self::Random,
            StrategyKind::Entropy => Self::Entropy,
            StrategyKind::LeastConfidence => Self::LeastConfidence,
            StrategyKind::Coreset => Self::Coreset,
            StrategyKind::Albl => Self::Albl(Albl::new()),
        }
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            Self::False => StrategyKind::False,
            Self::Random => StrategyKind::Random,
            Self::Entropy => StrategyKind::Entropy,
            Self::LeastConfidence => StrategyKind::LeastConfidence,
            Self::Coreset => StrategyKind::Coreset,
            Self::Albl(_) => StrategyKind::Albl,
        }
    }

    pub fn needs(&self) -> Needs {
        match self {
            Self::False => Needs {
                switch_counts: true,
                ..Needs::default()
            },
            Self::Random => Needs::default(),
            Self::Entropy | Self::LeastConfidence => Needs {
                probabilities: true,
                ..Needs::default()
            },
            Self::Coreset => Needs {
                embeddings: true,
                ..Needs::default()
            },
            Self::Albl(_) => Needs {
                probabilities: true,
                embeddings: true,
                ..Needs::default()
            },
        }
    }

    pub fn observe_accuracy(&mut self, accuracy: f64) {
        if let Self::Albl(albl) = self {
            albl.observe_accuracy(accuracy);
        }
    }

    pub fn select(&mut self, ctx: &StrategyContext<'_>, b: usize) -> Result<QueryBatch, StrategyError> {
        match self {
            Self::False => select_false(ctx, b),
            Self::Random => select_random(ctx, b),
            Self::Entropy => select_entropy(ctx, b),
            Self::LeastConfidence => select_least_confidence(ctx, b),
            Self::Coreset => select_coreset(ctx, b),
            Self::Albl(albl) => albl.select(ctx, b),
        }
    }
}
