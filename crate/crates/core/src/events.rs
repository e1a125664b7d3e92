//! Per-round prediction-switch and forgetting ledgers over the unlabeled pool.
//!
//! A switch event for sample `i` at epoch `t ≥ 2` happens when the argmax
//! prediction differs from epoch `t-1`. A forgetting event happens when the
//! sample was classified correctly at `t-1` and incorrectly at `t`; it needs
//! ground truth, so it is only tracked in diagnostic mode.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

/// Stable identifier of a sample in the training pool (its row index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleId(pub usize);

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EventError {
    #[error("ledger needs a nonempty pool")]
    EmptyPool,
    #[error("pool id {0} appears more than once")]
    DuplicateId(SampleId),
    #[error("expected {expected} predictions aligned with the pool, got {found}")]
    Alignment { expected: usize, found: usize },
    #[error("labels must be supplied exactly when the ledger is in diagnostic mode")]
    Mode,
    #[error("forgetting events are only tracked in diagnostic mode")]
    NotDiagnostic,
    #[error("id {0} is not in the pool")]
    UnknownId(SampleId),
}

#[derive(Debug, Clone)]
struct Diagnostic {
    forget_counts: Vec<u32>,
    prev_correct: Option<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct EventLedger {
    pool_ids: Vec<SampleId>,
    prev_predictions: Option<Vec<usize>>,
    switch_counts: Vec<u32>,
    diagnostic: Option<Diagnostic>,
    epochs_seen: usize,
}

impl EventLedger {
    /// Starts a fresh ledger for one round; every counter is zero.
    pub fn new_round(pool_ids: &[SampleId], diagnostic: bool) -> Result<Self, EventError> {
        if pool_ids.is_empty() {
            return Err(EventError::EmptyPool);
        }
        let mut seen = BTreeSet::new();
        for id in pool_ids {
            if !seen.insert(*id) {
                return Err(EventError::DuplicateId(*id));
            }
        }
        let n = pool_ids.len();
        Ok(Self {
            pool_ids: pool_ids.to_vec(),
            prev_predictions: None,
            switch_counts: vec![0; n],
            diagnostic: diagnostic.then(|| Diagnostic {
                forget_counts: vec![0; n],
                prev_correct: None,
            }),
            epochs_seen: 0,
        })
    }

    pub fn pool_ids(&self) -> &[SampleId] {
        &self.pool_ids
    }

    pub fn epochs_seen(&self) -> usize {
        self.epochs_seen
    }

    pub fn is_diagnostic(&self) -> bool {
        self.diagnostic.is_some()
    }

    /// Folds one epoch's argmax predictions (aligned with `pool_ids`) into
    /// the counters. `labels` must be given iff the ledger is diagnostic.
    pub fn record_epoch(&mut self, predictions: &[usize], labels: Option<&[usize]>) -> Result<(), EventError> {
        let n = self.pool_ids.len();
        if predictions.len() != n {
            return Err(EventError::Alignment {
                expected: n,
                found: predictions.len(),
            });
        }
        match (&mut self.diagnostic, labels) {
            (Some(diag), Some(labels)) => {
                if labels.len() != n {
                    return Err(EventError::Alignment {
                        expected: n,
                        found: labels.len(),
                    });
                }
                let correct: Vec<bool> = predictions.iter().zip(labels).map(|(p, y)| p == y).collect();
                if let Some(prev) = &diag.prev_correct {
                    for ((count, was), now) in diag.forget_counts.iter_mut().zip(prev).zip(&correct) {
                        if *was && !*now {
                            *count += 1;
                        }
                    }
                }
                diag.prev_correct = Some(correct);
            }
            (None, None) => {}
            _ => return Err(EventError::Mode),
        }
        if let Some(prev) = &self.prev_predictions {
            for ((count, before), now) in self.switch_counts.iter_mut().zip(prev).zip(predictions) {
                if before != now {
                    *count += 1;
                }
            }
        }
        self.prev_predictions = Some(predictions.to_vec());
        self.epochs_seen += 1;
        Ok(())
    }

    /// Cumulative switch counts aligned with `pool_ids`.
    pub fn switch_counts(&self) -> &[u32] {
        &self.switch_counts
    }

    pub fn counts(&self) -> BTreeMap<SampleId, u32> {
        self.pool_ids
            .iter()
            .copied()
            .zip(self.switch_counts.iter().copied())
            .collect()
    }

    pub fn forget_counts(&self) -> Result<&[u32], EventError> {
        self.diagnostic
            .as_ref()
            .map(|d| d.forget_counts.as_slice())
            .ok_or(EventError::NotDiagnostic)
    }

    /// Writes `pool_id,switch_count[,forget_count]` rows with a header.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        match &self.diagnostic {
            Some(diag) => {
                writeln!(out, "pool_id,switch_count,forget_count")?;
                for ((id, s), f) in self.pool_ids.iter().zip(&self.switch_counts).zip(&diag.forget_counts) {
                    writeln!(out, "{id},{s},{f}")?;
                }
            }
            None => {
                writeln!(out, "pool_id,switch_count")?;
                for (id, s) in self.pool_ids.iter().zip(&self.switch_counts) {
                    writeln!(out, "{id},{s}")?;
                }
            }
        }
        Ok(())
    }
}

/// Returns `pool_ids` without `queried`, preserving order.
pub fn remove_queried(pool_ids: &[SampleId], queried: &[SampleId]) -> Result<Vec<SampleId>, EventError> {
    let present: BTreeSet<SampleId> = pool_ids.iter().copied().collect();
    let mut drop = BTreeSet::new();
    for id in queried {
        if !present.contains(id) {
            return Err(EventError::UnknownId(*id));
        }
        drop.insert(*id);
    }
    Ok(pool_ids.iter().copied().filter(|id| !drop.contains(id)).collect())
}
