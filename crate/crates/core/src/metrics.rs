//! Seed-averaged learning curves and the area under the difference curve
//! (AUDC) against the random baseline. Accuracies here are in percentage
//! points.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::dataset::OOD_PREFIX;
use crate::experiment::RunRecord;
use crate::strategies::StrategyKind;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("no records for strategy {strategy} on split {split}")]
    NoRecords { strategy: StrategyKind, split: String },
    #[error("{0}")]
    Alignment(String),
    #[error("duplicate table cell ({strategy}, {split})")]
    DuplicateCell { strategy: StrategyKind, split: String },
}

pub const DEFAULT_ROUNDS_USED: usize = 20;

/// Name of the derived split holding the mean over every OOD split.
pub const OOD_MEAN: &str = "test_ood:mean";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub round: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub strategy: StrategyKind,
    pub split: String,
    pub points: Vec<CurvePoint>,
    pub n_seeds: usize,
}

impl Curve {
    pub fn last_round(&self) -> Option<usize> {
        self.points.last().map(|p| p.round)
    }
}

/// Pointwise mean and population standard deviation over seeds.
pub fn build_curve(records: &[RunRecord], strategy: StrategyKind, split: &str) -> Result<Curve, MetricsError> {
    let mut by_seed: BTreeMap<u64, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.strategy == strategy && r.split == split) {
        if by_seed
            .entry(r.seed)
            .or_default()
            .insert(r.round, 100.0 * r.accuracy)
            .is_some()
        {
            return Err(MetricsError::Alignment(format!(
                "seed {} has two records for round {} on {split}",
                r.seed, r.round
            )));
        }
    }
    let Some(first) = by_seed.values().next() else {
        return Err(MetricsError::NoRecords {
            strategy,
            split: split.to_string(),
        });
    };
    let rounds: Vec<usize> = first.keys().copied().collect();
    if rounds.iter().enumerate().any(|(i, &r)| i != r) {
        return Err(MetricsError::Alignment(format!(
            "rounds for {strategy} on {split} are not contiguous from 0"
        )));
    }
    for (seed, series) in &by_seed {
        if !series.keys().copied().eq(rounds.iter().copied()) {
            return Err(MetricsError::Alignment(format!(
                "seed {seed} of {strategy} on {split} covers different rounds"
            )));
        }
    }
    let n = by_seed.len() as f64;
    let points = rounds
        .iter()
        .map(|round| {
            let values: Vec<f64> = by_seed.values().map(|s| s[round]).collect();
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            CurvePoint {
                round: *round,
                mean,
                std: var.sqrt(),
            }
        })
        .collect();
    Ok(Curve {
        strategy,
        split: split.to_string(),
        points,
        n_seeds: by_seed.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudcReport {
    pub strategy: StrategyKind,
    pub split: String,
    pub audc: f64,
    pub rounds_used: usize,
}

/// `Σ_{N=1..rounds_used} (strategy(N) − baseline(N))` with unit spacing.
/// Round 0 is excluded since both curves start from the same initial pool.
pub fn audc(strategy: &Curve, baseline: &Curve, rounds_used: usize) -> Result<AudcReport, MetricsError> {
    if strategy.split != baseline.split {
        return Err(MetricsError::Alignment(format!(
            "split mismatch: {} vs {}",
            strategy.split, baseline.split
        )));
    }
    for curve in [strategy, baseline] {
        if curve.last_round().is_none_or(|r| r < rounds_used) {
            return Err(MetricsError::Alignment(format!(
                "curve {} on {} does not cover rounds 1..={rounds_used}",
                curve.strategy, curve.split
            )));
        }
    }
    let audc = (1..=rounds_used)
        .map(|n| strategy.points[n].mean - baseline.points[n].mean)
        .sum();
    Ok(AudcReport {
        strategy: strategy.strategy,
        split: strategy.split.clone(),
        audc,
        rounds_used,
    })
}

/// Appends one record per (strategy, seed, round) on [`OOD_MEAN`] averaging
/// accuracy over every `test_ood:*` split present.
pub fn with_ood_mean(records: &[RunRecord]) -> Vec<RunRecord> {
    let mut groups: BTreeMap<(StrategyKind, u64, usize), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        if r.split.starts_with(OOD_PREFIX) && r.split != OOD_MEAN {
            groups.entry((r.strategy, r.seed, r.round)).or_default().push(r);
        }
    }
    let mut out = records.to_vec();
    for ((strategy, seed, round), group) in groups {
        out.push(RunRecord {
            strategy,
            seed,
            round,
            split: OOD_MEAN.to_string(),
            accuracy: group.iter().map(|r| r.accuracy).sum::<f64>() / group.len() as f64,
            epochs_run: group[0].epochs_run,
            reached_threshold: group[0].reached_threshold,
        });
    }
    out
}

/// AUDC values keyed by (strategy, split), rendered in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub strategies: Vec<StrategyKind>,
    pub splits: Vec<String>,
    pub cells: BTreeMap<(StrategyKind, String), f64>,
}

pub fn summary_table(reports: &[AudcReport]) -> Result<SummaryTable, MetricsError> {
    let mut cells = BTreeMap::new();
    for r in reports {
        if cells.insert((r.strategy, r.split.clone()), r.audc).is_some() {
            return Err(MetricsError::DuplicateCell {
                strategy: r.strategy,
                split: r.split.clone(),
            });
        }
    }
    let mut strategies: Vec<StrategyKind> = reports
        .iter()
        .map(|r| r.strategy)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    strategies.sort_by_key(|s| s.name());
    let splits = reports
        .iter()
        .map(|r| r.split.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(SummaryTable {
        strategies,
        splits,
        cells,
    })
}

impl SummaryTable {
    pub fn get(&self, strategy: StrategyKind, split: &str) -> Option<f64> {
        self.cells.get(&(strategy, split.to_string())).copied()
    }

    /// Comma-separated, one row per strategy; missing cells are empty.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("strategy");
        for split in &self.splits {
            out.push(',');
            out.push_str(split);
        }
        out.push('\n');
        for &strategy in &self.strategies {
            out.push_str(strategy.name());
            for split in &self.splits {
                out.push(',');
                if let Some(v) = self.get(strategy, split) {
                    let _ = write!(out, "{v:.4}");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Column-aligned plaintext; missing cells show as `-`.
    pub fn to_plaintext(&self) -> String {
        let mut rows: Vec<Vec<String>> = Vec::with_capacity(self.strategies.len() + 1);
        let mut header = vec!["strategy".to_string()];
        header.extend(self.splits.iter().cloned());
        rows.push(header);
        for &strategy in &self.strategies {
            let mut row = vec![strategy.name().to_string()];
            for split in &self.splits {
                row.push(match self.get(strategy, split) {
                    Some(v) => format!("{v:.2}"),
                    None => "-".to_string(),
                });
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in rows {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    if c == 0 {
                        format!("{cell:<w$}", w = widths[c])
                    } else {
                        format!("{cell:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
