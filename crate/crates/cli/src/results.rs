//! Results file: one comma-separated row per run record, sorted by
//! (strategy, seed, round, split).

use std::io::{BufRead, Write};

use anyhow::{anyhow, bail, Context, Result};
use false_al::experiment::RunRecord;

pub const HEADER: &str = "strategy,seed,round,split,accuracy_pp,epochs_K,reached_threshold";

pub fn write_row<W: Write>(out: &mut W, r: &RunRecord) -> std::io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        r.strategy,
        r.seed,
        r.round,
        r.split,
        100.0 * r.accuracy,
        r.epochs_run,
        r.reached_threshold
    )
}

pub fn write_results<W: Write>(mut out: W, records: &[RunRecord]) -> std::io::Result<()> {
    writeln!(out, "{HEADER}")?;
    for r in records {
        write_row(&mut out, r)?;
    }
    Ok(())
}

pub fn read_results<R: BufRead>(input: R) -> Result<Vec<RunRecord>> {
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, line)) => {
            if line?.trim() != HEADER {
                bail!("line 1: expected header `{HEADER}`");
            }
        }
        None => bail!("results file is empty"),
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_row(&line).with_context(|| format!("line {line_no}"))?);
    }
    Ok(records)
}

fn parse_row(line: &str) -> Result<RunRecord> {
    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
    if cols.len() != 7 {
        bail!("expected 7 columns, found {}", cols.len());
    }
    let accuracy_pp: f64 = cols[4].parse().map_err(|_| anyhow!("bad accuracy `{}`", cols[4]))?;
    if !(0.0..=100.0).contains(&accuracy_pp) {
        bail!("accuracy {accuracy_pp} outside [0, 100]");
    }
    Ok(RunRecord {
        strategy: cols[0].parse()?,
        seed: cols[1].parse().map_err(|_| anyhow!("bad seed `{}`", cols[1]))?,
        round: cols[2].parse().map_err(|_| anyhow!("bad round `{}`", cols[2]))?,
        split: cols[3].to_string(),
        accuracy: accuracy_pp / 100.0,
        epochs_run: cols[5].parse().map_err(|_| anyhow!("bad epoch count `{}`", cols[5]))?,
        reached_threshold: cols[6].parse().map_err(|_| anyhow!("bad flag `{}`", cols[6]))?,
    })
}
