use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, Context, Result};
use chrono::Utc;
use false_al::dataset;
use false_al::events::EventLedger;
use false_al::experiment::{self, CellResult, CellStatus, ExperimentConfig, GridHooks, PreparedData, RoundObserver};
use false_al::metrics::{self, AudcReport, Curve, SummaryTable, DEFAULT_ROUNDS_USED};
use false_al::strategies::StrategyKind;

use crate::config::LoadedConfig;
use crate::manifest::{CellEntry, Outputs, RunManifest, Status};
use crate::results;

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
const PARTIAL_FILE: &str = "results.partial.csv";

pub fn cmd_generate(config_path: &Path, out: &Path) -> Result<()> {
    let loaded = LoadedConfig::load(config_path, None)?;
    let cfg = loaded
        .config
        .dataset
        .as_ref()
        .ok_or_else(|| anyhow!("config {} has no [dataset] section to generate", config_path.display()))?;
    let bundle = dataset::generate(cfg).context("generating dataset")?;
    dataset::export(&bundle, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub diagnostic_events: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub results: PathBuf,
    pub manifest: PathBuf,
    pub completed: usize,
    pub failed: usize,
}

impl RunSummary {
    pub fn all_completed(&self) -> bool {
        self.failed == 0
    }
}

struct EventDumper {
    dir: PathBuf,
    strategy: StrategyKind,
    seed: u64,
}

impl RoundObserver for EventDumper {
    fn on_ledger(&mut self, round: usize, ledger: &EventLedger) {
        let path = self
            .dir
            .join(format!("{}-seed{}-round{round}.csv", self.strategy, self.seed));
        let written = File::create(&path).and_then(|f| {
            let mut w = BufWriter::new(f);
            ledger.write_dump(&mut w)?;
            w.flush()
        });
        if let Err(e) = written {
            eprintln!("warning: could not write {}: {e}", path.display());
        }
    }
}

struct RunHooks {
    partial: Mutex<BufWriter<File>>,
    events_dir: Option<PathBuf>,
}

impl GridHooks for RunHooks {
    fn observer(&self, cell: &ExperimentConfig) -> Box<dyn RoundObserver> {
        match &self.events_dir {
            Some(dir) => Box::new(EventDumper {
                dir: dir.clone(),
                strategy: cell.strategy,
                seed: cell.seed,
            }),
            None => Box::new(experiment::NoopObserver),
        }
    }

    fn on_cell_done(&self, result: &CellResult) {
        let mut w = self.partial.lock().expect("results sink poisoned");
        let written = result
            .records
            .iter()
            .try_for_each(|r| results::write_row(&mut *w, r))
            .and_then(|_| w.flush());
        if let Err(e) = written {
            eprintln!("warning: streaming results failed: {e}");
        }
        match &result.status {
            CellStatus::Completed => eprintln!("completed {} seed {}", result.strategy, result.seed),
            CellStatus::Failed(reason) => eprintln!("FAILED {} seed {}: {reason}", result.strategy, result.seed),
        }
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub fn cmd_run(config_path: &Path, out_dir: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let started_at = Utc::now().to_rfc3339();
    let loaded = LoadedConfig::load(config_path, opts.seed)?;
    let bundle = loaded.load_dataset()?;
    let mut grid = loaded.grid();
    grid.loop_config.diagnostic_events |= opts.diagnostic_events;
    let cells = grid.cells();
    // surface schedule errors before any training starts
    grid.loop_config
        .validate(bundle.train_pool.len())
        .context("invalid [loop] section")?;
    grid.learner.validate().context("invalid [learner] section")?;

    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let events_dir = grid.loop_config.diagnostic_events.then(|| out_dir.join("events"));
    if let Some(dir) = &events_dir {
        fs::create_dir_all(dir)?;
    }
    let partial_path = out_dir.join(PARTIAL_FILE);
    let mut partial = BufWriter::new(File::create(&partial_path)?);
    writeln!(partial, "{}", results::HEADER)?;
    let hooks = RunHooks {
        partial: Mutex::new(partial),
        events_dir: events_dir.clone(),
    };

    let workers = opts.workers.unwrap_or_else(default_workers).max(1);
    let data = Arc::new(PreparedData::new(&bundle));
    let outcome = experiment::run_grid(&cells, data, workers, &hooks);
    drop(hooks);

    let results_path = out_dir.join(RESULTS_FILE);
    let mut w = BufWriter::new(File::create(&results_path)?);
    results::write_results(&mut w, &outcome.records)?;
    w.flush()?;
    fs::remove_file(&partial_path)?;

    let manifest_path = out_dir.join(MANIFEST_FILE);
    let cells: Vec<CellEntry> = outcome
        .cells
        .iter()
        .map(|c| CellEntry {
            strategy: c.strategy.to_string(),
            seed: c.seed,
            status: match &c.status {
                CellStatus::Completed => Status::Completed,
                CellStatus::Failed(reason) => Status::Failed(reason.clone()),
            },
        })
        .collect();
    let failed = cells.iter().filter(|c| c.status != Status::Completed).count();
    let manifest = RunManifest {
        config_hash: loaded.hash.clone(),
        framework_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: Utc::now().to_rfc3339(),
        workers,
        outputs: Outputs {
            results: results_path.clone(),
            manifest: manifest_path.clone(),
            events_dir,
        },
        cells,
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(RunSummary {
        results: results_path,
        manifest: manifest_path,
        completed: outcome.cells.len() - failed,
        failed,
    })
}

#[derive(Debug, Clone)]
pub struct Report {
    pub curves: Vec<Curve>,
    pub reports: Vec<AudcReport>,
    pub table: SummaryTable,
}

/// Curves and AUDC table for a results file. The random baseline must be
/// present; AUDC integrates over rounds `1..=min(20, last round)`.
pub fn build_report(records: &[experiment::RunRecord]) -> Result<Report> {
    let records = metrics::with_ood_mean(records);
    let mut strategies: Vec<StrategyKind> = records.iter().map(|r| r.strategy).collect();
    strategies.sort_by_key(|s| s.name());
    strategies.dedup();
    let mut splits: Vec<String> = records.iter().map(|r| r.split.clone()).collect();
    splits.sort();
    splits.dedup();

    let mut curves = Vec::new();
    let mut reports = Vec::new();
    for split in &splits {
        let baseline = metrics::build_curve(&records, StrategyKind::Random, split)
            .with_context(|| format!("random baseline for split {split}"))?;
        for &strategy in &strategies {
            let curve = metrics::build_curve(&records, strategy, split)?;
            let last = curve.last_round().unwrap_or(0).min(baseline.last_round().unwrap_or(0));
            let rounds_used = last.min(DEFAULT_ROUNDS_USED);
            reports.push(metrics::audc(&curve, &baseline, rounds_used)?);
            curves.push(curve);
        }
    }
    let table = metrics::summary_table(&reports)?;
    Ok(Report { curves, reports, table })
}

fn curve_file_name(curve: &Curve) -> String {
    format!("{}__{}.csv", curve.strategy, curve.split.replace(':', "_"))
}

/// Prints the AUDC table and writes per-(strategy, split) curve files plus
/// `audc.csv` into `out_dir`. Returns the table text that was printed.
pub fn cmd_report(results_path: &Path, out_dir: &Path) -> Result<String> {
    let file = File::open(results_path).with_context(|| format!("opening {}", results_path.display()))?;
    let records =
        results::read_results(BufReader::new(file)).with_context(|| format!("parsing {}", results_path.display()))?;
    let report = build_report(&records)?;
    fs::create_dir_all(out_dir)?;
    for curve in &report.curves {
        let mut w = BufWriter::new(File::create(out_dir.join(curve_file_name(curve)))?);
        writeln!(w, "round,mean_pp,std_pp")?;
        for p in &curve.points {
            writeln!(w, "{},{:.6},{:.6}", p.round, p.mean, p.std)?;
        }
        w.flush()?;
    }
    fs::write(out_dir.join("audc.csv"), report.table.to_delimited())?;
    let rounds_used = report.reports.iter().map(|r| r.rounds_used).min().unwrap_or(0);
    let text = format!(
        "Area under difference curve vs. random (pp x rounds, rounds 1..={rounds_used})\n{}",
        report.table.to_plaintext()
    );
    print!("{text}");
    Ok(text)
}
