use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use false_al_cli::{cmd_generate, cmd_report, cmd_run, RunOptions};

#[derive(Parser)]
#[command(name = "false-al", version, about = "Pool-based active learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset described by a config and write it to a file.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every (strategy, seed) cell of a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; defaults to the number of available cores.
        #[arg(long, env = "FALSE_AL_WORKERS")]
        workers: Option<usize>,
        /// Overrides the experiment seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Track forgetting events and dump per-round event counts.
        #[arg(long)]
        diagnostic_events: bool,
    },
    /// Summarize a results file into curves and an AUDC table.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Output directory; defaults to the results file's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate { config, out } => cmd_generate(&config, &out).map(|_| true),
        Command::Run {
            config,
            out,
            workers,
            seed,
            diagnostic_events,
        } => {
            let opts = RunOptions {
                workers,
                seed,
                diagnostic_events,
            };
            cmd_run(&config, &out, &opts).map(|s| {
                eprintln!("{} cells completed, {} failed", s.completed, s.failed);
                s.all_completed()
            })
        }
        Command::Report { results, out } => {
            let out = out.unwrap_or_else(|| results.parent().map(PathBuf::from).unwrap_or_default());
            cmd_report(&results, &out).map(|_| true)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
