use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use dsac_cli::{run_sweep, run_training, summarize, RunConfig};
use dsac_core::gradcheck;

#[derive(Parser)]
#[command(
    name = "dsac",
    version,
    about = "Decorrelated soft actor-critic experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write metrics.jsonl and summary.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the learning-rate / batch-size grid with several seeds per cell.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-step mean and standard error across metric streams.
    Summarize {
        /// Output path; one `<stem>_<metric>.csv` is written per metric.
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        streams: Vec<PathBuf>,
    },
    /// Compare analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = gradcheck::DEFAULT_CONFIGS)]
        configs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn out_dir(flag: Option<PathBuf>, config: &RunConfig) -> Result<PathBuf> {
    match flag.or_else(|| config.out_dir.clone()) {
        Some(dir) => Ok(dir),
        None => bail!("no output directory: pass --out or set `out_dir`"),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut config = RunConfig::load(&config)?;
            config.seed = seed;
            let dir = out_dir(out, &config)?;
            let summary = run_training(&config, &dir)?;
            let ret = summary
                .final_return
                .map_or("n/a".to_string(), |r| format!("{r:.4}"));
            println!(
                "seed {} finished: {} gradient steps, {} episodes, final return {}, {:.1}s",
                summary.seed,
                summary.gradient_steps,
                summary.episodes,
                ret,
                summary.wall_clock_seconds
            );
        }
        Command::Sweep { config, seeds, out } => {
            let config = RunConfig::load(&config)?;
            let dir = out_dir(out, &config)?;
            let result = run_sweep(&config, seeds, &dir)?;
            println!(
                "{} cells, {} runs written to {}",
                result.cells.len(),
                result.runs.len(),
                dir.display()
            );
        }
        Command::Summarize { out, streams } => {
            for path in summarize(&streams, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Gradcheck { configs, seed } => {
            let report = gradcheck::run_all(configs, seed)?;
            for outcome in &report.outcomes {
                println!("{outcome}");
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
