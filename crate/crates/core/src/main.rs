//! Command-line front end for the decentralized training simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use drtsim::cli::{self, ExperimentConfig, StrategySelection};

#[derive(Parser)]
#[command(
    name = "drtsim",
    about = "Desk-scale simulator for classical and trust-based diffusion learning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config.
    Run {
        /// Path to the experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the configured strategy: classical, drt, or both.
        #[arg(long)]
        strategy: Option<StrategySelection>,
        /// Worker threads for the adapt phase; 1 runs fully sequentially.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Record every combination tensor built by the trust-based strategy.
        #[arg(long)]
        dump_tensors: bool,
        /// Output directory (falls back to config, then $DRTSIM_OUT, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate metrics CSVs into a steady-state comparison table.
    Report {
        /// One or more metrics.csv files.
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Replay a recorded run's tensors: phi residuals, centroid
    /// disagreement, and the pooled gradient norm per checkpoint.
    Diagnose {
        /// Run directory produced by `run` with tensor dumps and checkpoints.
        #[arg(long)]
        run: PathBuf,
        /// Backward-product horizon for the phi estimate.
        #[arg(long, default_value_t = 50)]
        horizon: usize,
        /// Use the plain-mean centroid instead of the phi-weighted one.
        #[arg(long)]
        plain_mean_centroid: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> drtsim::Result<()> {
    match cli.command {
        Command::Run { config, strategy, threads, dump_tensors, out } => {
            let text = std::fs::read_to_string(&config)?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            if let Some(s) = strategy {
                cfg.run.strategy = s;
            }
            if dump_tensors {
                cfg.output.dump_tensors = true;
            }
            let out_dir = cli::resolve_out_dir(out.as_deref().and_then(|p| p.to_str()), &cfg);
            let artifacts = cli::run_experiment(&cfg, threads, &out_dir)?;
            print!("{}", artifacts.summary);
            println!("wrote {}", artifacts.metrics_path.display());
            Ok(())
        }
        Command::Report { inputs } => {
            let lines = cli::compare_report(&inputs)?;
            print!("{}", cli::format_report(&lines));
            Ok(())
        }
        Command::Diagnose { run, horizon, plain_mean_centroid } => {
            let summary = cli::diagnose(&run, horizon, plain_mean_centroid)?;
            println!(
                "analyzed {} checkpointed rounds, wrote {} rows to {}",
                summary.rounds_analyzed,
                summary.rows_written,
                summary.csv_path.display()
            );
            Ok(())
        }
    }
}
