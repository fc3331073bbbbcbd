use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use statereach::config::PipelineConfig;
use statereach::pipeline::{
    cmd_calibrate, cmd_gen_data, cmd_optimize, cmd_report, cmd_verify, BoundsMode,
};
use statereach::Error;

/// State-dependent conformal noise bounds + Taylor-model reachability.
#[derive(Parser)]
#[command(name = "statereach", version, about)]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true, default_value = "statereach.toml")]
    config: PathBuf,
    /// Override the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundsArg {
    State,
    Time,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and write the optimization/calibration/test data splits.
    GenData,
    /// Optimize partition cuts (and optionally confidences) with the GA.
    Optimize {
        /// Evolve per-region confidences instead of keeping them uniform.
        #[arg(long)]
        dynamic: bool,
    },
    /// Calibrate regional bounds and the timewise baseline.
    Calibrate,
    /// Compute the flowpipe and metrics under a calibrated bound.
    Verify {
        /// Bound source: per-region (state) or per-step (time).
        #[arg(long, value_enum, default_value = "state")]
        bounds: BoundsArg,
        /// Override the branch budget.
        #[arg(long)]
        max_branches: Option<usize>,
    },
    /// Summarize one or more metrics files into a comparison table.
    Report {
        /// Metrics JSON files (defaults to all metrics_*.json in the
        /// output directory).
        inputs: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> statereach::Result<()> {
    let mut cfg = PipelineConfig::from_path(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    match cli.command {
        Command::GenData => cmd_gen_data(&cfg),
        Command::Optimize { dynamic } => cmd_optimize(&cfg, Some(dynamic)),
        Command::Calibrate => cmd_calibrate(&cfg),
        Command::Verify { bounds, max_branches } => {
            let mode = match bounds {
                BoundsArg::State => BoundsMode::State,
                BoundsArg::Time => BoundsMode::Time,
            };
            cmd_verify(&cfg, mode, max_branches)
        }
        Command::Report { inputs } => {
            let inputs = if inputs.is_empty() {
                let mut found: Vec<PathBuf> = std::fs::read_dir(&cfg.out_dir)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        p.file_name()
                            .and_then(|n| n.to_str())
                            .is_some_and(|n| n.starts_with("metrics_") && n.ends_with(".json"))
                    })
                    .collect();
                found.sort();
                found
            } else {
                inputs
            };
            cmd_report(&cfg, &inputs)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Verification(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
