//! Experiment harness for set-valued random-feature dynamics models.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use urf_core::cli::{
    cmd_fit, cmd_generate, cmd_predict, cmd_sweep, cmd_worstcase, ExperimentConfig, SweepAxis,
};
use urf_core::UrfError;

#[derive(Parser)]
#[command(name = "urf", about = "Learn set-valued dynamics models and compute worst-case trajectory costs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to the experiment JSON config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's rollout seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate noisy training rollouts and write the dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the set-valued model on an existing dataset.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV (defaults to <out>/dataset.csv).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Mean rollout, uncertainty tube, and true trajectory export.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Model bundle JSON (defaults to <out>/model.json).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Worst/best/mean/true costs, traces, and trajectory exports.
    Worstcase {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Repeat generate/fit/worstcase over one axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Axis: num_rollouts, alpha, or schedule.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Comma-separated seeds (default: 0).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Parallel worker threads for sweep cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, UrfError> {
    let mut config = ExperimentConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        config.rollouts.seed = seed;
    }
    Ok(config)
}

fn run() -> Result<(), UrfError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { common } => {
            let config = load_config(&common)?;
            cmd_generate(&config, &common.out)
        }
        Command::Fit { common, dataset } => {
            let config = load_config(&common)?;
            let dataset = dataset.unwrap_or_else(|| common.out.join("dataset.csv"));
            cmd_fit(&config, &dataset, &common.out)
        }
        Command::Predict { common, model } => {
            let config = load_config(&common)?;
            let model = model.unwrap_or_else(|| common.out.join("model.json"));
            cmd_predict(&config, &model, &common.out)
        }
        Command::Worstcase { common, model } => {
            let config = load_config(&common)?;
            let model = model.unwrap_or_else(|| common.out.join("model.json"));
            cmd_worstcase(&config, &model, &common.out)
        }
        Command::Sweep {
            common,
            axis,
            values,
            seeds,
            jobs,
        } => {
            let config = load_config(&common)?;
            let axis = match axis.as_str() {
                "num_rollouts" => SweepAxis::NumRollouts,
                "alpha" => SweepAxis::Alpha,
                "schedule" => SweepAxis::Schedule,
                other => {
                    return Err(UrfError::invalid(
                        "axis",
                        format!("unknown axis `{other}` (expected num_rollouts, alpha, schedule)"),
                    ))
                }
            };
            cmd_sweep(&config, axis, &values, &seeds, jobs, &common.out)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                UrfError::Numerical(_) | UrfError::Diverged { .. } | UrfError::RankDeficient { .. } => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}
