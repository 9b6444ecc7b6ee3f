mod commands;
mod config;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use commands::Baseline;
use std::path::PathBuf;
use std::process::ExitCode;

/// Federated transfer learning for EEG classification on the SPD
/// manifold: training, baselines, and synthetic data generation.
#[derive(Parser)]
#[command(name = "ftl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; all keys are optional.
    #[arg(long)]
    config: PathBuf,
    /// RNG seed; the same config and seed reproduce outputs exactly.
    #[arg(long)]
    seed: u64,
    /// Output directory for metrics, summaries, and data files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train the non-transfer network on one subject with k-fold CV.
    TrainSpecific(Common),
    /// Federated source→target transfer training with the MMD loss.
    TrainAdaptive(Common),
    /// Run a Riemannian baseline on the same folds.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        algorithm: BaselineArg,
    },
    /// Generate a synthetic EEGTRIALS v1 data file.
    Synth(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Mdm,
    Tsm,
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::TrainSpecific(c) | Command::TrainAdaptive(c) | Command::Synth(c) => c,
        Command::Baseline { common, .. } => common,
    };
    std::fs::create_dir_all(&common.out)?;
    let config = config::load_config(&common.config)?;
    match cli.command {
        Command::TrainSpecific(c) => commands::cmd_train_specific(&config, c.seed, &c.out),
        Command::TrainAdaptive(c) => commands::cmd_train_adaptive(&config, c.seed, &c.out),
        Command::Baseline { common, algorithm } => {
            let algorithm = match algorithm {
                BaselineArg::Mdm => Baseline::Mdm,
                BaselineArg::Tsm => Baseline::Tsm,
            };
            commands::cmd_baseline(&config, algorithm, common.seed, &common.out)
        }
        Command::Synth(c) => commands::cmd_synth(&config, c.seed, &c.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
