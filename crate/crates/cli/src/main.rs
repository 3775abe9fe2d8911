//! Command-line front end for the dynamic-connectivity pipeline.

#![allow(clippy::needless_range_loop)]

mod commands;
mod config;

use clap::{Args, Parser, Subcommand, ValueEnum};
use commands::{CliError, SynthMode};
use config::PipelineConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dsvb",
    about = "Dynamic functional connectivity modeling: graph construction, \
             variational recurrent autoencoder training, cross-validated \
             evaluation, and brain-state analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Config overrides as dotted key=value pairs
    /// (e.g. --override train.learning_rate=0.001).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig, CliError> {
        if let Some(threads) = self.threads {
            dsvb_core::set_threads(threads);
        }
        PipelineConfig::load(self.config.as_deref(), &self.overrides, self.seed)
            .map_err(CliError::Input)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build graph sequences from a subject manifest of ROI time-series CSVs.
    BuildGraphs {
        /// Manifest JSON listing {subject_id, path, label}.
        #[arg(long)]
        manifest: PathBuf,
        /// Output cache file.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the model on a sequence cache.
    Train {
        #[arg(long)]
        cache: PathBuf,
        /// Output directory for the checkpoint and training log.
        #[arg(long)]
        out: PathBuf,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Nested stratified cross validation with metrics.
    Evaluate {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Embedding-based state analysis of a trained model.
    Analyze {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic labeled dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SynthOutput::Sequences)]
        mode: SynthOutput,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SynthOutput {
    /// Write a ready-to-train sequence cache.
    Sequences,
    /// Write ROI time-series CSVs plus a manifest for build-graphs.
    Timeseries,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildGraphs {
            manifest,
            out,
            common,
        } => {
            let config = common.load()?;
            commands::cmd_build_graphs(&manifest, &config, &out)
        }
        Command::Train {
            cache,
            out,
            resume,
            common,
        } => {
            let config = common.load()?;
            commands::cmd_train(&cache, &config, &out, resume.as_deref())
        }
        Command::Evaluate { cache, out, common } => {
            let config = common.load()?;
            commands::cmd_evaluate(&cache, &config, &out)
        }
        Command::Analyze {
            cache,
            checkpoint,
            out,
            common,
        } => {
            let config = common.load()?;
            commands::cmd_analyze(&cache, &checkpoint, &config, &out)
        }
        Command::Synth { out, mode, common } => {
            let config = common.load()?;
            let mode = match mode {
                SynthOutput::Sequences => SynthMode::Sequences,
                SynthOutput::Timeseries => SynthMode::Timeseries,
            };
            commands::cmd_synth(&config, &out, mode)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}
