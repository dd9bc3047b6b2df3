//! Command-line front end: corpus generation, training, prediction,
//! refinement, evaluation and plotting.

pub mod commands;
pub mod config;
pub mod plot;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration or input files.
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Core(#[from] tempose_core::Error),
}

impl CliError {
    /// 2 for validation errors, 1 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_validation() => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tempose",
    version,
    about = "Absolute 3D pose estimation with trajectory refinement"
)]
pub struct Cli {
    /// JSON experiment config; missing fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Output directory of the command, overriding the config paths.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefineMethod {
    Energy,
    Interpolation,
    OneEuro,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes the train/val/test sequence corpus and its manifest.
    Generate,
    /// Trains the network on the corpus train split.
    Train {
        /// Corpus directory (default: paths.corpus).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Not supported; training always starts from scratch.
        #[arg(long)]
        resume: bool,
    },
    /// Network estimates for every person and frame.
    Predict {
        /// Sequence file or directory (default: the corpus test split).
        #[arg(long)]
        sequences: Option<PathBuf>,
        /// Model file (default: paths.model/tpn.json).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Smooths network estimates.
    Refine {
        /// Network estimates (default: paths.predictions/tpn.jsonl).
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "energy")]
        method: RefineMethod,
        /// Model whose output statistics scale the energy (default: paths.model/tpn.json).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Frame rate for the 1-Euro filter (default: synth.fps).
        #[arg(long)]
        fps: Option<f64>,
    },
    /// Metrics of one or more prediction files against ground truth.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        predictions: Vec<PathBuf>,
        /// Sequence file or directory (default: the corpus test split).
        #[arg(long)]
        sequences: Option<PathBuf>,
        /// Restrict to one subset (default: all, visible and occluded).
        #[arg(long)]
        subset: Option<String>,
    },
    /// Raw, interpolated, 1-Euro and refined estimates side by side.
    Compare {
        /// Network estimates (default: paths.predictions/tpn.jsonl).
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        sequences: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// SVG of one joint's vertical and depth trajectory.
    Plot {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        sequences: Option<PathBuf>,
        #[arg(long = "seq")]
        seq_id: String,
        #[arg(long)]
        person: u32,
        /// Joint name or index (default: the root).
        #[arg(long)]
        joint: Option<String>,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<Vec<PathBuf>, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(&cli)
}

/// Runs a parsed command and returns the files it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), cli.seed)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Generate => commands::generate(&cfg, out),
        Command::Train { corpus, resume } => {
            if *resume {
                return Err(CliError::Usage(
                    "--resume is not supported: training always starts from a freshly seeded model"
                        .into(),
                ));
            }
            commands::train(&cfg, corpus.as_deref(), out)
        }
        Command::Predict { sequences, model } => {
            commands::predict(&cfg, sequences.as_deref(), model.as_deref(), out)
        }
        Command::Refine {
            predictions,
            method,
            model,
            fps,
        } => commands::refine(
            &cfg,
            predictions.as_deref(),
            *method,
            model.as_deref(),
            *fps,
            out,
        ),
        Command::Evaluate {
            predictions,
            sequences,
            subset,
        } => commands::evaluate(
            &cfg,
            predictions,
            sequences.as_deref(),
            subset.as_deref(),
            out,
        ),
        Command::Compare {
            predictions,
            sequences,
            model,
        } => commands::compare(
            &cfg,
            predictions.as_deref(),
            sequences.as_deref(),
            model.as_deref(),
            out,
        ),
        Command::Plot {
            predictions,
            sequences,
            seq_id,
            person,
            joint,
        } => commands::plot(
            &cfg,
            predictions.as_deref(),
            sequences.as_deref(),
            seq_id,
            *person,
            joint.as_deref(),
            out,
        ),
    }
}
