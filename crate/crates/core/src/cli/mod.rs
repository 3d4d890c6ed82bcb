//! The `depthpose` command line.
//!
//! Every subcommand takes `--skeleton`, `--seed`, `--config` and `--out`.
//! `--out` is a directory; each run writes its outputs and a
//! `manifest.json` there. Exit codes: 0 on success, 2 for input errors
//! (bad arguments, unreadable or invalid files, unprocessable data), 3 for
//! numerical failures (non-finite values, singular matrices, a failed
//! gradient check).

mod commands;
mod config;
mod manifest;

pub use commands::PredictionRecord;
pub use config::{EvaluateSection, GradCheckSection, PriorSection, RunConfig, TrainSection};
pub use manifest::RunManifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::skeleton::SkeletonModel;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "depthpose", version, about = "Depth-based 3D human pose estimation")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Skeleton definition (JSON). Defaults to the built-in 15-landmark skeleton.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML run configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the limb prior on the ground truth of a dataset.
    FitPrior {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Lift a dataset and train the residual regressor.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        features: Option<usize>,
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        dropout: Option<f64>,
        /// Feed detection confidence as a fourth input channel.
        #[arg(long)]
        use_confidence: bool,
        #[arg(long)]
        max_unprocessable: Option<f64>,
    },
    /// Lift and refine every sample of a dataset.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Score the lifted baseline, a model, or a predictions file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Needed to lift the samples (baseline and model).
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Score an existing predictions file instead of running a model.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// AP distance threshold, meters.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
        /// Surface offset, meters.
        #[arg(long)]
        offset: Option<f64>,
        /// Depth noise standard deviation, meters.
        #[arg(long)]
        noise: Option<f64>,
        /// Non-trunk detection dropout probability.
        #[arg(long)]
        dropout: Option<f64>,
    },
    /// Check reverse-mode gradients against central differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: Option<usize>,
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        use_confidence: bool,
        /// Perturb the analytic gradients; the check must then fail.
        #[arg(long)]
        corrupt_gradient: bool,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::FitPrior { .. } => "fit-prior",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Synth { .. } => "synth",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::FitPrior { common, .. }
            | Command::Train { common, .. }
            | Command::Predict { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Synth { common, .. }
            | Command::Gradcheck { common, .. } => common,
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

fn load_skeleton(common: &Common) -> Result<SkeletonModel> {
    match &common.skeleton {
        Some(path) => SkeletonModel::load(path),
        None => Ok(SkeletonModel::itop15()),
    }
}

fn effective_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if common.seed.is_some() {
        config.seed = common.seed;
    }
    config.apply_seed();
    Ok(config)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common().clone();
    let mut config = effective_config(&common)?;
    let skeleton = load_skeleton(&common)?;
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    let mut manifest = RunManifest::new(cli.command.name(), &common, &skeleton);
    let result = commands::dispatch(&cli.command, &mut config, &skeleton, &mut manifest);
    manifest.finish(&config, result.as_ref().err());
    manifest.write(&common.out)?;
    result
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
