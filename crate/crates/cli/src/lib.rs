//! Argument definitions and command implementations for the `cycflow`
//! binary. Commands are plain functions so tests can drive them in-process.

pub mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{run, AblationCell, AblationReport, SampleReport};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "CYCFLOW_THREADS";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Debug, Parser)]
#[command(name = "cycflow", version, about = "Bidirectional rectified-flow frame interpolation on toy video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic multi-rate dataset.
    GenData(GenDataArgs),
    /// Train with the curriculum (or an ablation of it).
    Train(TrainArgs),
    /// Interpolate between two endpoint frames.
    Sample(SampleArgs),
    /// Score a checkpoint on a test dataset.
    Eval(EvalArgs),
    /// Train and score every ablation over shared seeds.
    Ablate(AblateArgs),
    /// Print a summary of a checkpoint, tensor file or manifest.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 9)]
    pub short: usize,
    #[arg(long, default_value_t = 17)]
    pub long: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Training hyperparameters. Unset flags keep the value from `--config` or
/// the built-in defaults; `--set key=value` is applied last.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainOptions {
    /// JSON training config to start from.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr_adapters: Option<f64>,
    #[arg(long)]
    pub lr_tokens: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub phase1_steps: Option<usize>,
    #[arg(long)]
    pub phase2_steps: Option<usize>,
    /// full | adapters_only
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub adapter_rank: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub sampler_steps: Option<usize>,
    #[arg(long)]
    pub d_hidden: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    /// Dotted config key and JSON value, e.g. `model.max_frames=73`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset directory (or its manifest.json).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// none | no_reverse | no_direction_tokens | mixed_length
    #[arg(long)]
    pub ablation: Option<String>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub options: TrainOptions,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Start frame: tensor file or binary PPM.
    #[arg(long)]
    pub start: PathBuf,
    /// End frame: tensor file or binary PPM.
    #[arg(long)]
    pub end: PathBuf,
    /// Comma-separated class/sprite names or numeric ids, e.g. `accelerate,disc`.
    #[arg(long, default_value = "")]
    pub caption: String,
    /// forward | backward. Backward sampling starts from the time-reversed noise.
    #[arg(long, default_value = "forward")]
    pub direction: String,
    #[arg(long, default_value_t = 17)]
    pub frames: usize,
    #[arg(long, default_value_t = 16)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pin the boundary latents after every Euler step.
    #[arg(long)]
    pub clamp: bool,
    /// Force the shared-token condition (otherwise read from the checkpoint's config).
    #[arg(long)]
    pub shared_token: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalOptions {
    #[arg(long, default_value_t = 16)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub eval_seed: u64,
    #[arg(long)]
    pub clamp: bool,
    /// `short`, `long`, or a frame count present in the dataset.
    #[arg(long, default_value = "long")]
    pub length: String,
    /// Keep only clips of this trajectory class.
    #[arg(long)]
    pub class: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Score the ground-truth clips themselves instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    pub identity: bool,
    /// Test dataset directory (or its manifest.json).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub shared_token: bool,
    #[command(flatten)]
    pub eval: EvalOptions,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test_data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "none,no_reverse,no_direction_tokens,mixed_length")]
    pub variants: Vec<String>,
    /// Also train the curriculum with every step on long clips.
    #[arg(long)]
    pub long_only: bool,
    /// Noise draws per clip for the long-length validation loss.
    #[arg(long, default_value_t = 4)]
    pub val_draws: usize,
    #[command(flatten)]
    pub options: TrainOptions,
    #[command(flatten)]
    pub eval: EvalOptions,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    /// Checkpoint, tensor file or dataset manifest.
    pub path: PathBuf,
}
