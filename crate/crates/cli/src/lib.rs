//! Command-line front end: `synthesize`, `train`, `upscale`, `evaluate`, `benchmark`.
//!
//! Structured logs go to stdout as one JSON object per line; the human summary goes to stderr.

mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{AppConfig, PathSettings, SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error{}: {message}", if key.is_empty() { String::new() } else { format!(" at `{key}`") })]
    Config { key: String, message: String },
    #[error("cannot read config file {}: {source}", path.display())]
    ConfigFile { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] blindsr::Error),
}

impl CliError {
    /// 2 for usage and configuration problems, 1 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::ConfigFile { .. } | CliError::Usage(_) => 2,
            CliError::Core(blindsr::Error::Config { .. }) => 2,
            CliError::Core(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "blindsr", version, about = "Blind 4x super-resolution toolkit", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Degrade HR images into LR images plus replayable JSON recipes.
    Synthesize(SynthesizeArgs),
    /// Pretrain then adversarially train a generator.
    Train(TrainArgs),
    /// Upscale an image or a directory of images with a checkpoint.
    Upscale(UpscaleArgs),
    /// Score SR output against HR references (PSNR/SSIM) and write CSV and JSON reports.
    Evaluate(EvaluateArgs),
    /// Time star and lite generators over a resolution ladder.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Star,
    Lite,
}

impl From<VariantArg> for blindsr::generator::Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Star => blindsr::generator::Variant::Star,
            VariantArg::Lite => blindsr::generator::Variant::Lite,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LadderArg {
    Desk,
    Full,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hr_dir: Option<PathBuf>,
    #[arg(long, env = "BLINDSR_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Number of LR images; HR images are reused in order. Defaults to one per HR image.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Flags that override `[train]` and `[generator]` values from the config file.
#[derive(Debug, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hr_patch_size: Option<usize>,
    #[arg(long)]
    pub pretrain_iters: Option<u64>,
    #[arg(long)]
    pub gan_iters: Option<u64>,
    #[arg(long)]
    pub pretrain_lr: Option<f64>,
    #[arg(long)]
    pub gan_lr: Option<f64>,
    #[arg(long)]
    pub ema_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub log_every: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub dropout_prob: Option<f64>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut AppConfig) {
        let t = &mut cfg.train;
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { t.$field = v; })*
            };
        }
        set!(batch_size, hr_patch_size, pretrain_iters, gan_iters, pretrain_lr, gan_lr, ema_decay, seed, log_every, checkpoint_every);
        if let Some(v) = self.variant {
            cfg.generator.variant = v.into();
        }
        if let Some(p) = self.dropout_prob {
            cfg.generator.dropout_prob = p;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hr_dir: Option<PathBuf>,
    #[arg(long, env = "BLINDSR_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Continue from a training checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct UpscaleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file for a single input, output directory otherwise.
    #[arg(long)]
    pub output: PathBuf,
    /// Must match the generator stored in the checkpoint.
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    #[arg(long)]
    pub use_ema: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Without a checkpoint the input images are scored as ready-made SR output.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub input_dir: PathBuf,
    #[arg(long)]
    pub hr_dir: Option<PathBuf>,
    /// Report path; `.csv` and `.json` files are written next to it.
    #[arg(long)]
    pub report: PathBuf,
    /// Treat the input images as HR and degrade them with the configured space first.
    #[arg(long)]
    pub synthesize: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also save every SR image as PNG here.
    #[arg(long)]
    pub sr_out: Option<PathBuf>,
    #[arg(long)]
    pub use_ema: bool,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Randomly initialised default-size networks are timed when omitted.
    #[arg(long)]
    pub star_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub lite_checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub ladder: Option<LadderArg>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub report: PathBuf,
}

/// Parses `args` and runs the command.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
