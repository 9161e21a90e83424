use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "lpdh",
    version,
    about = "Laplacian-pyramid dehazing: synthesis, training, inference and evaluation",
    after_help = "Set LPDH_THREADS to cap worker threads. Every run appends one JSON line to the manifest."
)]
pub struct Cli {
    /// JSON-lines run log to append to.
    #[arg(long, global = true, default_value = "lpdh-runs.jsonl")]
    pub manifest: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Synthesise hazy/clean training pairs.
    Synth(SynthArgs),
    /// Split an image into Laplacian bands.
    Decompose(DecomposeArgs),
    /// Rebuild an image from a `decompose` directory.
    Reconstruct(ReconstructArgs),
    /// Low-rank Tucker reconstruction of an image.
    Tucker(TuckerArgs),
    /// Train a model on synthesised pairs.
    Train(TrainArgs),
    /// Dehaze one image with a trained checkpoint.
    Dehaze(DehazeArgs),
    /// PSNR/SSIM of a checkpoint on a pair directory.
    Eval(EvalArgs),
    /// Per-stage inference timing.
    Bench(BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Decompose(_) => "decompose",
            Command::Reconstruct(_) => "reconstruct",
            Command::Tucker(_) => "tucker",
            Command::Train(_) => "train",
            Command::Dehaze(_) => "dehaze",
            Command::Eval(_) => "eval",
            Command::Bench(_) => "bench",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Synth(a) => Some(a.seed),
            Command::Tucker(a) => Some(a.seed),
            Command::Train(a) => Some(a.seed),
            Command::Bench(a) => Some(a.seed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn is_on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// `ramp`, `radial`, `noise`, or a path to a grey depth image.
    #[arg(long, default_value = "ramp")]
    pub depth: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Side length of generated clean scenes.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Use images from this directory (sorted by name, cycled) as clean scenes.
    #[arg(long)]
    pub clean_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DecomposeArgs {
    pub input: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructArgs {
    pub dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TuckerArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Explicit ranks `r_h,r_w,r_c`; overrides `--rank-fraction`.
    #[arg(long, value_delimiter = ',')]
    pub ranks: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.5)]
    pub rank_fraction: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    /// Taylor terms `n` (pyramid levels + 1).
    #[arg(long, default_value_t = 4)]
    pub terms: usize,
    #[arg(long, value_enum, default_value = "on")]
    pub tucker: Switch,
    /// Replace the K network with a parameter-free average of its inputs.
    #[arg(long)]
    pub single_unet: bool,
    /// Weight each band by `1/k!` explicitly.
    #[arg(long)]
    pub explicit_factorials: bool,
    #[arg(long, default_value_t = 3)]
    pub bottom_depth: usize,
    #[arg(long, default_value_t = 16)]
    pub bottom_channels: usize,
    #[arg(long, default_value_t = 2)]
    pub k_depth: usize,
    #[arg(long, default_value_t = 8)]
    pub k_channels: usize,
    /// 3 for per-colour K, 1 for a shared map.
    #[arg(long, default_value_t = 3)]
    pub k_out_channels: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.1)]
    pub tucker_lambda: f64,
    /// Also regularise K towards its Tucker reconstruction.
    #[arg(long)]
    pub tucker_on_k: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV (defaults to `<out>.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Save to `--out` every this many steps (0 = only at the end).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct DehazeArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the checkpoint's Tucker setting.
    #[arg(long, value_enum)]
    pub tucker: Option<Switch>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Report CSV (printed to stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub tucker: Option<Switch>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// Input image; a synthetic scene of `--width`×`--height` is used when omitted.
    pub input: Option<PathBuf>,
    /// Checkpoint; a freshly initialised default model is used when omitted.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    #[arg(long, default_value_t = 3840)]
    pub width: usize,
    #[arg(long, default_value_t = 2160)]
    pub height: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Write the timing table as JSON here as well.
    #[arg(long)]
    pub json: Option<PathBuf>,
}
