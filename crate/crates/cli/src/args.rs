use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "lag", version, about = "Train and probe a latent adversarial generator on tiny images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model; writes checkpoints, a metrics log and sample grids.
    Train(TrainArgs),
    /// Grid of [high-res | low-res | G(y,0) | G(y,z_1..k)] per input.
    Sample(SampleArgs),
    /// Outputs along the interpolation between an image and its mirror.
    Mirror(MirrorArgs),
    /// Outputs for progressively noisier low-resolution inputs, z = 0.
    Noise(NoiseArgs),
    /// Median across-sample variance per up-scaling factor.
    Diversity(DiversityArgs),
    /// Finite-difference check of every differentiable primitive.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set total_steps=200`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Print every metrics line to stdout as well.
    #[arg(long)]
    pub verbose: bool,
}

/// Where the high-resolution inputs come from.
#[derive(Args, Debug, Clone, Default)]
pub struct InputArgs {
    /// Image files (.ppm/.pgm) at the model's output resolution.
    #[arg(long = "input", value_name = "FILE")]
    pub inputs: Vec<PathBuf>,
    /// Use this many generated toy faces instead of files.
    #[arg(long)]
    pub toy: Option<usize>,
    /// Seed of the generated toy faces (pick one unseen in training).
    #[arg(long, default_value_t = 999_983)]
    pub toy_seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Number of random z samples per input.
    #[arg(short, long, default_value_t = 6)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct MirrorArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Number of interpolation points, endpoints included.
    #[arg(long, default_value_t = 9)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct NoiseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Comma-separated, non-decreasing noise amplitudes.
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.2,0.4,0.8")]
    pub amplitudes: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct DiversityArgs {
    /// `FACTOR=CHECKPOINT`, one per trained up-scaling factor.
    #[arg(long = "model", value_name = "FACTOR=PATH", required = true)]
    pub models: Vec<String>,
    #[command(flatten)]
    pub inputs: InputArgs,
    #[arg(short, long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write per-input scores as a tab-separated table.
    #[arg(long)]
    pub details: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of random composite graphs.
    #[arg(long, default_value_t = 100)]
    pub composites: usize,
    /// Scale the adjoint of the named primitive (harness self-test).
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}
