//! `cpgd` — batch pipeline over clips: encode to a CPV1 stream, extract
//! motion/residual priors, run prior-guided restoration, sample the
//! generation stage, and score or benchmark the results.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or format error.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::fmt;
use std::path::PathBuf;

pub use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self::Usage(message.into())
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::Data(message.into())
    }

    pub fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Data(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Data(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

macro_rules! data_error_from {
    ($($ty:ty),+ $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Data(e.to_string())
            }
        })+
    };
}

data_error_from!(
    cpgd_core::codec::CodecError,
    cpgd_core::io::IoError,
    cpgd_core::priors::PriorError,
    cpgd_core::cpfp::CpfpError,
    cpgd_core::cpc::CpcError,
    cpgd_core::metrics::MetricsError,
    cpgd_core::params::ParamError,
);

#[derive(Parser)]
#[command(
    name = "cpgd",
    version,
    about = "Codec-prior extraction and prior-guided video restoration"
)]
struct Cli {
    /// Emit machine-readable JSON on stdout instead of tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode frames into a CPV1 stream.
    Encode(EncodeArgs),
    /// Extract motion/residual sidecars from a stream or from frames.
    Extract(ExtractArgs),
    /// Stage-one restoration from frames and prior sidecars.
    Restore(RestoreArgs),
    /// Sample the generation stage over stage-one outputs.
    Generate(GenerateArgs),
    /// Full-reference metrics between two frame directories.
    Eval(EvalArgs),
    /// Motion-reuse cost benchmark.
    Bench(BenchArgs),
    /// Write a seeded parameter file.
    InitParams(InitParamsArgs),
}

/// Codec fields that may override the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct CodecOverrides {
    #[arg(long)]
    block_size: Option<u8>,
    #[arg(long)]
    search_radius: Option<u8>,
    #[arg(long)]
    quant: Option<u8>,
    #[arg(long)]
    rle: Option<bool>,
}

impl CodecOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.block_size {
            cfg.block_size = v;
        }
        if let Some(v) = self.search_radius {
            cfg.search_radius = v;
        }
        if let Some(v) = self.quant {
            cfg.quant = v;
        }
        if let Some(v) = self.rle {
            cfg.rle = v;
        }
    }
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true)))]
pub struct EncodeArgs {
    /// Directory of frame_NNNNNN RGB images.
    #[arg(long, group = "source")]
    input: Option<PathBuf>,
    /// Raw planar YUV420 file (requires --width and --height).
    #[arg(long, group = "source")]
    yuv: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: CodecOverrides,
    /// Output stream path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true)))]
pub struct ExtractArgs {
    /// CPV1 stream to pull priors from (forward direction only).
    #[arg(long, group = "source")]
    stream: Option<PathBuf>,
    /// Frame directory to match directly (both directions).
    #[arg(long, group = "source")]
    input: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: CodecOverrides,
    /// Output sidecar directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RestoreArgs {
    /// Directory of degraded frames.
    #[arg(long)]
    input: PathBuf,
    /// Sidecar directory from `extract`.
    #[arg(long)]
    priors: PathBuf,
    /// CPFP parameter file.
    #[arg(long)]
    params: PathBuf,
    /// "forward" or "bidirectional" (default from config).
    #[arg(long)]
    mode: Option<String>,
    /// Sharp frames to score the restoration against.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Stage-one restored frames.
    #[arg(long)]
    stage1: PathBuf,
    /// Sidecar directory (forward priors are used).
    #[arg(long)]
    priors: PathBuf,
    /// CPCA parameter file.
    #[arg(long)]
    params: PathBuf,
    /// Spaced sampling steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    t_train: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    latent_factor: Option<usize>,
    /// Noise predictor name (see the registry; "toy" or "zero").
    #[arg(long)]
    predictor: Option<String>,
    /// Comma-separated prompt token ids, hashed into a conditioning bias.
    #[arg(long)]
    prompt_tokens: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Also write the JSON report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Directory of frame_NNNNNN RGB images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: CodecOverrides,
    /// Also write the JSON report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InitParamsArgs {
    /// "cpfp" (alignment/restoration) or "cpc" (attention/sampler).
    #[arg(long)]
    kind: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Feature channels (cpfp).
    #[arg(long)]
    channels: Option<usize>,
    /// Token dimension (cpc).
    #[arg(long)]
    dim: Option<usize>,
    /// Attention heads (cpc).
    #[arg(long)]
    heads: Option<usize>,
    /// Zero the skip-connected branch finals (cpfp) or the query
    /// modulation (cpc).
    #[arg(long)]
    zero_init: bool,
    #[arg(long)]
    out: PathBuf,
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("CPGD_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Encode(args) => commands::encode(args, cli.json),
        Command::Extract(args) => commands::extract(args, cli.json),
        Command::Restore(args) => commands::restore(args, cli.json),
        Command::Generate(args) => commands::generate(args, cli.json),
        Command::Eval(args) => commands::eval(args, cli.json),
        Command::Bench(args) => commands::bench(args, cli.json),
        Command::InitParams(args) => commands::init_params(args, cli.json),
    }
}

fn main() {
    init_thread_pool();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}
