//! `vidpipe`: chunk planning, clip decoding, loader benchmarks and
//! performance planners from the command line.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3
//! infeasible plan. Results go to stdout, diagnostics to stderr.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "vidpipe", version, about = "Video training data-pipeline toolkit")]
pub struct Cli {
    /// Emit machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed for commands that draw random numbers.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Pipeline config file (TOML). Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PipelineArg {
    Fused,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Remux,
    Reencode,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Longest chunk length that keeps one step's reads within the disk budget.
    SolveChunkLength(SolveArgs),
    /// Split videos into fixed-length chunk files plus a manifest.
    Chunk(ChunkArgs),
    /// Decode one clip request (JSON) into a VPC1 tensor file.
    Decode(DecodeArgs),
    /// Benchmark the multi-worker loader on a chunk manifest.
    BenchLoader(BenchArgs),
    /// Encode a synthetic test-pattern corpus.
    MakeCorpus(CorpusArgs),
    /// Activation memory and the largest batch that fits on one GPU.
    PlanMemory(MemoryArgs),
    /// Fit memory-model coefficients and fixed overhead to observations.
    CalibrateMemory(CalibrateArgs),
    /// End-to-end throughput as the slowest of IO, CPU and GPU.
    SimulateThroughput(ThroughputArgs),
    /// Sample crop rectangles from frame geometry.
    SampleCrop(CropArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Clips per training step (B).
    #[arg(long)]
    pub batch_size: Option<f64>,
    /// Average stream bitrate, e.g. `1Mb` (bits/sec).
    #[arg(long)]
    pub bitrate: Option<String>,
    /// Sustained read speed, e.g. `500MB` (bytes/sec).
    #[arg(long)]
    pub read_speed: Option<String>,
    /// Duration of one training step, e.g. `4s`.
    #[arg(long)]
    pub step_time: Option<String>,
    /// Fraction of the disk budget to use, in (0, 1].
    #[arg(long)]
    pub margin: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ChunkArgs {
    /// A video file or a directory of videos.
    #[arg(long)]
    pub input: PathBuf,
    /// Chunk length, e.g. `15s`. Solved from the config's hardware section if omitted.
    #[arg(long)]
    pub chunk_length: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub out: PathBuf,
    /// Parallel encode jobs (0 = all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// JSON clip request.
    #[arg(long)]
    pub request: PathBuf,
    /// Output tensor file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub pipeline: Option<PipelineArg>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Number of loader workers (M).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub pipeline: Option<PipelineArg>,
    /// Chunk manifest; overrides `loader.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Samples to measure, warm-up included.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub queue_capacity: Option<usize>,
    /// Simulated consumer cost per clip, milliseconds.
    #[arg(long)]
    pub consumer_ms: Option<f64>,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-sample timings as CSV here.
    #[arg(long)]
    pub dump_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub n_clips: usize,
    /// Clip length, e.g. `15s`.
    #[arg(long, default_value = "15s")]
    pub length: String,
    /// `WIDTHxHEIGHT`.
    #[arg(long, default_value = "320x256")]
    pub resolution: String,
    #[arg(long, default_value = "1Mb")]
    pub bitrate: String,
    #[arg(long, default_value_t = 30)]
    pub fps: u32,
    /// Keyframe interval in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub gop: f64,
    /// Noise amplitude in luma steps.
    #[arg(long, default_value_t = 4)]
    pub noise: u8,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MemoryArgs {
    /// Memory-efficient attention.
    #[arg(long)]
    pub flash: bool,
    /// Gradient checkpointing.
    #[arg(long)]
    pub ckpt: bool,
    /// GPU memory, e.g. `24GiB`.
    #[arg(long)]
    pub gpu_ram: Option<String>,
    /// Memory not available to activations, e.g. `12GB`.
    #[arg(long, conflicts_with = "calibrate_batch")]
    pub fixed_overhead: Option<String>,
    /// Calibrate the fixed overhead so the baseline (no flash, no
    /// checkpointing) fits exactly this batch.
    #[arg(long)]
    pub calibrate_batch: Option<u64>,
    /// Write a frame-count sweep as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Observed LayerNorm activations, MB/video.
    #[arg(long)]
    pub layernorm: Option<f64>,
    /// Observed plain-attention activations, MB/video.
    #[arg(long)]
    pub mha_plain: Option<f64>,
    /// Observed memory-efficient attention activations, MB/video.
    #[arg(long)]
    pub mha_flash: Option<f64>,
    /// Observed MLP activations, MB/video.
    #[arg(long)]
    pub mlp: Option<f64>,
    /// Observed baseline batch size, for calibrating the fixed overhead.
    #[arg(long, requires = "gpu_ram")]
    pub batch: Option<u64>,
    #[arg(long)]
    pub gpu_ram: Option<String>,
}

#[derive(Debug, Args)]
pub struct ThroughputArgs {
    /// Config file holding a `[models.throughput]` section.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub gpus: Option<u32>,
    /// Videos/sec per GPU.
    #[arg(long)]
    pub per_gpu_rate: Option<f64>,
    #[arg(long)]
    pub workers: Option<u32>,
    /// Videos/sec per loader worker.
    #[arg(long)]
    pub per_worker_rate: Option<f64>,
    /// e.g. `500MB`.
    #[arg(long)]
    pub read_speed: Option<String>,
    /// Compressed size of one clip, e.g. `1Mb`.
    #[arg(long)]
    pub bits_per_clip: Option<String>,
    /// Write a GPU-count sweep as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub max_gpus: u32,
}

#[derive(Debug, Args)]
pub struct CropArgs {
    #[arg(long)]
    pub width: u32,
    #[arg(long)]
    pub height: u32,
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    /// Center crop at the target size instead of a random crop.
    #[arg(long)]
    pub center: bool,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("VIDPIPE_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

impl From<PipelineArg> for vidpipe_core::Pipeline {
    fn from(p: PipelineArg) -> Self {
        match p {
            PipelineArg::Fused => vidpipe_core::Pipeline::Fused,
            PipelineArg::Reference => vidpipe_core::Pipeline::Reference,
        }
    }
}

impl From<ModeArg> for vidpipe_media::ChunkMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Remux => vidpipe_media::ChunkMode::Remux,
            ModeArg::Reencode => vidpipe_media::ChunkMode::Reencode,
        }
    }
}
