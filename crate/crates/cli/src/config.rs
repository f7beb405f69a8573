//! The pipeline config file: one TOML document with a section per module.
//!
//! ```toml
//! schema_version = 1
//!
//! [rrc]
//! target = [224, 224]
//! scale = [0.5, 1.0]
//!
//! [chunking]
//! chunk_length = "15s"
//! mode = "reencode"
//!
//! [loader]
//! num_workers = 8
//! manifest = "corpus/manifest.jsonl"
//! ```
//!
//! Quantities with units (`"1Mb"`, `"500MB"`, `"24GiB"`, `"250ms"`) may be
//! written as strings; bare numbers are bits, bytes or seconds as named.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize};

use vidpipe_core::bench::BenchOptions;
use vidpipe_core::perf::{PipelineProfile, VitConfig};
use vidpipe_core::units::{parse_bits, parse_bytes, parse_seconds};
use vidpipe_core::{ErrorPolicy, FrameSampling, HardwareProfile, LoaderConfig, Pipeline, RrcParams, SamplingSpec};
use vidpipe_media::ChunkMode;

use crate::error::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

macro_rules! quantity {
    ($name:ident, $parse:path, $what:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Serialize)]
        #[serde(transparent)]
        pub struct $name(pub f64);

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                struct V;
                impl<'de> Visitor<'de> for V {
                    type Value = f64;
                    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                        f.write_str(concat!("a number or a string with a unit, in ", $what))
                    }
                    fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                        Ok(v)
                    }
                    fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                        Ok(v as f64)
                    }
                    fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                        Ok(v as f64)
                    }
                    fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                        $parse(v).map_err(E::custom)
                    }
                }
                d.deserialize_any(V).map($name)
            }
        }
    };
}

quantity!(Bits, parse_bits, "bits");
quantity!(Bytes, parse_bytes, "bytes");
quantity!(Seconds, parse_seconds, "seconds");

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub rrc: RrcParams,
    #[serde(default)]
    pub chunking: ChunkingSection,
    #[serde(default)]
    pub decoder: DecoderSection,
    #[serde(default)]
    pub loader: LoaderSection,
    #[serde(default)]
    pub models: ModelsSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSection {
    pub batch_size: f64,
    pub avg_bitrate: Bits,
    pub read_speed: Bytes,
    pub step_time: Seconds,
}

impl HardwareSection {
    pub fn profile(&self) -> HardwareProfile {
        HardwareProfile {
            batch_size: self.batch_size,
            avg_bitrate: self.avg_bitrate.0,
            read_speed: self.read_speed.0,
            step_time: self.step_time.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkingSection {
    pub chunk_length: Option<Seconds>,
    #[serde(default = "default_mode")]
    pub mode: ChunkMode,
    #[serde(default = "default_margin")]
    pub safety_margin: f64,
    #[serde(default = "default_gop")]
    pub gop_sec: f64,
    #[serde(default)]
    pub jobs: usize,
    /// Inputs for solving the chunk length when none is given.
    pub hardware: Option<HardwareSection>,
}

fn default_mode() -> ChunkMode {
    ChunkMode::Reencode
}
fn default_margin() -> f64 {
    vidpipe_core::chunking::DEFAULT_SAFETY_MARGIN
}
fn default_gop() -> f64 {
    1.0
}

impl Default for ChunkingSection {
    fn default() -> Self {
        Self {
            chunk_length: None,
            mode: default_mode(),
            safety_margin: default_margin(),
            gop_sec: default_gop(),
            jobs: 0,
            hardware: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSection {
    #[serde(default = "one")]
    pub threads: usize,
    #[serde(default)]
    pub pipeline: Pipeline,
}

fn one() -> usize {
    1
}

impl Default for DecoderSection {
    fn default() -> Self {
        Self {
            threads: 1,
            pipeline: Pipeline::Fused,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoaderSection {
    #[serde(default = "default_workers")]
    pub num_workers: usize,
    #[serde(default = "default_queue")]
    pub queue_capacity: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub epoch_seed: u64,
    #[serde(default)]
    pub error_policy: ErrorPolicy,
    /// Resolved against the config file's directory when relative.
    pub manifest: Option<PathBuf>,
    #[serde(default = "default_frames")]
    pub num_frames: usize,
    pub clip_len: Option<Seconds>,
    #[serde(default)]
    pub hflip_prob: f64,
    #[serde(default)]
    pub frame_sampling: FrameSampling,
    #[serde(default)]
    pub center_crop: bool,
    #[serde(default = "default_samples")]
    pub sample_count: usize,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default)]
    pub consumer_ms_per_clip: f64,
}

fn default_workers() -> usize {
    8
}
fn default_queue() -> usize {
    64
}
fn default_batch() -> usize {
    16
}
fn default_frames() -> usize {
    4
}
fn default_samples() -> usize {
    1024
}
fn default_warmup() -> f64 {
    0.1
}

impl Default for LoaderSection {
    fn default() -> Self {
        Self {
            num_workers: default_workers(),
            queue_capacity: default_queue(),
            batch_size: default_batch(),
            epoch_seed: 0,
            error_policy: ErrorPolicy::FailFast,
            manifest: None,
            num_frames: default_frames(),
            clip_len: None,
            hflip_prob: 0.0,
            frame_sampling: FrameSampling::UniformRandom,
            center_crop: false,
            sample_count: default_samples(),
            warmup_fraction: default_warmup(),
            consumer_ms_per_clip: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThroughputSection {
    pub num_gpus: u32,
    pub per_gpu_rate: f64,
    pub num_workers: u32,
    pub per_worker_rate: f64,
    pub read_speed: Bytes,
    pub bits_per_clip: Bits,
}

impl ThroughputSection {
    pub fn profile(&self) -> PipelineProfile {
        PipelineProfile {
            num_gpus: self.num_gpus,
            per_gpu_rate: self.per_gpu_rate,
            num_workers: self.num_workers,
            per_worker_rate: self.per_worker_rate,
            read_speed: self.read_speed.0,
            bits_per_clip: self.bits_per_clip.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsSection {
    pub vit: Option<VitConfig>,
    pub gpu_ram: Option<Bytes>,
    pub fixed_overhead: Option<Bytes>,
    pub throughput: Option<ThroughputSection>,
}

impl PipelineConfig {
    pub fn defaults() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            ..Self::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        // Check the version before the full parse so a newer file reports
        // the mismatch rather than whichever key changed.
        let raw: toml::Table = text.parse().map_err(|e| CliError::Config(format!("config: {e}")))?;
        match raw.get("schema_version").and_then(|v| v.as_integer()) {
            Some(v) if v == i64::from(CONFIG_SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(CliError::Config(format!(
                    "config schema_version {v} is not supported (expected {CONFIG_SCHEMA_VERSION})"
                )))
            }
            None => return Err(CliError::Config("config is missing an integer schema_version".into())),
        }
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    /// Loads `path`, making a relative manifest path relative to the file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(m) = &config.loader.manifest {
            if m.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.loader.manifest = Some(base.join(m));
            }
        }
        Ok(config)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::defaults()), Self::load)
    }

    pub fn loader_config(&self) -> LoaderConfig {
        let l = &self.loader;
        LoaderConfig {
            num_workers: l.num_workers,
            queue_capacity: l.queue_capacity,
            batch_size: l.batch_size,
            epoch_seed: l.epoch_seed,
            pipeline: self.decoder.pipeline,
            error_policy: l.error_policy,
            manifest: l.manifest.clone(),
            sampling: SamplingSpec {
                num_frames: l.num_frames,
                clip_len: l.clip_len.map(|s| s.0),
                rrc: self.rrc,
                hflip_prob: l.hflip_prob,
                frame_sampling: l.frame_sampling,
                center_crop: l.center_crop,
            },
        }
    }

    pub fn bench_options(&self) -> BenchOptions {
        BenchOptions {
            sample_count: self.loader.sample_count,
            warmup_fraction: self.loader.warmup_fraction,
            consumer_ms_per_clip: self.loader.consumer_ms_per_clip,
        }
    }
}
