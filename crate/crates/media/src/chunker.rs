//! Splits a source video into fixed-length chunk files.
//!
//! `Remux` copies compressed packets untouched. A cut can only fall on a
//! keyframe, so each planned boundary moves forward to the next keyframe
//! and the shift is recorded as `drift_sec`. `Reencode` decodes each planned
//! span and encodes it again with a keyframe on its first frame, so chunk
//! boundaries land exactly where planned.
//!
//! Only the primary video stream is written.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use ffmpeg_next as ffmpeg;
use ffmpeg::{codec, format, media, Rational};
use serde::{Deserialize, Serialize};

use vidpipe_core::chunking::MANIFEST_SCHEMA_VERSION;
use vidpipe_core::{ChunkPlan, ChunkRecord, ManifestHeader};

use crate::container::{Container, VideoStream};
use crate::corpus::toolchain;
use crate::decode::{DecoderOptions, VideoReader};
use crate::encode::{EncodeSettings, VideoWriter, ARGS_TEMPLATE};
use crate::error::MediaError;
use crate::pool::run_bounded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkMode {
    Remux,
    Reencode,
}

impl ChunkMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ChunkMode::Remux => "remux",
            ChunkMode::Reencode => "reencode",
        }
    }
}

impl FromStr for ChunkMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remux" => Ok(ChunkMode::Remux),
            "reencode" => Ok(ChunkMode::Reencode),
            other => Err(format!("unknown chunk mode `{other}` (expected remux or reencode)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkOptions {
    /// Parallel encode jobs; 0 uses every available core.
    pub jobs: usize,
    /// Keyframe interval of re-encoded chunks, seconds.
    pub gop_sec: f64,
    /// Codec thread cap per job.
    pub threads: usize,
    pub preset: String,
    /// Drive an external ffmpeg-compatible binary instead of in-process
    /// libav.
    pub external: Option<PathBuf>,
}

impl Default for ChunkOptions {
    fn default() -> Self {
        Self {
            jobs: 0,
            gop_sec: 1.0,
            threads: 1,
            preset: "veryfast".into(),
            external: None,
        }
    }
}

impl ChunkOptions {
    /// Defaults, with `external` taken from `VIDPIPE_CODEC_BIN` if set.
    pub fn from_env() -> Self {
        Self {
            external: std::env::var_os("VIDPIPE_CODEC_BIN").map(PathBuf::from),
            ..Self::default()
        }
    }
}

pub fn chunk_header(chunk_length: f64, mode: ChunkMode, options: &ChunkOptions) -> ManifestHeader {
    let toolchain = match &options.external {
        Some(bin) => format!("external {}", bin.display()),
        None => toolchain(),
    };
    let args_template = match mode {
        ChunkMode::Remux => "stream copy, video only, cuts at the first keyframe at or after each boundary".to_string(),
        ChunkMode::Reencode => ARGS_TEMPLATE.to_string(),
    };
    ManifestHeader {
        schema_version: MANIFEST_SCHEMA_VERSION,
        chunk_length,
        mode: mode.as_str().into(),
        toolchain,
        args_template,
    }
}

fn chunk_name(source_id: &str, index: usize) -> String {
    format!("{source_id}_{index:05}.mp4")
}

/// Writes the chunks of `plan` for `source` into `out_dir` and returns their
/// records. Chunk paths are relative to `out_dir`.
pub fn chunk_video(
    source: &Path,
    plan: &ChunkPlan,
    mode: ChunkMode,
    out_dir: &Path,
    options: &ChunkOptions,
) -> Result<Vec<ChunkRecord>, MediaError> {
    crate::init();
    if plan.is_empty() {
        return Err(MediaError::Input(format!("plan for `{}` has no chunks", plan.source_id)));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| MediaError::io(out_dir, e))?;
    let container = Container::open_file(source)?;
    let stream = container.video()?;
    if let Some(bin) = &options.external {
        return external_chunks(bin, source, &stream, plan, mode, out_dir, options);
    }
    match mode {
        ChunkMode::Remux => remux(container, &stream, plan, out_dir),
        ChunkMode::Reencode => {
            drop(container);
            reencode(source, &stream, plan, out_dir, options)
        }
    }
}

fn measured_bitrate(path: &Path, duration: f64) -> Result<f64, MediaError> {
    let bytes = std::fs::metadata(path).map_err(|e| MediaError::io(path, e))?.len();
    Ok(if duration > 0.0 { bytes as f64 * 8.0 / duration } else { 0.0 })
}

/// Actual cut ticks for each planned boundary after the first: the first
/// keyframe at or after it. Boundaries with no later keyframe, or sharing
/// one with the previous boundary, are dropped so their span merges into
/// the preceding chunk.
fn remux_cuts(stream: &VideoStream, plan: &ChunkPlan) -> Vec<(usize, i64)> {
    let mut cuts = vec![(0, stream.origin)];
    for (k, &(start, _)) in plan.boundaries.iter().enumerate().skip(1) {
        let mut planned = stream.ticks(start);
        if stream.seconds(planned) < start - 1e-9 {
            planned += 1;
        }
        let i = stream.keyframes.partition_point(|&key| key < planned);
        if let Some(&key) = stream.keyframes.get(i) {
            if key > cuts.last().unwrap().1 && stream.seconds(key) < stream.duration - 1e-9 {
                cuts.push((k, key));
            }
        }
    }
    cuts
}

struct ChunkOut {
    octx: format::context::Output,
    path: PathBuf,
    first_dts: Option<i64>,
    out_tb: Rational,
}

fn remux(
    mut container: Container,
    stream: &VideoStream,
    plan: &ChunkPlan,
    out_dir: &Path,
) -> Result<Vec<ChunkRecord>, MediaError> {
    let source = container.path().to_path_buf();
    let cuts = remux_cuts(stream, plan);
    let in_tb = Rational::new(stream.time_base.0 as i32, stream.time_base.1 as i32);
    let params = container
        .input_ref()
        .stream(stream.index)
        .map(|s| s.parameters())
        .ok_or_else(|| MediaError::probe(&source, "video stream vanished"))?;

    let open_chunk = |index: usize| -> Result<ChunkOut, MediaError> {
        let path = out_dir.join(chunk_name(&plan.source_id, index));
        let fail = |e: ffmpeg::Error| MediaError::encode(&path, e);
        let mut octx = format::output(&path).map_err(fail)?;
        let mut ost = octx.add_stream(codec::encoder::find(codec::Id::None)).map_err(fail)?;
        ost.set_parameters(params.clone());
        ost.set_time_base(in_tb);
        unsafe {
            (*(*ost.as_mut_ptr()).codecpar).codec_tag = 0;
        }
        octx.write_header().map_err(fail)?;
        let out_tb = octx.stream(0).expect("stream added above").time_base();
        Ok(ChunkOut {
            octx,
            path,
            first_dts: None,
            out_tb,
        })
    };

    let mut outputs: Vec<PathBuf> = Vec::with_capacity(cuts.len());
    let mut current = open_chunk(0)?;
    let mut chunk = 0;
    for (s, mut packet) in container.input().packets() {
        if s.index() != stream.index || s.parameters().medium() != media::Type::Video {
            continue;
        }
        let pts = packet.pts().or(packet.dts()).unwrap_or(stream.origin);
        if chunk + 1 < cuts.len() && packet.is_key() && pts >= cuts[chunk + 1].1 {
            finish_chunk(current)?;
            outputs.push(out_dir.join(chunk_name(&plan.source_id, chunk)));
            chunk += 1;
            current = open_chunk(chunk)?;
        }
        let base = *current.first_dts.get_or_insert(packet.dts().unwrap_or(pts));
        packet.set_pts(packet.pts().map(|p| p - base));
        packet.set_dts(packet.dts().map(|d| d - base));
        packet.rescale_ts(in_tb, current.out_tb);
        packet.set_stream(0);
        packet.set_position(-1);
        packet
            .write_interleaved(&mut current.octx)
            .map_err(|e| MediaError::encode(&current.path, e))?;
    }
    finish_chunk(current)?;
    outputs.push(out_dir.join(chunk_name(&plan.source_id, chunk)));

    let half_frame = stream.frame_duration() / 2.0;
    let mut records = Vec::with_capacity(outputs.len());
    for (i, path) in outputs.iter().enumerate() {
        let (planned_index, cut) = cuts[i];
        let start = stream.seconds(cut);
        let end = cuts.get(i + 1).map_or(stream.duration, |&(_, c)| stream.seconds(c));
        let drift = start - plan.boundaries[planned_index].0;
        let info = crate::probe(path)?;
        records.push(ChunkRecord {
            source_id: plan.source_id.clone(),
            chunk_index: i as u32,
            chunk_path: path.file_name().unwrap().into(),
            start_sec: start,
            end_sec: end,
            width: info.width,
            height: info.height,
            avg_bitrate: measured_bitrate(path, end - start)?,
            keyframe_aligned: drift.abs() < half_frame,
            drift_sec: drift,
        });
    }
    Ok(records)
}

fn finish_chunk(mut out: ChunkOut) -> Result<(), MediaError> {
    out.octx
        .write_trailer()
        .map_err(|e| MediaError::encode(&out.path, e))
}

fn encode_settings(stream: &VideoStream, source: &Path, options: &ChunkOptions) -> Result<EncodeSettings, MediaError> {
    let bitrate = if stream.bit_rate > 0 {
        stream.bit_rate
    } else {
        measured_bitrate(source, stream.duration)? as u64
    };
    let fps = stream.fps();
    if !(fps > 0.0) {
        return Err(MediaError::probe(source, "unknown frame rate"));
    }
    let mut settings = EncodeSettings::h264(stream.width, stream.height, 1, bitrate.max(1));
    settings.frame_rate = stream.frame_rate;
    settings.gop = ((options.gop_sec * fps).round() as u32).max(1);
    settings.preset = options.preset.clone();
    settings.threads = options.threads.max(1);
    Ok(settings)
}

fn reencode(
    source: &Path,
    stream: &VideoStream,
    plan: &ChunkPlan,
    out_dir: &Path,
    options: &ChunkOptions,
) -> Result<Vec<ChunkRecord>, MediaError> {
    let base = encode_settings(stream, source, options)?;
    let decoder_options = DecoderOptions {
        threads: options.threads.max(1),
    };
    run_bounded(options.jobs, plan.len(), |k| {
        let (start, end) = plan.boundaries[k];
        let path = out_dir.join(chunk_name(&plan.source_id, k));
        let mut reader = VideoReader::open(Container::open_file(source)?, decoder_options)?;
        let key = reader.stream().keyframe_at_or_before(start).unwrap_or(reader.stream().origin);
        reader.seek(key)?;
        let mut frames = Vec::new();
        while let Some(f) = reader.next_frame()? {
            if f.pts >= end - 1e-9 {
                break;
            }
            if f.pts >= start - 1e-9 {
                frames.push(f);
            }
        }
        if frames.is_empty() {
            return Err(MediaError::decode(source, Some(start), "chunk span holds no frames"));
        }
        let mut settings = base.clone();
        settings.gop = settings.gop.min(frames.len() as u32);
        let mut writer = VideoWriter::create(&path, &settings)?;
        for f in &frames {
            let src = f.as_frame();
            let mut dst = writer.blank_frame();
            for plane in 0..3 {
                let rows = if plane == 0 { src.height() } else { src.height().div_ceil(2) } as usize;
                let cols = if plane == 0 { src.width() } else { src.width().div_ceil(2) } as usize;
                let (ss, ds) = (src.stride(plane), dst.stride(plane));
                let data = src.data(plane);
                let out = dst.data_mut(plane);
                for row in 0..rows {
                    out[row * ds..row * ds + cols].copy_from_slice(&data[row * ss..row * ss + cols]);
                }
            }
            writer.write(&mut dst)?;
        }
        writer.finish()?;
        let info = crate::probe(&path)?;
        Ok(ChunkRecord {
            source_id: plan.source_id.clone(),
            chunk_index: k as u32,
            chunk_path: path.file_name().unwrap().into(),
            start_sec: start,
            end_sec: end,
            width: info.width,
            height: info.height,
            avg_bitrate: measured_bitrate(&path, end - start)?,
            keyframe_aligned: true,
            drift_sec: 0.0,
        })
    })
}

fn external_chunks(
    bin: &Path,
    source: &Path,
    stream: &VideoStream,
    plan: &ChunkPlan,
    mode: ChunkMode,
    out_dir: &Path,
    options: &ChunkOptions,
) -> Result<Vec<ChunkRecord>, MediaError> {
    let settings = encode_settings(stream, source, options)?;
    run_bounded(options.jobs, plan.len(), |k| {
        let (start, end) = plan.boundaries[k];
        let path = out_dir.join(chunk_name(&plan.source_id, k));
        let mut cmd = Command::new(bin);
        cmd.args(["-v", "error", "-nostdin", "-y", "-ss"])
            .arg(format!("{start:.6}"))
            .arg("-i")
            .arg(source)
            .arg("-t")
            .arg(format!("{:.6}", end - start))
            .arg("-an");
        match mode {
            ChunkMode::Remux => {
                cmd.args(["-c:v", "copy"]);
            }
            ChunkMode::Reencode => {
                cmd.args(["-c:v", &settings.codec, "-preset", &settings.preset, "-pix_fmt", "yuv420p"])
                    .arg("-b:v")
                    .arg(settings.bitrate.to_string())
                    .arg("-x264-params")
                    .arg(settings.x264_params())
                    .arg("-threads")
                    .arg(settings.threads.to_string());
            }
        }
        cmd.arg(&path);
        let output = cmd
            .output()
            .map_err(|e| MediaError::Tool(format!("cannot run {}: {e}", bin.display())))?;
        if !output.status.success() {
            return Err(MediaError::Tool(format!(
                "{} exited with {}: {}",
                bin.display(),
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let info = crate::probe(&path)?;
        Ok(ChunkRecord {
            source_id: plan.source_id.clone(),
            chunk_index: k as u32,
            chunk_path: path.file_name().unwrap().into(),
            start_sec: start,
            end_sec: end,
            width: info.width,
            height: info.height,
            avg_bitrate: measured_bitrate(&path, end - start)?,
            keyframe_aligned: mode == ChunkMode::Reencode,
            drift_sec: 0.0,
        })
    })
}
