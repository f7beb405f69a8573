//! Synthetic corpora of encoded test-pattern clips.

use std::path::Path;

use serde::{Deserialize, Serialize};

use vidpipe_core::chunking::MANIFEST_SCHEMA_VERSION;
use vidpipe_core::{ChunkManifest, ChunkRecord, ManifestHeader};

use crate::encode::{EncodeSettings, VideoWriter, ARGS_TEMPLATE};
use crate::error::MediaError;
use crate::pattern::Pattern;
use crate::pool::run_bounded;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_clips: usize,
    pub length_sec: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_fps")]
    pub fps: u32,
    /// Bits/sec.
    pub bitrate: u64,
    #[serde(default = "default_gop_sec")]
    pub gop_sec: f64,
    #[serde(default = "default_noise")]
    pub noise: u8,
    /// Parallel encode jobs; 0 uses every available core.
    #[serde(default)]
    pub jobs: usize,
}

fn default_fps() -> u32 {
    30
}
fn default_gop_sec() -> f64 {
    1.0
}
fn default_noise() -> u8 {
    4
}

impl CorpusSpec {
    pub fn new(n_clips: usize, length_sec: f64, width: u32, height: u32, bitrate: u64) -> Self {
        Self {
            n_clips,
            length_sec,
            width,
            height,
            fps: default_fps(),
            bitrate,
            gop_sec: default_gop_sec(),
            noise: default_noise(),
            jobs: 0,
        }
    }

    pub fn frames_per_clip(&self) -> u32 {
        (self.length_sec * f64::from(self.fps)).round() as u32
    }

    pub fn encode_settings(&self) -> EncodeSettings {
        let mut s = EncodeSettings::h264(self.width, self.height, self.fps, self.bitrate);
        s.gop = ((self.gop_sec * f64::from(self.fps)).round() as u32).max(1);
        s
    }

    fn validate(&self) -> Result<(), MediaError> {
        if !(self.length_sec > 0.0) || self.fps == 0 || self.bitrate == 0 {
            return Err(MediaError::Input("length, fps and bitrate must be positive".into()));
        }
        if self.frames_per_clip() == 0 {
            return Err(MediaError::Input("clips would contain no frames".into()));
        }
        if self.width < 32 || self.height < 16 {
            return Err(MediaError::Input("test pattern needs at least 32x16 pixels".into()));
        }
        Ok(())
    }
}

pub fn toolchain() -> String {
    let v = ffmpeg_next::codec::version();
    format!("libavcodec {}.{}.{} in-process", v >> 16, (v >> 8) & 0xff, v & 0xff)
}

/// Writes `frames` pattern frames to `path`. Returns the file size.
pub fn write_pattern_video(path: &Path, pattern: Pattern, frames: u32, settings: &EncodeSettings) -> Result<u64, MediaError> {
    let mut writer = VideoWriter::create(path, settings)?;
    for index in 0..frames {
        let mut frame = writer.blank_frame();
        let (ys, us, vs) = (frame.stride(0), frame.stride(1), frame.stride(2));
        // Planes are filled one at a time through raw slices because the
        // frame only lends out one mutable plane at once.
        let y = unsafe { std::slice::from_raw_parts_mut(frame.data_mut(0).as_mut_ptr(), ys * pattern.height as usize) };
        let ch = pattern.height.div_ceil(2) as usize;
        let u = unsafe { std::slice::from_raw_parts_mut(frame.data_mut(1).as_mut_ptr(), us * ch) };
        let v = unsafe { std::slice::from_raw_parts_mut(frame.data_mut(2).as_mut_ptr(), vs * ch) };
        pattern.fill(index, y, ys, u, us, v, vs);
        writer.write(&mut frame)?;
    }
    writer.finish()
}

/// Encodes `n_clips` pattern clips into `out_dir` and writes
/// `out_dir/manifest.jsonl`, one single-chunk source per clip.
pub fn make_synthetic_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<ChunkManifest, MediaError> {
    crate::init();
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| MediaError::io(out_dir, e))?;
    let settings = spec.encode_settings();
    let frames = spec.frames_per_clip();
    let records = run_bounded(spec.jobs, spec.n_clips, |i| {
        let name = format!("clip_{i:05}.mp4");
        let path = out_dir.join(&name);
        let pattern = Pattern::new(spec.width, spec.height, i as u32, spec.noise);
        write_pattern_video(&path, pattern, frames, &settings)?;
        let info = crate::probe(&path)?;
        Ok(ChunkRecord {
            source_id: format!("clip_{i:05}"),
            chunk_index: 0,
            chunk_path: name.into(),
            start_sec: 0.0,
            end_sec: info.duration,
            width: info.width,
            height: info.height,
            avg_bitrate: info.bit_rate as f64,
            keyframe_aligned: true,
            drift_sec: 0.0,
        })
    })?;
    let manifest = ChunkManifest::new(
        ManifestHeader {
            schema_version: MANIFEST_SCHEMA_VERSION,
            chunk_length: spec.length_sec,
            mode: "synthetic".into(),
            toolchain: toolchain(),
            args_template: format!("{ARGS_TEMPLATE} | {}", settings.describe()),
        },
        records,
    );
    manifest
        .write_to(&out_dir.join(MANIFEST_FILE))
        .map_err(|e| MediaError::Tool(e.to_string()))?;
    Ok(manifest)
}
