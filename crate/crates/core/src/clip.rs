//! Clip decode requests, decoded clips and the binary tensor container.

use std::io::{self, Read, Write};
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rrc::CropRect;
use crate::seed::{SampleSeed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSampling {
    /// Sorted i.i.d. draws over the span (training).
    #[default]
    UniformRandom,
    /// Midpoints of equal sub-intervals (evaluation).
    UniformDeterministic,
}

/// Timestamps, in seconds, at which to take frames from `[start, end)`.
pub fn select_timestamps(
    start: f64,
    end: f64,
    num_frames: usize,
    mode: FrameSampling,
    seed: SampleSeed,
) -> Vec<f64> {
    match mode {
        FrameSampling::UniformDeterministic => {
            let step = (end - start) / num_frames as f64;
            (0..num_frames).map(|i| start + step * (i as f64 + 0.5)).collect()
        }
        FrameSampling::UniformRandom => {
            let mut rng = seed.rng(Stream::Timestamps);
            let mut ts: Vec<f64> = (0..num_frames)
                .map(|_| start + (end - start) * rng.random::<f64>())
                .collect();
            ts.sort_by(f64::total_cmp);
            ts
        }
    }
}

/// A single clip to decode from one chunk file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRequest {
    pub chunk_path: PathBuf,
    pub local_start: f64,
    pub local_end: f64,
    pub num_frames: usize,
    pub crop: CropRect,
    #[serde(default)]
    pub hflip: bool,
    pub target_h: u32,
    pub target_w: u32,
    #[serde(default)]
    pub frame_sampling: FrameSampling,
    #[serde(default)]
    pub seed: SampleSeed,
}

impl ClipRequest {
    pub fn timestamps(&self) -> Vec<f64> {
        select_timestamps(
            self.local_start,
            self.local_end,
            self.num_frames,
            self.frame_sampling,
            self.seed,
        )
    }

    /// Checks everything that does not need the file; geometry and duration
    /// checks happen once the container header is read.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.local_start >= 0.0 && self.local_start < self.local_end) {
            return Err(format!(
                "span [{}, {}) is empty or negative",
                self.local_start, self.local_end
            ));
        }
        if self.num_frames == 0 {
            return Err("num_frames must be at least 1".into());
        }
        if self.target_h == 0 || self.target_w == 0 {
            return Err("target size must be at least 1×1".into());
        }
        if self.crop.crop_w == 0 || self.crop.crop_h == 0 {
            return Err("crop must be at least 1×1".into());
        }
        Ok(())
    }

    /// Decoded size of one output clip in bytes.
    pub fn output_len(&self) -> usize {
        self.num_frames * 3 * self.target_h as usize * self.target_w as usize
    }
}

/// Work performed while serving one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecodeCounters {
    pub bytes_read: u64,
    pub packets_read: u64,
    /// Frames produced by the codec.
    pub frames_decoded: u64,
    /// Frames handed to color conversion.
    pub frames_converted: u64,
    /// RGB pixels produced by color conversion.
    pub pixels_converted: u64,
    pub seeks: u64,
}

impl std::ops::AddAssign for DecodeCounters {
    fn add_assign(&mut self, o: Self) {
        self.bytes_read += o.bytes_read;
        self.packets_read += o.packets_read;
        self.frames_decoded += o.frames_decoded;
        self.frames_converted += o.frames_converted;
        self.pixels_converted += o.pixels_converted;
        self.seeks += o.seeks;
    }
}

/// Per-request stage times in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTiming {
    /// Bytes into memory.
    pub read_ms: f64,
    /// Demux plus decode.
    pub decode_ms: f64,
    /// Color conversion, crop, flip and rescale.
    pub crop_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedClip {
    /// `num_frames × 3 × target_h × target_w`, C order.
    pub frames: Vec<u8>,
    pub shape: [usize; 4],
    /// Requested sample times.
    pub timestamps: Vec<f64>,
    /// Presentation times of the frames actually used.
    pub frame_pts: Vec<f64>,
    pub source: SourceInfo,
    pub counters: DecodeCounters,
    pub timing: StageTiming,
}

impl DecodedClip {
    pub fn frame(&self, index: usize) -> &[u8] {
        let len = self.shape[1] * self.shape[2] * self.shape[3];
        &self.frames[index * len..(index + 1) * len]
    }
}

pub const TENSOR_MAGIC: &[u8; 4] = b"VPC1";
pub const DTYPE_U8: u32 = 1;

/// Writes `magic | dtype u32 | ndim u32 | dims[4] u64` (little-endian) and
/// then the C-order payload.
pub fn write_tensor<W: Write>(out: &mut W, dims: [u64; 4], data: &[u8]) -> io::Result<()> {
    let expected: u64 = dims.iter().product();
    if expected != data.len() as u64 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("dims {dims:?} describe {expected} bytes but payload has {}", data.len()),
        ));
    }
    out.write_all(TENSOR_MAGIC)?;
    out.write_all(&DTYPE_U8.to_le_bytes())?;
    out.write_all(&4u32.to_le_bytes())?;
    for d in dims {
        out.write_all(&d.to_le_bytes())?;
    }
    out.write_all(data)
}

pub fn read_tensor<R: Read>(input: &mut R) -> io::Result<([u64; 4], Vec<u8>)> {
    let bad = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let dtype = u32::from_le_bytes(word);
    if dtype != DTYPE_U8 {
        return Err(bad(format!("unsupported dtype code {dtype}")));
    }
    input.read_exact(&mut word)?;
    let ndim = u32::from_le_bytes(word);
    if ndim != 4 {
        return Err(bad(format!("expected 4 dims, found {ndim}")));
    }
    let mut dims = [0u64; 4];
    for d in &mut dims {
        let mut b = [0u8; 8];
        input.read_exact(&mut b)?;
        *d = u64::from_le_bytes(b);
    }
    let len = dims.iter().try_fold(1u64, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("dims overflow".into()))?;
    let mut data = vec![0u8; len as usize];
    input.read_exact(&mut data)?;
    Ok((dims, data))
}
