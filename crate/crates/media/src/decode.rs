//! Fused decode-crop and the decode-then-crop reference.
//!
//! Both paths pick, for each requested time `t`, the frame with the largest
//! presentation time not after `t` (the first frame if `t` precedes it) and
//! run the same integer color conversion and bilinear scaler, so their
//! outputs are byte-identical. They differ only in how much work they do:
//!
//! * fused seeks to the keyframe before each sample that lies beyond the
//!   current decode position, stops decoding once the sample is covered, and
//!   converts only the crop rectangle of the chosen frames;
//! * reference decodes the whole span from the keyframe before
//!   `local_start`, converts every span frame at full size, then crops,
//!   flips and rescales the chosen ones.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use ffmpeg_next as ffmpeg;
use ffmpeg::codec::threading;
use ffmpeg::format::Pixel;
use ffmpeg::software::scaling;
use ffmpeg::util::frame::Video as Frame;
use serde::{Deserialize, Serialize};

use vidpipe_core::clip::{SourceInfo, StageTiming};
use vidpipe_core::loader::{DecodeError, Pipeline};
use vidpipe_core::pixels::{resize_bilinear_chw, RgbImage, Yuv420};
use vidpipe_core::{ClipDecoder, ClipRequest, CropRect, DecodeCounters, DecodedClip, FrameGeometry};

use crate::container::{Container, VideoStream};
use crate::error::MediaError;

static FRAMES_DECODED: AtomicU64 = AtomicU64::new(0);

/// Frames produced by any decoder in this process. Probing never moves it.
pub fn frames_decoded_total() -> u64 {
    FRAMES_DECODED.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderOptions {
    /// Codec-internal thread cap. Parallelism normally comes from loader
    /// workers, hence the default of 1.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_threads() -> usize {
    1
}

impl Default for DecoderOptions {
    fn default() -> Self {
        Self {
            threads: default_threads(),
        }
    }
}

/// One decoded picture in planar 4:2:0 with its local display interval.
pub struct DecodedFrame {
    frame: Frame,
    pub pts: f64,
    pub duration: f64,
}

impl DecodedFrame {
    pub fn covers(&self, t: f64) -> bool {
        self.pts <= t + 1e-9 && t + 1e-9 < self.pts + self.duration
    }

    pub fn width(&self) -> u32 {
        self.frame.width()
    }

    pub fn height(&self) -> u32 {
        self.frame.height()
    }

    pub fn yuv(&self) -> Yuv420<'_> {
        Yuv420 {
            width: self.frame.width(),
            height: self.frame.height(),
            y: self.frame.data(0),
            y_stride: self.frame.stride(0),
            u: self.frame.data(1),
            u_stride: self.frame.stride(1),
            v: self.frame.data(2),
            v_stride: self.frame.stride(2),
        }
    }

    /// The raw frame, for re-encoding.
    pub fn as_frame(&self) -> &Frame {
        &self.frame
    }
}

/// Sequential frame access with keyframe seeking and work counters.
pub struct VideoReader {
    container: Container,
    stream: VideoStream,
    decoder: ffmpeg::decoder::Video,
    to_yuv420: Option<scaling::Context>,
    sent_eof: bool,
    last_pts: Option<f64>,
    pub counters: DecodeCounters,
}

impl VideoReader {
    pub fn open(container: Container, options: DecoderOptions) -> Result<Self, MediaError> {
        let stream = container.video()?;
        let params = container
            .input_ref()
            .stream(stream.index)
            .map(|s| s.parameters())
            .ok_or_else(|| MediaError::probe(container.path(), "video stream vanished"))?;
        let mut ctx = ffmpeg::codec::Context::new();
        ctx.set_parameters(params)
            .map_err(|e| MediaError::decode(container.path(), None, e))?;
        ctx.set_threading(threading::Config {
            kind: threading::Type::Frame,
            count: options.threads.max(1),
            safe: true,
        });
        let decoder = ctx
            .decoder()
            .video()
            .map_err(|e| MediaError::decode(container.path(), None, e))?;
        Ok(Self {
            container,
            stream,
            decoder,
            to_yuv420: None,
            sent_eof: false,
            last_pts: None,
            counters: DecodeCounters::default(),
        })
    }

    pub fn stream(&self) -> &VideoStream {
        &self.stream
    }

    pub fn path(&self) -> &Path {
        self.container.path()
    }

    pub fn geometry(&self) -> FrameGeometry {
        FrameGeometry::new(self.stream.width, self.stream.height)
    }

    fn error(&self, timestamp: Option<f64>, message: impl ToString) -> MediaError {
        MediaError::decode(self.container.path(), timestamp, message)
    }

    /// Repositions at the last keyframe at or before `ticks`.
    pub fn seek(&mut self, ticks: i64) -> Result<(), MediaError> {
        self.container.seek_keyframe(self.stream.index, ticks)?;
        self.decoder.flush();
        self.sent_eof = false;
        self.last_pts = None;
        self.counters.seeks += 1;
        Ok(())
    }

    /// Next frame in presentation order, or `None` at end of stream.
    pub fn next_frame(&mut self) -> Result<Option<DecodedFrame>, MediaError> {
        loop {
            let mut frame = Frame::empty();
            match self.decoder.receive_frame(&mut frame) {
                Ok(()) => {
                    self.counters.frames_decoded += 1;
                    FRAMES_DECODED.fetch_add(1, Ordering::Relaxed);
                    return self.finish(frame).map(Some);
                }
                Err(ffmpeg::Error::Eof) => return Ok(None),
                Err(ffmpeg::Error::Other { errno }) if errno == ffmpeg::util::error::EAGAIN => {}
                Err(e) => return Err(self.error(self.last_pts, e)),
            }
            if self.sent_eof {
                return Ok(None);
            }
            self.feed()?;
        }
    }

    fn feed(&mut self) -> Result<(), MediaError> {
        loop {
            let mut packet = ffmpeg::Packet::empty();
            match packet.read(self.container.input()) {
                Ok(()) => {
                    self.counters.packets_read += 1;
                    if packet.stream() != self.stream.index {
                        continue;
                    }
                    let at = packet.pts().or(packet.dts()).map(|p| self.stream.seconds(p));
                    return self.decoder.send_packet(&packet).map_err(|e| self.error(at, e));
                }
                Err(ffmpeg::Error::Eof) => {
                    self.sent_eof = true;
                    return self.decoder.send_eof().map_err(|e| self.error(self.last_pts, e));
                }
                Err(e) => return Err(self.error(self.last_pts, e)),
            }
        }
    }

    fn finish(&mut self, frame: Frame) -> Result<DecodedFrame, MediaError> {
        let nominal = self.stream.frame_duration();
        let pkt_duration = unsafe { (*frame.as_ptr()).pkt_duration };
        let duration = if pkt_duration > 0 {
            pkt_duration as f64 * self.stream.time_base.0 as f64 / self.stream.time_base.1 as f64
        } else {
            nominal
        };
        let pts = match frame.timestamp().or(frame.pts()) {
            Some(ticks) => self.stream.seconds(ticks),
            None => self.last_pts.map_or(0.0, |p| p + duration),
        };
        self.last_pts = Some(pts);
        let frame = if matches!(frame.format(), Pixel::YUV420P | Pixel::YUVJ420P) {
            frame
        } else {
            self.convert_to_yuv420(&frame)?
        };
        Ok(DecodedFrame { frame, pts, duration })
    }

    fn convert_to_yuv420(&mut self, frame: &Frame) -> Result<Frame, MediaError> {
        if self.to_yuv420.is_none() {
            let ctx = scaling::Context::get(
                frame.format(),
                frame.width(),
                frame.height(),
                Pixel::YUV420P,
                frame.width(),
                frame.height(),
                scaling::Flags::POINT | scaling::Flags::ACCURATE_RND,
            )
            .map_err(|e| self.error(self.last_pts, e))?;
            self.to_yuv420 = Some(ctx);
        }
        let mut out = Frame::empty();
        self.to_yuv420
            .as_mut()
            .expect("scaler initialised above")
            .run(frame, &mut out)
            .map_err(|e| MediaError::decode(self.container.path(), self.last_pts, e))?;
        Ok(out)
    }

    pub fn bytes_read(&self) -> u64 {
        self.container.bytes_read()
    }
}

fn read_source(path: &Path) -> Result<(Vec<u8>, f64), MediaError> {
    let t0 = Instant::now();
    let data = std::fs::read(path).map_err(|e| MediaError::io(path, e))?;
    Ok((data, t0.elapsed().as_secs_f64() * 1e3))
}

fn open_request(request: &ClipRequest, options: DecoderOptions) -> Result<(VideoReader, f64), MediaError> {
    request.validate().map_err(MediaError::Input)?;
    let (data, read_ms) = read_source(&request.chunk_path)?;
    let container = Container::open_memory(&request.chunk_path, data)?;
    let reader = VideoReader::open(container, options)?;
    let geometry = reader.geometry();
    if !request.crop.fits(geometry) {
        return Err(MediaError::Input(format!(
            "crop {:?} lies outside the {}x{} frame",
            request.crop, geometry.width, geometry.height
        )));
    }
    Ok((reader, read_ms))
}

fn source_info(reader: &VideoReader) -> SourceInfo {
    SourceInfo {
        path: reader.path().to_path_buf(),
        width: reader.stream().width,
        height: reader.stream().height,
        duration: reader.stream().duration,
    }
}

fn scale_into(img: &RgbImage, request: &ClipRequest, out: &mut [u8]) {
    resize_bilinear_chw(img, request.target_w, request.target_h, out);
}

/// Decodes only what `request` needs and crops, flips and scales each frame
/// straight out of the decoder's planes.
pub fn decode_fused(request: &ClipRequest, options: DecoderOptions) -> Result<DecodedClip, MediaError> {
    let (mut reader, read_ms) = open_request(request, options)?;
    let t_start = Instant::now();
    let mut crop_time = 0.0;
    let timestamps = request.timestamps();
    let frame_len = 3 * request.target_h as usize * request.target_w as usize;
    let mut frames = vec![0u8; frame_len * timestamps.len()];
    let mut frame_pts = Vec::with_capacity(timestamps.len());

    let mut current: Option<DecodedFrame> = None;
    let mut exhausted = false;
    for (i, &t) in timestamps.iter().enumerate() {
        let covered = current.as_ref().is_some_and(|f| f.covers(t) || f.pts > t);
        if !covered && !exhausted {
            let key = reader.stream().keyframe_at_or_before(t);
            let position = current.as_ref().map(|f| reader.stream().ticks(f.pts));
            let need_seek = match (key, position) {
                (Some(k), Some(p)) => k > p,
                (Some(_), None) => true,
                (None, _) => false,
            };
            if need_seek {
                reader.seek(key.expect("seek only with a keyframe"))?;
            } else if current.is_none() {
                reader.seek(reader.stream().origin)?;
            }
            loop {
                match reader.next_frame()? {
                    Some(f) => {
                        let done = f.pts + f.duration > t + 1e-9;
                        current = Some(f);
                        if done {
                            break;
                        }
                    }
                    None => {
                        exhausted = true;
                        break;
                    }
                }
            }
        }
        let f = current
            .as_ref()
            .ok_or_else(|| MediaError::decode(reader.path(), Some(t), "no frame at or before timestamp"))?;
        let t0 = Instant::now();
        if i > 0 && frame_pts.last() == Some(&f.pts) {
            // Same source frame as the previous timestamp.
            frames.copy_within((i - 1) * frame_len..i * frame_len, i * frame_len);
        } else {
            let region = f.yuv().convert_region(request.crop, request.hflip);
            reader.counters.frames_converted += 1;
            reader.counters.pixels_converted += request.crop.area();
            scale_into(&region, request, &mut frames[i * frame_len..(i + 1) * frame_len]);
        }
        crop_time += t0.elapsed().as_secs_f64() * 1e3;
        frame_pts.push(f.pts);
    }
    let total = t_start.elapsed().as_secs_f64() * 1e3;
    let mut counters = reader.counters;
    counters.bytes_read = reader.bytes_read();
    Ok(DecodedClip {
        frames,
        shape: [timestamps.len(), 3, request.target_h as usize, request.target_w as usize],
        timestamps,
        frame_pts,
        source: source_info(&reader),
        counters,
        timing: StageTiming {
            read_ms,
            decode_ms: total - crop_time,
            crop_ms: crop_time,
        },
    })
}

fn convert_full(f: &DecodedFrame, counters: &mut DecodeCounters, elapsed_ms: &mut f64) -> (f64, RgbImage) {
    let t0 = Instant::now();
    let rgb = f.yuv().to_rgb();
    counters.frames_converted += 1;
    counters.pixels_converted += u64::from(f.width()) * u64::from(f.height());
    *elapsed_ms += t0.elapsed().as_secs_f64() * 1e3;
    (f.pts, rgb)
}

/// Full-frame decode of the request span, then crop, flip and rescale as
/// image operations.
pub fn decode_then_crop(request: &ClipRequest, options: DecoderOptions) -> Result<DecodedClip, MediaError> {
    let (mut reader, read_ms) = open_request(request, options)?;
    let t_start = Instant::now();
    let mut crop_time = 0.0;
    let start_key = reader
        .stream()
        .keyframe_at_or_before(request.local_start)
        .unwrap_or(reader.stream().origin);
    reader.seek(start_key)?;

    let mut span: Vec<(f64, RgbImage)> = Vec::new();
    let mut before_span: Option<DecodedFrame> = None;
    while let Some(f) = reader.next_frame()? {
        if f.pts >= request.local_end - 1e-9 && !span.is_empty() {
            break;
        }
        if f.pts + f.duration > request.local_start + 1e-9 {
            span.push(convert_full(&f, &mut reader.counters, &mut crop_time));
        } else {
            before_span = Some(f);
        }
    }
    if span.is_empty() {
        // The stream ends before the span starts; hold the last frame.
        let f = before_span
            .ok_or_else(|| MediaError::decode(reader.path(), Some(request.local_start), "span holds no frames"))?;
        span.push(convert_full(&f, &mut reader.counters, &mut crop_time));
    }

    let timestamps = request.timestamps();
    let frame_len = 3 * request.target_h as usize * request.target_w as usize;
    let mut frames = vec![0u8; frame_len * timestamps.len()];
    let mut frame_pts = Vec::with_capacity(timestamps.len());
    for (i, &t) in timestamps.iter().enumerate() {
        let idx = span.partition_point(|(pts, _)| *pts <= t + 1e-9).saturating_sub(1);
        let (pts, rgb) = &span[idx];
        let t0 = Instant::now();
        let mut img = rgb.crop(request.crop);
        if request.hflip {
            img = img.hflip();
        }
        scale_into(&img, request, &mut frames[i * frame_len..(i + 1) * frame_len]);
        crop_time += t0.elapsed().as_secs_f64() * 1e3;
        frame_pts.push(*pts);
    }
    let total = t_start.elapsed().as_secs_f64() * 1e3;
    let mut counters = reader.counters;
    counters.bytes_read = reader.bytes_read();
    Ok(DecodedClip {
        frames,
        shape: [timestamps.len(), 3, request.target_h as usize, request.target_w as usize],
        timestamps,
        frame_pts,
        source: source_info(&reader),
        counters,
        timing: StageTiming {
            read_ms,
            decode_ms: total - crop_time,
            crop_ms: crop_time,
        },
    })
}

/// Decodes every frame of a file at full size, in presentation order.
pub fn decode_all(path: &Path, options: DecoderOptions) -> Result<Vec<(f64, RgbImage)>, MediaError> {
    let container = Container::open_file(path)?;
    let mut reader = VideoReader::open(container, options)?;
    let mut out = Vec::new();
    while let Some(f) = reader.next_frame()? {
        out.push((f.pts, f.yuv().to_rgb()));
    }
    Ok(out)
}

/// Full-size RGB frame displayed at local time `t`.
pub fn frame_at(path: &Path, t: f64, options: DecoderOptions) -> Result<(f64, RgbImage), MediaError> {
    let container = Container::open_file(path)?;
    let mut reader = VideoReader::open(container, options)?;
    let key = reader.stream().keyframe_at_or_before(t).unwrap_or(reader.stream().origin);
    reader.seek(key)?;
    let mut chosen: Option<DecodedFrame> = None;
    while let Some(f) = reader.next_frame()? {
        if chosen.is_some() && f.pts > t + 1e-9 {
            break;
        }
        let done = f.covers(t);
        chosen = Some(f);
        if done {
            break;
        }
    }
    let f = chosen.ok_or_else(|| MediaError::decode(path, Some(t), "no frame at timestamp"))?;
    Ok((f.pts, f.yuv().to_rgb()))
}

/// Crop rectangle covering the whole frame of `path`.
pub fn full_frame(path: &Path) -> Result<CropRect, MediaError> {
    let info = crate::probe(path)?;
    Ok(CropRect::new(0, 0, info.width, info.height))
}

/// [`ClipDecoder`] for either pipeline.
#[derive(Debug, Clone, Copy, Default)]
pub struct LibavDecoder {
    pub pipeline: Pipeline,
    pub options: DecoderOptions,
}

impl LibavDecoder {
    pub fn new(pipeline: Pipeline, options: DecoderOptions) -> Self {
        Self { pipeline, options }
    }

    pub fn decode(&self, request: &ClipRequest) -> Result<DecodedClip, MediaError> {
        match self.pipeline {
            Pipeline::Fused => decode_fused(request, self.options),
            Pipeline::Reference => decode_then_crop(request, self.options),
        }
    }
}

impl ClipDecoder for LibavDecoder {
    fn decode(&self, request: &ClipRequest) -> Result<DecodedClip, DecodeError> {
        LibavDecoder::decode(self, request).map_err(Into::into)
    }
}
