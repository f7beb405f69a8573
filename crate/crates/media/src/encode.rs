//! H.264-in-MP4 writer with pinned, reproducible encoder settings.

use std::path::{Path, PathBuf};

use ffmpeg_next as ffmpeg;
use ffmpeg::format::Pixel;
use ffmpeg::util::frame::Video as Frame;
use ffmpeg::{codec, encoder, format, picture, Dictionary, Rational};
use serde::{Deserialize, Serialize};

use crate::error::MediaError;

/// Argument template recorded in manifest headers. Placeholders are filled
/// from [`EncodeSettings`].
pub const ARGS_TEMPLATE: &str = "codec={codec} preset={preset} b={bitrate} \
x264-params=keyint={gop}:min-keyint={gop}:scenecut=0:bframes=0[:vbv-maxrate={kbps}:vbv-bufsize={kbps}:nal-hrd=cbr] \
threads={threads} pix_fmt=yuv420p container=mp4";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodeSettings {
    pub width: u32,
    pub height: u32,
    /// Frames per second as `(numerator, denominator)`.
    pub frame_rate: (i32, i32),
    /// Bits/sec.
    pub bitrate: u64,
    /// Keyframe interval in frames.
    pub gop: u32,
    pub preset: String,
    /// Constant bitrate with HRD filler, so file sizes track the bitrate.
    pub cbr: bool,
    pub threads: usize,
    pub codec: String,
}

impl EncodeSettings {
    /// One-second GOP, no B-frames, CBR, single-threaded `veryfast` x264.
    pub fn h264(width: u32, height: u32, fps: u32, bitrate: u64) -> Self {
        Self {
            width,
            height,
            frame_rate: (fps as i32, 1),
            bitrate,
            gop: fps.max(1),
            preset: "veryfast".into(),
            cbr: true,
            threads: 1,
            codec: "libx264".into(),
        }
    }

    pub fn x264_params(&self) -> String {
        let mut params = format!("keyint={0}:min-keyint={0}:scenecut=0:bframes=0", self.gop);
        if self.cbr {
            let kbps = (self.bitrate / 1000).max(1);
            params.push_str(&format!(":vbv-maxrate={kbps}:vbv-bufsize={kbps}:nal-hrd=cbr"));
        }
        params
    }

    /// The template with this configuration filled in.
    pub fn describe(&self) -> String {
        format!(
            "codec={} preset={} b={} x264-params={} threads={} pix_fmt=yuv420p container=mp4",
            self.codec,
            self.preset,
            self.bitrate,
            self.x264_params(),
            self.threads
        )
    }

    fn validate(&self) -> Result<(), String> {
        if self.width < 2 || self.height < 2 || self.width % 2 != 0 || self.height % 2 != 0 {
            return Err(format!("{}x{} must be even and at least 2x2", self.width, self.height));
        }
        if self.frame_rate.0 <= 0 || self.frame_rate.1 <= 0 {
            return Err("frame rate must be positive".into());
        }
        if self.bitrate == 0 || self.gop == 0 {
            return Err("bitrate and gop must be positive".into());
        }
        Ok(())
    }
}

/// Encodes 4:2:0 frames into an MP4 file, one frame per `1/fps` tick.
pub struct VideoWriter {
    path: PathBuf,
    octx: format::context::Output,
    encoder: encoder::Video,
    encoder_tb: Rational,
    stream_tb: Rational,
    next_pts: i64,
    settings: EncodeSettings,
}

impl VideoWriter {
    pub fn create(path: &Path, settings: &EncodeSettings) -> Result<Self, MediaError> {
        crate::init();
        settings.validate().map_err(|m| MediaError::encode(path, m))?;
        let fail = |e: ffmpeg::Error| MediaError::encode(path, e);
        let codec = encoder::find_by_name(&settings.codec)
            .ok_or_else(|| MediaError::encode(path, format!("encoder {} is not available", settings.codec)))?;
        let mut octx = format::output(&path).map_err(fail)?;
        let global_header = octx.format().flags().contains(format::Flags::GLOBAL_HEADER);

        let encoder_tb = Rational::new(settings.frame_rate.1, settings.frame_rate.0);
        // Allocated against the codec so its private defaults are applied.
        let ctx = unsafe {
            let raw = ffmpeg::ffi::avcodec_alloc_context3(codec.as_ptr());
            if raw.is_null() {
                return Err(MediaError::encode(path, "out of memory"));
            }
            codec::Context::wrap(raw, None)
        };
        let mut enc = ctx.encoder().video().map_err(fail)?;
        enc.set_width(settings.width);
        enc.set_height(settings.height);
        enc.set_format(Pixel::YUV420P);
        enc.set_time_base(encoder_tb);
        enc.set_frame_rate(Some(Rational::new(settings.frame_rate.0, settings.frame_rate.1)));
        enc.set_bit_rate(settings.bitrate as usize);
        enc.set_gop(settings.gop);
        enc.set_max_b_frames(0);
        if settings.cbr {
            enc.set_max_bit_rate(settings.bitrate as usize);
            unsafe {
                (*enc.as_mut_ptr()).rc_buffer_size = settings.bitrate.min(i32::MAX as u64) as i32;
            }
        }
        if global_header {
            enc.set_flags(codec::Flags::GLOBAL_HEADER);
        }
        let mut opts = Dictionary::new();
        opts.set("preset", &settings.preset);
        opts.set("threads", &settings.threads.to_string());
        if settings.codec == "libx264" {
            opts.set("x264-params", &settings.x264_params());
        }
        let encoder = enc.open_as_with(codec, opts).map_err(fail)?;

        let mut stream = octx.add_stream(codec).map_err(fail)?;
        stream.set_parameters(&encoder);
        stream.set_time_base(encoder_tb);
        stream.set_avg_frame_rate(Rational::new(settings.frame_rate.0, settings.frame_rate.1));
        octx.write_header().map_err(fail)?;
        let stream_tb = octx.stream(0).expect("stream added above").time_base();
        Ok(Self {
            path: path.to_path_buf(),
            octx,
            encoder,
            encoder_tb,
            stream_tb,
            next_pts: 0,
            settings: settings.clone(),
        })
    }

    pub fn settings(&self) -> &EncodeSettings {
        &self.settings
    }

    /// A blank frame of the right size and format to fill and submit.
    pub fn blank_frame(&self) -> Frame {
        Frame::new(Pixel::YUV420P, self.settings.width, self.settings.height)
    }

    /// Encodes `frame` as the next picture. Timestamps are assigned here.
    pub fn write(&mut self, frame: &mut Frame) -> Result<(), MediaError> {
        if frame.width() != self.settings.width || frame.height() != self.settings.height {
            return Err(MediaError::encode(
                &self.path,
                format!(
                    "frame is {}x{} but the stream is {}x{}",
                    frame.width(),
                    frame.height(),
                    self.settings.width,
                    self.settings.height
                ),
            ));
        }
        frame.set_pts(Some(self.next_pts));
        // A picture type left over from decoding would force keyframes.
        frame.set_kind(picture::Type::None);
        self.next_pts += 1;
        self.encoder
            .send_frame(frame)
            .map_err(|e| MediaError::encode(&self.path, e))?;
        self.drain()
    }

    fn drain(&mut self) -> Result<(), MediaError> {
        let mut packet = ffmpeg::Packet::empty();
        loop {
            match self.encoder.receive_packet(&mut packet) {
                Ok(()) => {
                    packet.set_stream(0);
                    packet.rescale_ts(self.encoder_tb, self.stream_tb);
                    packet
                        .write_interleaved(&mut self.octx)
                        .map_err(|e| MediaError::encode(&self.path, e))?;
                }
                Err(ffmpeg::Error::Eof) => return Ok(()),
                Err(ffmpeg::Error::Other { errno }) if errno == ffmpeg::util::error::EAGAIN => return Ok(()),
                Err(e) => return Err(MediaError::encode(&self.path, e)),
            }
        }
    }

    pub fn frames_written(&self) -> i64 {
        self.next_pts
    }

    /// Flushes the encoder and finalises the container. Returns the file
    /// size in bytes.
    pub fn finish(mut self) -> Result<u64, MediaError> {
        self.encoder
            .send_eof()
            .map_err(|e| MediaError::encode(&self.path, e))?;
        self.drain()?;
        self.octx
            .write_trailer()
            .map_err(|e| MediaError::encode(&self.path, e))?;
        std::fs::metadata(&self.path)
            .map(|m| m.len())
            .map_err(|e| MediaError::io(&self.path, e))
    }
}
