//! Demuxer access from a file or from an in-memory buffer.
//!
//! Containers are opened without `avformat_find_stream_info`, so nothing is
//! decoded to learn stream metadata: width, height, duration and the
//! keyframe index all come from the container headers.

use std::ffi::CString;
use std::mem::ManuallyDrop;
use std::os::raw::{c_int, c_void};
use std::path::{Path, PathBuf};
use std::ptr;

use ffmpeg_next as ffmpeg;
use ffmpeg::ffi;
use ffmpeg::format::context::Input;
use ffmpeg::media::Type as MediaType;

use crate::error::MediaError;

const AVIO_BUFFER: usize = 32 * 1024;

struct MemSource {
    data: Vec<u8>,
    pos: usize,
    bytes_read: u64,
}

unsafe extern "C" fn mem_read(opaque: *mut c_void, buf: *mut u8, size: c_int) -> c_int {
    let src = &mut *(opaque as *mut MemSource);
    let n = (size.max(0) as usize).min(src.data.len() - src.pos);
    if n == 0 {
        return ffi::AVERROR_EOF;
    }
    ptr::copy_nonoverlapping(src.data.as_ptr().add(src.pos), buf, n);
    src.pos += n;
    src.bytes_read += n as u64;
    n as c_int
}

unsafe extern "C" fn mem_seek(opaque: *mut c_void, offset: i64, whence: c_int) -> i64 {
    let src = &mut *(opaque as *mut MemSource);
    let len = src.data.len() as i64;
    if whence & ffi::AVSEEK_SIZE as c_int != 0 {
        return len;
    }
    let target = match whence & !(ffi::AVSEEK_FORCE as c_int) {
        0 => offset,
        1 => src.pos as i64 + offset,
        2 => len + offset,
        _ => return -1,
    };
    if !(0..=len).contains(&target) {
        return -1;
    }
    src.pos = target as usize;
    target
}

/// An open demuxer. Not shareable across threads; open one per request.
pub struct Container {
    input: ManuallyDrop<Input>,
    avio: *mut ffi::AVIOContext,
    source: Option<Box<MemSource>>,
    path: PathBuf,
}

// The raw pointers are owned exclusively by this value.
unsafe impl Send for Container {}

fn av_error(code: c_int) -> String {
    ffmpeg::Error::from(code).to_string()
}

impl Container {
    pub fn open_file(path: &Path) -> Result<Self, MediaError> {
        crate::init();
        let c_path = CString::new(path.to_string_lossy().as_bytes())
            .map_err(|_| MediaError::probe(path, "path contains a NUL byte"))?;
        unsafe {
            let mut ctx = ptr::null_mut();
            let ret = ffi::avformat_open_input(&mut ctx, c_path.as_ptr(), ptr::null_mut(), ptr::null_mut());
            if ret < 0 {
                return Err(MediaError::probe(path, av_error(ret)));
            }
            Ok(Self {
                input: ManuallyDrop::new(Input::wrap(ctx)),
                avio: ptr::null_mut(),
                source: None,
                path: path.to_path_buf(),
            })
        }
    }

    /// Demuxes `data`, the full contents of `path`, from memory.
    pub fn open_memory(path: &Path, data: Vec<u8>) -> Result<Self, MediaError> {
        crate::init();
        let mut source = Box::new(MemSource {
            data,
            pos: 0,
            bytes_read: 0,
        });
        unsafe {
            let buffer = ffi::av_malloc(AVIO_BUFFER) as *mut u8;
            if buffer.is_null() {
                return Err(MediaError::probe(path, "out of memory"));
            }
            let mut avio = ffi::avio_alloc_context(
                buffer,
                AVIO_BUFFER as c_int,
                0,
                &mut *source as *mut MemSource as *mut c_void,
                Some(mem_read),
                None,
                Some(mem_seek),
            );
            if avio.is_null() {
                ffi::av_free(buffer as *mut c_void);
                return Err(MediaError::probe(path, "out of memory"));
            }
            let mut ctx = ffi::avformat_alloc_context();
            (*ctx).pb = avio;
            (*ctx).flags |= ffi::AVFMT_FLAG_CUSTOM_IO as c_int;
            let ret = ffi::avformat_open_input(&mut ctx, ptr::null(), ptr::null_mut(), ptr::null_mut());
            if ret < 0 {
                // avformat_open_input frees the context on failure.
                ffi::av_freep(&mut (*avio).buffer as *mut *mut u8 as *mut c_void);
                ffi::avio_context_free(&mut avio);
                return Err(MediaError::probe(path, av_error(ret)));
            }
            Ok(Self {
                input: ManuallyDrop::new(Input::wrap(ctx)),
                avio,
                source: Some(source),
                path: path.to_path_buf(),
            })
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Bytes pulled by the demuxer so far (memory sources only).
    pub fn bytes_read(&self) -> u64 {
        self.source.as_ref().map_or(0, |s| s.bytes_read)
    }

    pub fn input(&mut self) -> &mut Input {
        &mut self.input
    }

    pub fn input_ref(&self) -> &Input {
        &self.input
    }

    pub fn video(&self) -> Result<VideoStream, MediaError> {
        let stream = self
            .input
            .streams()
            .best(MediaType::Video)
            .ok_or_else(|| MediaError::probe(&self.path, "no video stream"))?;
        let params = stream.parameters();
        let (width, height, par_bit_rate) = unsafe {
            let p = params.as_ptr();
            ((*p).width, (*p).height, (*p).bit_rate)
        };
        if width <= 0 || height <= 0 {
            return Err(MediaError::probe(&self.path, "video stream has no geometry"));
        }
        let tb = stream.time_base();
        let time_base = (tb.numerator() as i64, tb.denominator() as i64);
        if time_base.0 <= 0 || time_base.1 <= 0 {
            return Err(MediaError::probe(&self.path, "invalid stream time base"));
        }
        let start = stream.start_time();
        let origin = if start == ffi::AV_NOPTS_VALUE { 0 } else { start };
        let container_duration = unsafe { (*self.input.as_ptr()).duration };
        let duration = if stream.duration() > 0 {
            stream.duration() as f64 * time_base.0 as f64 / time_base.1 as f64
        } else if container_duration > 0 {
            container_duration as f64 / f64::from(ffi::AV_TIME_BASE)
        } else {
            return Err(MediaError::probe(&self.path, "unknown duration"));
        };
        let rate = stream.avg_frame_rate();
        let rate = if rate.numerator() > 0 && rate.denominator() > 0 {
            rate
        } else {
            stream.rate()
        };
        let frame_rate = (rate.numerator(), rate.denominator().max(1));
        let keyframes = unsafe {
            let st = *(*self.input.as_ptr()).streams.add(stream.index());
            let entries = (*st).index_entries;
            let n = (*st).nb_index_entries.max(0) as usize;
            let mut keys: Vec<i64> = (0..n)
                .map(|i| *entries.add(i))
                .filter(|e| e.flags() & ffi::AVINDEX_KEYFRAME as c_int != 0)
                .map(|e| e.timestamp)
                .collect();
            keys.sort_unstable();
            keys.dedup();
            keys
        };
        let container_bit_rate = unsafe { (*self.input.as_ptr()).bit_rate };
        let bit_rate = if par_bit_rate > 0 { par_bit_rate } else { container_bit_rate.max(0) } as u64;
        let codec = ffmpeg::codec::decoder::find(params.id())
            .map(|c| c.name().to_string())
            .unwrap_or_else(|| format!("{:?}", params.id()).to_lowercase());
        let frames = stream.frames();
        Ok(VideoStream {
            index: stream.index(),
            width: width as u32,
            height: height as u32,
            time_base,
            origin,
            duration,
            frame_rate,
            frame_count: (frames > 0).then_some(frames as u64),
            bit_rate,
            codec,
            keyframes,
        })
    }

    /// Seeks `stream` to the last keyframe at or before `ticks`.
    pub fn seek_keyframe(&mut self, stream: usize, ticks: i64) -> Result<(), MediaError> {
        let ret = unsafe {
            ffi::av_seek_frame(
                self.input.as_mut_ptr(),
                stream as c_int,
                ticks,
                ffi::AVSEEK_FLAG_BACKWARD as c_int,
            )
        };
        if ret < 0 {
            return Err(MediaError::decode(&self.path, None, format!("seek failed: {}", av_error(ret))));
        }
        Ok(())
    }
}

impl Drop for Container {
    fn drop(&mut self) {
        unsafe {
            ManuallyDrop::drop(&mut self.input);
            if !self.avio.is_null() {
                ffi::av_freep(&mut (*self.avio).buffer as *mut *mut u8 as *mut c_void);
                ffi::avio_context_free(&mut self.avio);
            }
        }
    }
}

/// Header-derived facts about the primary video stream.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoStream {
    pub index: usize,
    pub width: u32,
    pub height: u32,
    /// `(numerator, denominator)` seconds per tick.
    pub time_base: (i64, i64),
    /// Tick value of local time zero.
    pub origin: i64,
    pub duration: f64,
    pub frame_rate: (i32, i32),
    pub frame_count: Option<u64>,
    /// Bits/sec.
    pub bit_rate: u64,
    pub codec: String,
    /// Keyframe timestamps from the container index, ascending, in ticks.
    pub keyframes: Vec<i64>,
}

impl VideoStream {
    pub fn seconds(&self, ticks: i64) -> f64 {
        (ticks - self.origin) as f64 * self.time_base.0 as f64 / self.time_base.1 as f64
    }

    /// Largest tick not after local time `t`.
    pub fn ticks(&self, t: f64) -> i64 {
        let raw = t * self.time_base.1 as f64 / self.time_base.0 as f64;
        // Absorb float noise so that ticks(seconds(k)) == k.
        self.origin + (raw + 1e-6).floor() as i64
    }

    pub fn fps(&self) -> f64 {
        f64::from(self.frame_rate.0) / f64::from(self.frame_rate.1)
    }

    pub fn frame_duration(&self) -> f64 {
        let fps = self.fps();
        if fps > 0.0 {
            1.0 / fps
        } else {
            0.0
        }
    }

    /// Last indexed keyframe at or before local time `t`, in ticks.
    pub fn keyframe_at_or_before(&self, t: f64) -> Option<i64> {
        let ticks = self.ticks(t);
        let i = self.keyframes.partition_point(|&k| k <= ticks);
        i.checked_sub(1).map(|i| self.keyframes[i])
    }

    pub fn keyframe_times(&self) -> Vec<f64> {
        self.keyframes.iter().map(|&k| self.seconds(k)).collect()
    }
}

/// Everything `probe` learns from a container without decoding.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ProbeInfo {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub duration: f64,
    pub fps: f64,
    pub frame_count: Option<u64>,
    pub codec: String,
    pub bit_rate: u64,
    pub keyframes: Vec<f64>,
}

pub fn probe(path: &Path) -> Result<ProbeInfo, MediaError> {
    if !path.is_file() {
        return Err(MediaError::probe(path, "no such file"));
    }
    let container = Container::open_file(path)?;
    let v = container.video()?;
    Ok(ProbeInfo {
        path: path.to_path_buf(),
        width: v.width,
        height: v.height,
        duration: v.duration,
        fps: v.fps(),
        frame_count: v.frame_count,
        codec: v.codec.clone(),
        bit_rate: v.bit_rate,
        keyframes: v.keyframe_times(),
    })
}
