//! libav backend for `vidpipe`: header-only probing, fused and reference
//! clip decoding, H.264 encoding, video chunking and synthetic corpora.

use std::sync::Once;

pub mod chunker;
pub mod container;
pub mod corpus;
pub mod decode;
pub mod encode;
pub mod error;
pub mod pattern;
mod pool;

pub use chunker::{chunk_header, chunk_video, ChunkMode, ChunkOptions};
pub use container::{probe, Container, ProbeInfo, VideoStream};
pub use decode::{decode_fused, decode_then_crop, frames_decoded_total, DecoderOptions, LibavDecoder};
pub use corpus::{make_synthetic_corpus, CorpusSpec};
pub use encode::{EncodeSettings, VideoWriter, ARGS_TEMPLATE};
pub use error::MediaError;
pub use pattern::{read_code, Pattern};

/// Initialises libav once per process and silences its console logging.
pub fn init() {
    static INIT: Once = Once::new();
    INIT.call_once(|| {
        ffmpeg_next::init().expect("libav failed to initialise");
        ffmpeg_next::util::log::set_level(ffmpeg_next::util::log::Level::Fatal);
    });
}
