//! Core of `vidpipe`: metadata-only crop sampling, chunk planning, pixel
//! kernels, the multi-worker loader and analytical performance models.
//!
//! Nothing here touches a codec. Decoding plugs in through
//! [`loader::ClipDecoder`].

pub mod bench;
pub mod chunking;
pub mod clip;
pub mod loader;
pub mod perf;
pub mod pixels;
pub mod rrc;
pub mod seed;
pub mod units;

pub use chunking::{
    plan_chunks, solve_chunk_length, ChunkError, ChunkLengthAdvice, ChunkManifest, ChunkPlan, ChunkRecord, ChunkSpan,
    HardwareProfile, ManifestHeader,
};
pub use clip::{ClipRequest, DecodeCounters, DecodedClip, FrameSampling};
pub use loader::{Batch, ClipDecoder, Dataset, ErrorPolicy, Loader, LoaderConfig, Pipeline, SamplingSpec};
pub use rrc::{center_crop, sample_crop, CropRect, FrameGeometry, RrcError, RrcParams};
pub use seed::{SampleSeed, Stream};
