//! Reproducible randomness for augmentation and sampling.
//!
//! Every random draw in the pipeline comes from a ChaCha8 generator keyed by
//! a [`SampleSeed`] and a [`Stream`] tag. The 32-byte ChaCha key is the
//! little-endian concatenation
//!
//! ```text
//! epoch (u64) | worker_id (u64) | sample_index (u64) | stream tag (u64)
//! ```
//!
//! so two draws share a stream only when all four words match. ChaCha output
//! is defined bit-for-bit, which makes draws identical across platforms.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identifies one sample draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SampleSeed {
    pub epoch: u64,
    pub worker_id: u64,
    pub sample_index: u64,
}

/// Independent random streams carved out of one [`SampleSeed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Crop = 1,
    Timestamps = 2,
    Flip = 3,
    ClipWindow = 4,
    Shuffle = 5,
}

impl SampleSeed {
    pub const fn new(epoch: u64, worker_id: u64, sample_index: u64) -> Self {
        Self {
            epoch,
            worker_id,
            sample_index,
        }
    }

    pub fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.epoch.to_le_bytes());
        key[8..16].copy_from_slice(&self.worker_id.to_le_bytes());
        key[16..24].copy_from_slice(&self.sample_index.to_le_bytes());
        key[24..32].copy_from_slice(&(stream as u64).to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

/// Draws from `U(lo, hi)`; returns `lo` when the interval is empty.
pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}
