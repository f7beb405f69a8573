//! Multi-worker clip loader with a bounded, order-preserving queue.
//!
//! Workers claim positions of a seeded permutation of the dataset, decode the
//! corresponding clips and park them in a reorder buffer. A worker may only
//! claim position `p` while `p < released + queue_capacity`, where `released`
//! counts clips already handed to the caller, so at most `queue_capacity`
//! decoded clips exist at any time (including the batch being collated).
//! Batches come out in permutation order regardless of worker timing.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunking::ChunkManifest;
use crate::clip::{ClipRequest, DecodeCounters, DecodedClip, FrameSampling, StageTiming};
use crate::rrc::{center_crop, sample_crop, FrameGeometry, RrcError, RrcParams};
use crate::seed::{SampleSeed, Stream};

pub type DecodeError = Box<dyn std::error::Error + Send + Sync>;

/// Anything that turns a [`ClipRequest`] into pixels. One call per clip;
/// implementations must be callable from several threads at once.
pub trait ClipDecoder: Send + Sync {
    fn decode(&self, request: &ClipRequest) -> Result<DecodedClip, DecodeError>;
}

impl<T: ClipDecoder + ?Sized> ClipDecoder for Arc<T> {
    fn decode(&self, request: &ClipRequest) -> Result<DecodedClip, DecodeError> {
        (**self).decode(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    #[default]
    Fused,
    Reference,
}

impl Pipeline {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pipeline::Fused => "fused",
            Pipeline::Reference => "reference",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPolicy {
    #[default]
    FailFast,
    Skip,
}

/// How each dataset entry becomes a clip request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    #[serde(default = "default_frames")]
    pub num_frames: usize,
    /// Clip window length in seconds; `None` uses the whole chunk.
    #[serde(default)]
    pub clip_len: Option<f64>,
    #[serde(default)]
    pub rrc: RrcParams,
    /// Probability of a horizontal flip.
    #[serde(default)]
    pub hflip_prob: f64,
    #[serde(default)]
    pub frame_sampling: FrameSampling,
    /// Center crop instead of RandomResizedCrop (evaluation).
    #[serde(default)]
    pub center_crop: bool,
}

fn default_frames() -> usize {
    4
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            num_frames: default_frames(),
            clip_len: None,
            rrc: RrcParams::default(),
            hflip_prob: 0.0,
            frame_sampling: FrameSampling::UniformRandom,
            center_crop: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSource {
    pub chunk_path: PathBuf,
    pub geometry: FrameGeometry,
    pub duration: f64,
}

/// Read-only list of samples shared by all workers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<SampleSource>,
}

impl Dataset {
    /// One sample per manifest chunk. Relative chunk paths resolve against
    /// `base_dir`.
    pub fn from_manifest(manifest: &ChunkManifest, base_dir: &Path) -> Self {
        let samples = manifest
            .records()
            .iter()
            .map(|r| SampleSource {
                chunk_path: if r.chunk_path.is_absolute() {
                    r.chunk_path.clone()
                } else {
                    base_dir.join(&r.chunk_path)
                },
                geometry: FrameGeometry::new(r.width, r.height),
                duration: r.duration(),
            })
            .collect();
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Request for `sample_id`, drawn from metadata only. All randomness is
    /// keyed by `(epoch_seed, 0, sample_id)`, so the request does not depend
    /// on which worker serves it.
    pub fn request(&self, sample_id: usize, spec: &SamplingSpec, epoch_seed: u64) -> Result<ClipRequest, RrcError> {
        let sample = &self.samples[sample_id];
        let seed = SampleSeed::new(epoch_seed, 0, sample_id as u64);
        let (local_start, local_end) = match spec.clip_len {
            Some(len) if len < sample.duration => {
                let start = seed.rng(Stream::ClipWindow).random::<f64>() * (sample.duration - len);
                (start, start + len)
            }
            _ => (0.0, sample.duration),
        };
        let crop = if spec.center_crop {
            center_crop(sample.geometry, spec.rrc.target_h(), spec.rrc.target_w())?
        } else {
            sample_crop(sample.geometry, &spec.rrc, seed)?
        };
        let hflip = spec.hflip_prob > 0.0 && seed.rng(Stream::Flip).random::<f64>() < spec.hflip_prob;
        Ok(ClipRequest {
            chunk_path: sample.chunk_path.clone(),
            local_start,
            local_end,
            num_frames: spec.num_frames,
            crop,
            hflip,
            target_h: spec.rrc.target_h(),
            target_w: spec.rrc.target_w(),
            frame_sampling: spec.frame_sampling,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoaderConfig {
    pub num_workers: usize,
    pub queue_capacity: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub epoch_seed: u64,
    #[serde(default)]
    pub pipeline: Pipeline,
    #[serde(default)]
    pub error_policy: ErrorPolicy,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub sampling: SamplingSpec,
}

impl LoaderConfig {
    pub fn new(num_workers: usize, queue_capacity: usize, batch_size: usize) -> Self {
        Self {
            num_workers,
            queue_capacity,
            batch_size,
            epoch_seed: 0,
            pipeline: Pipeline::Fused,
            error_policy: ErrorPolicy::FailFast,
            manifest: None,
            sampling: SamplingSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<(), LoaderError> {
        if self.num_workers == 0 {
            return Err(LoaderError::Config("num_workers must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(LoaderError::Config("batch_size must be at least 1".into()));
        }
        if self.queue_capacity < self.batch_size {
            return Err(LoaderError::Config(format!(
                "queue_capacity {} must be at least batch_size {}",
                self.queue_capacity, self.batch_size
            )));
        }
        if self.sampling.num_frames == 0 {
            return Err(LoaderError::Config("num_frames must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.sampling.hflip_prob) {
            return Err(LoaderError::Config("hflip_prob must lie in [0, 1]".into()));
        }
        self.sampling.rrc.validate().map_err(|e| LoaderError::Config(e.to_string()))
    }
}

/// Seeded Fisher–Yates permutation of `0..len`.
pub fn shuffled_order(len: usize, epoch_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = SampleSeed::new(epoch_seed, 0, u64::MAX).rng(Stream::Shuffle);
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFailure {
    pub sample_id: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum LoaderError {
    #[error("invalid loader configuration: {0}")]
    Config(String),
    #[error("sample {}: {}", .0.sample_id, .0.message)]
    Clip(ClipFailure),
    #[error("sample {sample_id}: clip shape {found:?} differs from batch shape {expected:?}")]
    Shape {
        sample_id: usize,
        expected: [usize; 4],
        found: [usize; 4],
    },
}

/// Wall-clock record for one sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleTiming {
    pub worker_id: usize,
    pub started: Instant,
    pub finished: Instant,
    pub delivered: Instant,
    pub stages: StageTiming,
    pub collate_ms: f64,
    pub counters: DecodeCounters,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub index: usize,
    pub sample_ids: Vec<usize>,
    /// `batch × frames × 3 × height × width`, C order.
    pub frames: Vec<u8>,
    pub shape: [usize; 5],
    pub timestamps: Vec<Vec<f64>>,
    pub timings: Vec<SampleTiming>,
    /// Failures skipped while assembling this batch.
    pub skipped: Vec<ClipFailure>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoaderStats {
    /// Most decoded-but-unreleased clips ever held at once.
    pub high_water_mark: usize,
    pub delivered: usize,
    pub skipped: usize,
}

struct Parked {
    result: Result<DecodedClip, String>,
    worker_id: usize,
    started: Instant,
    finished: Instant,
}

struct State {
    next_claim: usize,
    released: usize,
    delivered: usize,
    assembling: usize,
    ready: BTreeMap<usize, Parked>,
    alive: usize,
    cancelled: bool,
    high_water: usize,
    skipped: usize,
}

struct Shared {
    order: Vec<usize>,
    requests: Vec<ClipRequest>,
    capacity: usize,
    decoder: Arc<dyn ClipDecoder>,
    state: Mutex<State>,
    work: Condvar,
    ready: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        // A worker that panicked never holds the lock, so poisoning only
        // reflects panics elsewhere; the state itself stays consistent.
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

fn worker_loop(shared: Arc<Shared>, worker_id: usize) {
    loop {
        let position = {
            let mut st = shared.lock();
            loop {
                if st.cancelled || st.next_claim >= shared.order.len() {
                    break None;
                }
                if st.next_claim < st.released + shared.capacity {
                    st.next_claim += 1;
                    break Some(st.next_claim - 1);
                }
                st = shared.work.wait(st).unwrap_or_else(|e| e.into_inner());
            }
        };
        let Some(position) = position else { break };

        let request = &shared.requests[position];
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| shared.decoder.decode(request)));
        let finished = Instant::now();
        let (result, died) = match outcome {
            Ok(Ok(clip)) => (Ok(clip), false),
            Ok(Err(e)) => (Err(e.to_string()), false),
            Err(payload) => (Err(format!("worker {worker_id} died: {}", panic_message(&*payload))), true),
        };

        let mut st = shared.lock();
        st.ready.insert(
            position,
            Parked {
                result,
                worker_id,
                started,
                finished,
            },
        );
        st.high_water = st.high_water.max(st.ready.len() + st.assembling);
        if died {
            st.alive -= 1;
            shared.ready.notify_all();
            return;
        }
        shared.ready.notify_all();
    }
    let mut st = shared.lock();
    st.alive -= 1;
    shared.ready.notify_all();
}

/// One epoch over a dataset, yielding collated batches in shuffled order.
pub struct Loader {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
    batch_size: usize,
    policy: ErrorPolicy,
    batches: usize,
    done: bool,
}

impl Loader {
    pub fn new(config: &LoaderConfig, dataset: &Dataset, decoder: Arc<dyn ClipDecoder>) -> Result<Self, LoaderError> {
        config.validate()?;
        let order = shuffled_order(dataset.len(), config.epoch_seed);
        let requests = order
            .iter()
            .map(|&id| {
                dataset
                    .request(id, &config.sampling, config.epoch_seed)
                    .map_err(|e| LoaderError::Clip(ClipFailure { sample_id: id, message: e.to_string() }))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let shared = Arc::new(Shared {
            order,
            requests,
            capacity: config.queue_capacity,
            decoder,
            state: Mutex::new(State {
                next_claim: 0,
                released: 0,
                delivered: 0,
                assembling: 0,
                ready: BTreeMap::new(),
                alive: config.num_workers,
                cancelled: false,
                high_water: 0,
                skipped: 0,
            }),
            work: Condvar::new(),
            ready: Condvar::new(),
        });
        let workers = (0..config.num_workers)
            .map(|w| {
                let shared = Arc::clone(&shared);
                std::thread::Builder::new()
                    .name(format!("vidpipe-worker-{w}"))
                    .spawn(move || worker_loop(shared, w))
                    .expect("failed to spawn loader worker")
            })
            .collect();
        Ok(Self {
            shared,
            workers,
            batch_size: config.batch_size,
            policy: config.error_policy,
            batches: 0,
            done: false,
        })
    }

    /// Sample ids in the order they will be delivered.
    pub fn order(&self) -> &[usize] {
        &self.shared.order
    }

    pub fn stats(&self) -> LoaderStats {
        let st = self.shared.lock();
        LoaderStats {
            high_water_mark: st.high_water,
            delivered: st.delivered,
            skipped: st.skipped,
        }
    }

    /// Stops the workers. Each finishes at most the clip it is decoding.
    pub fn shutdown(&mut self) {
        {
            let mut st = self.shared.lock();
            st.cancelled = true;
        }
        self.shared.work.notify_all();
        self.shared.ready.notify_all();
        for handle in self.workers.drain(..) {
            let _ = handle.join();
        }
        self.done = true;
    }

    fn next_parked(&self) -> Option<(usize, Parked)> {
        let mut st = self.shared.lock();
        loop {
            let position = st.delivered;
            if position >= self.shared.order.len() {
                return None;
            }
            if let Some(parked) = st.ready.remove(&position) {
                st.delivered += 1;
                st.assembling += 1;
                return Some((position, parked));
            }
            if st.alive == 0 {
                st.delivered += 1;
                let now = Instant::now();
                return Some((
                    position,
                    Parked {
                        result: Err("no live workers remain to decode this sample".into()),
                        worker_id: usize::MAX,
                        started: now,
                        finished: now,
                    },
                ));
            }
            st = self.shared.ready.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }

    fn release(&self) {
        let mut st = self.shared.lock();
        st.released = st.delivered;
        st.assembling = 0;
        drop(st);
        self.shared.work.notify_all();
    }

    fn assemble(&mut self) -> Option<Result<Batch, LoaderError>> {
        let mut clips: Vec<(usize, Parked, DecodedClip)> = Vec::with_capacity(self.batch_size);
        let mut skipped = Vec::new();
        while clips.len() < self.batch_size {
            let Some((position, mut parked)) = self.next_parked() else { break };
            let sample_id = self.shared.order[position];
            match std::mem::replace(&mut parked.result, Err(String::new())) {
                Ok(clip) => clips.push((sample_id, parked, clip)),
                Err(message) => {
                    let failure = ClipFailure { sample_id, message };
                    match self.policy {
                        ErrorPolicy::FailFast => {
                            self.shutdown();
                            return Some(Err(LoaderError::Clip(failure)));
                        }
                        ErrorPolicy::Skip => {
                            warn!("skipping sample {}: {}", failure.sample_id, failure.message);
                            self.shared.lock().skipped += 1;
                            skipped.push(failure);
                        }
                    }
                }
            }
        }
        if clips.is_empty() {
            self.release();
            return if skipped.is_empty() {
                None
            } else {
                // Nothing decodable was left, but the caller still learns
                // which samples were dropped.
                Some(Ok(Batch {
                    index: self.batches,
                    sample_ids: Vec::new(),
                    frames: Vec::new(),
                    shape: [0; 5],
                    timestamps: Vec::new(),
                    timings: Vec::new(),
                    skipped,
                }))
            };
        }

        let clip_shape = clips[0].2.shape;
        let clip_len: usize = clip_shape.iter().product();
        let mut frames = Vec::with_capacity(clip_len * clips.len());
        let mut sample_ids = Vec::with_capacity(clips.len());
        let mut timestamps = Vec::with_capacity(clips.len());
        let mut timings = Vec::with_capacity(clips.len());
        for (sample_id, parked, clip) in clips {
            if clip.shape != clip_shape {
                self.shutdown();
                return Some(Err(LoaderError::Shape {
                    sample_id,
                    expected: clip_shape,
                    found: clip.shape,
                }));
            }
            let t0 = Instant::now();
            frames.extend_from_slice(&clip.frames);
            let delivered = Instant::now();
            sample_ids.push(sample_id);
            timestamps.push(clip.timestamps);
            timings.push(SampleTiming {
                worker_id: parked.worker_id,
                started: parked.started,
                finished: parked.finished,
                delivered,
                stages: clip.timing,
                collate_ms: (delivered - t0).as_secs_f64() * 1e3,
                counters: clip.counters,
            });
        }
        self.release();
        let batch = Batch {
            index: self.batches,
            shape: [
                sample_ids.len(),
                clip_shape[0],
                clip_shape[1],
                clip_shape[2],
                clip_shape[3],
            ],
            sample_ids,
            frames,
            timestamps,
            timings,
            skipped,
        };
        self.batches += 1;
        Some(Ok(batch))
    }
}

impl Iterator for Loader {
    type Item = Result<Batch, LoaderError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = self.assemble();
        if item.is_none() {
            self.done = true;
        }
        item
    }
}

impl Drop for Loader {
    fn drop(&mut self) {
        self.shutdown();
    }
}
