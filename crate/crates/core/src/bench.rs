//! Steady-state loader benchmark.
//!
//! Runs the loader until `sample_count` clips have been delivered, drops the
//! first `warmup_fraction` of completions, and reports latency, per-worker and
//! total throughput over the window from the last warm-up completion to the
//! last completion.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::clip::DecodeCounters;
use crate::loader::{ClipDecoder, Dataset, Loader, LoaderConfig, LoaderError};

pub const BENCH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchOptions {
    pub sample_count: usize,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    /// Simulated consumer cost per delivered clip, e.g. a training step.
    #[serde(default)]
    pub consumer_ms_per_clip: f64,
}

fn default_warmup() -> f64 {
    0.1
}

impl BenchOptions {
    pub fn new(sample_count: usize) -> Self {
        Self {
            sample_count,
            warmup_fraction: default_warmup(),
            consumer_ms_per_clip: 0.0,
        }
    }
}

/// One CSV row per measured sample. Times are milliseconds since the
/// benchmark started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: usize,
    pub epoch: u64,
    pub worker_id: usize,
    pub start_ms: f64,
    pub finish_ms: f64,
    pub delivered_ms: f64,
    pub latency_ms: f64,
    pub read_ms: f64,
    pub decode_ms: f64,
    pub crop_ms: f64,
    pub collate_ms: f64,
    pub wait_ms: f64,
    pub warmup: bool,
}

impl SampleRow {
    pub const CSV_HEADER: &'static str = "sample_id,epoch,worker_id,start_ms,finish_ms,delivered_ms,latency_ms,\
read_ms,decode_ms,crop_ms,collate_ms,wait_ms,warmup";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{}",
            self.sample_id,
            self.epoch,
            self.worker_id,
            self.start_ms,
            self.finish_ms,
            self.delivered_ms,
            self.latency_ms,
            self.read_ms,
            self.decode_ms,
            self.crop_ms,
            self.collate_ms,
            self.wait_ms,
            self.warmup
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub p50: f64,
    pub p90: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageMeans {
    pub read: f64,
    pub decode: f64,
    pub crop: f64,
    pub collate: f64,
    /// Time a finished clip sat in the queue before collation.
    pub wait: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub pipeline: String,
    pub num_workers: usize,
    pub batch_size: usize,
    pub queue_capacity: usize,
    pub samples_measured: usize,
    pub warmup_samples: usize,
    pub window_sec: f64,
    pub latency_ms: LatencySummary,
    /// Clips/sec per worker over the steady window.
    pub per_worker_throughput: Vec<f64>,
    pub mean_worker_throughput: f64,
    pub total_throughput: f64,
    pub stage_ms: StageMeans,
    pub counters: DecodeCounters,
    pub queue_high_water_mark: usize,
    pub skipped: usize,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn run_benchmark(
    config: &LoaderConfig,
    dataset: &Dataset,
    decoder: Arc<dyn ClipDecoder>,
    options: &BenchOptions,
) -> Result<(BenchReport, Vec<SampleRow>), LoaderError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(LoaderError::Config("dataset is empty".into()));
    }
    if !(0.0..1.0).contains(&options.warmup_fraction) {
        return Err(LoaderError::Config("warmup_fraction must lie in [0, 1)".into()));
    }
    let warmup = (options.sample_count as f64 * options.warmup_fraction).floor() as usize;
    if options.sample_count < warmup + 2 {
        return Err(LoaderError::Config(format!(
            "sample_count {} leaves fewer than 2 steady-state samples",
            options.sample_count
        )));
    }

    let origin = Instant::now();
    let mut rows = Vec::with_capacity(options.sample_count);
    let mut counters_by_row = Vec::with_capacity(options.sample_count);
    let mut high_water = 0;
    let mut skipped = 0;
    let mut epoch = 0u64;
    'epochs: loop {
        let cfg = LoaderConfig {
            epoch_seed: config.epoch_seed.wrapping_add(epoch),
            ..config.clone()
        };
        let mut loader = Loader::new(&cfg, dataset, Arc::clone(&decoder))?;
        let mut delivered_this_epoch = 0;
        while let Some(batch) = loader.next() {
            let batch = batch?;
            skipped += batch.skipped.len();
            delivered_this_epoch += batch.len() + batch.skipped.len();
            for (sample_id, t) in batch.sample_ids.iter().zip(&batch.timings) {
                rows.push(SampleRow {
                    sample_id: *sample_id,
                    epoch,
                    worker_id: t.worker_id,
                    start_ms: ms(t.started - origin),
                    finish_ms: ms(t.finished - origin),
                    delivered_ms: ms(t.delivered - origin),
                    latency_ms: ms(t.finished - t.started),
                    read_ms: t.stages.read_ms,
                    decode_ms: t.stages.decode_ms,
                    crop_ms: t.stages.crop_ms,
                    collate_ms: t.collate_ms,
                    wait_ms: ms(t.delivered.saturating_duration_since(t.finished)) - t.collate_ms,
                    warmup: false,
                });
                counters_by_row.push(t.counters);
            }
            if options.consumer_ms_per_clip > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(
                    options.consumer_ms_per_clip * batch.len() as f64 / 1e3,
                ));
            }
            high_water = high_water.max(loader.stats().high_water_mark);
            if rows.len() >= options.sample_count {
                break 'epochs;
            }
        }
        if delivered_this_epoch == 0 || rows.is_empty() && skipped >= dataset.len() * (epoch as usize + 1) {
            return Err(LoaderError::Config("every sample failed to decode".into()));
        }
        epoch += 1;
    }
    rows.truncate(options.sample_count);
    counters_by_row.truncate(options.sample_count);

    // Warm-up is the first completions in time, not the first deliveries.
    let mut by_finish: Vec<usize> = (0..rows.len()).collect();
    by_finish.sort_by(|&a, &b| rows[a].finish_ms.total_cmp(&rows[b].finish_ms));
    for &i in &by_finish[..warmup] {
        rows[i].warmup = true;
    }
    let window_start = if warmup == 0 {
        by_finish.iter().map(|&i| rows[i].start_ms).fold(f64::INFINITY, f64::min)
    } else {
        rows[by_finish[warmup - 1]].finish_ms
    };
    let window_end = rows[*by_finish.last().unwrap()].finish_ms;
    let window_sec = (window_end - window_start) / 1e3;
    if !(window_sec > 0.0) {
        return Err(LoaderError::Config("steady-state window has zero length".into()));
    }

    let steady: Vec<usize> = (0..rows.len()).filter(|&i| !rows[i].warmup).collect();
    let n = steady.len() as f64;
    let mut latencies: Vec<f64> = steady.iter().map(|&i| rows[i].latency_ms).collect();
    latencies.sort_by(f64::total_cmp);
    let mean = |f: &dyn Fn(&SampleRow) -> f64| steady.iter().map(|&i| f(&rows[i])).sum::<f64>() / n;

    let mut per_worker = vec![0usize; config.num_workers];
    let mut counters = DecodeCounters::default();
    for &i in &steady {
        if let Some(slot) = per_worker.get_mut(rows[i].worker_id) {
            *slot += 1;
        }
        counters += counters_by_row[i];
    }
    let per_worker_throughput: Vec<f64> = per_worker.iter().map(|&c| c as f64 / window_sec).collect();
    let total_throughput = n / window_sec;

    let report = BenchReport {
        schema_version: BENCH_SCHEMA_VERSION,
        pipeline: config.pipeline.as_str().to_string(),
        num_workers: config.num_workers,
        batch_size: config.batch_size,
        queue_capacity: config.queue_capacity,
        samples_measured: steady.len(),
        warmup_samples: warmup,
        window_sec,
        latency_ms: LatencySummary {
            p50: percentile(&latencies, 0.5),
            p90: percentile(&latencies, 0.9),
            mean: latencies.iter().sum::<f64>() / n,
        },
        mean_worker_throughput: total_throughput / config.num_workers as f64,
        per_worker_throughput,
        total_throughput,
        stage_ms: StageMeans {
            read: mean(&|r| r.read_ms),
            decode: mean(&|r| r.decode_ms),
            crop: mean(&|r| r.crop_ms),
            collate: mean(&|r| r.collate_ms),
            wait: mean(&|r| r.wait_ms),
        },
        counters,
        queue_high_water_mark: high_water,
        skipped,
    };
    Ok((report, rows))
}
