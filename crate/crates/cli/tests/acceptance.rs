//! Acceptance suite. Prints one PASS or FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Expected values come from closed-form arithmetic or from oracles written
//! here, independent of the code under test.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vidpipe_core::bench::{run_benchmark, BenchOptions};
use vidpipe_core::loader::shuffled_order;
use vidpipe_core::perf::{
    activation_memory, calibrate_fixed_overhead, max_batch_size, pipeline_throughput, BatchFit, MemoryModes,
    PipelineProfile, Stage, VitConfig,
};
use vidpipe_core::pixels::RgbImage;
use vidpipe_core::{
    plan_chunks, sample_crop, solve_chunk_length, ChunkLengthAdvice, ChunkManifest, ClipRequest, CropRect, Dataset,
    FrameGeometry, FrameSampling, HardwareProfile, Loader, LoaderConfig, Pipeline, RrcParams, SampleSeed,
    SamplingSpec,
};
use vidpipe_media::corpus::write_pattern_video;
use vidpipe_media::decode::{decode_all, frame_at};
use vidpipe_media::{
    chunk_header, chunk_video, decode_fused, decode_then_crop, frames_decoded_total, make_synthetic_corpus, probe,
    read_code, ChunkMode, ChunkOptions, CorpusSpec, DecoderOptions, EncodeSettings, LibavDecoder, Pattern,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

// Corpus used by the loader, decoder and benchmark criteria.
const CORPUS_CLIPS: usize = 1024;
const CORPUS_W: u32 = 160;
const CORPUS_H: u32 = 128;
const CORPUS_FPS: u32 = 8;
const CORPUS_SEC: f64 = 15.0;

struct Corpus {
    _dir: tempfile::TempDir,
    root: PathBuf,
    manifest: ChunkManifest,
    dataset: Dataset,
    build: Duration,
}

fn corpus() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| {
        let t0 = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("corpus");
        let spec = CorpusSpec {
            fps: CORPUS_FPS,
            ..CorpusSpec::new(CORPUS_CLIPS, CORPUS_SEC, CORPUS_W, CORPUS_H, 80_000)
        };
        let manifest = make_synthetic_corpus(&spec, &root).expect("synthetic corpus");
        let dataset = Dataset::from_manifest(&manifest, &root);
        Corpus {
            _dir: dir,
            root,
            manifest,
            dataset,
            build: t0.elapsed(),
        }
    })
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("chunk_length_worked_example", chunk_length_worked_example),
        ("fused_equals_reference", fused_equals_reference),
        ("work_avoidance", work_avoidance),
        ("rrc_statistics", rrc_statistics),
        ("chunk_round_trip", chunk_round_trip),
        ("throughput_model", throughput_model),
        ("memory_scaling_laws", memory_scaling_laws),
        ("max_batch_ordering", max_batch_ordering),
        ("loader_contract", loader_contract),
        ("benchmark_direction", benchmark_direction),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.2}s): {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", 10 - failed, 10);
    std::process::exit(if failed == 0 { 0 } else { 1 });
}

fn chunk_length_worked_example() -> Outcome {
    let profile = HardwareProfile {
        batch_size: 1024.0,
        avg_bitrate: 1e6,
        read_speed: 500e6,
        step_time: 4.0,
    };
    // Bits readable per step over bits consumed per second of batch.
    let oracle = 500e6 * 8.0 * 4.0 / (1024.0 * 1e6);
    let t0 = Instant::now();
    let t_max = solve_chunk_length(&profile, 1.0).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    ensure!(t_max == oracle && t_max == 15.625, "t_max = {t_max}, expected {oracle}");
    ensure!(elapsed < Duration::from_millis(1), "took {elapsed:?}");

    let advice = ChunkLengthAdvice::from_bound(t_max);
    ensure!(advice.nearest_sec == 16, "nearest {} != 16", advice.nearest_sec);
    ensure!(advice.practical_sec == 15, "practical {} != 15", advice.practical_sec);
    // A 4% safety margin lands exactly on the chosen 15 s chunk.
    let with_margin = solve_chunk_length(&profile, 0.96).map_err(|e| e.to_string())?;
    ensure!((with_margin - 15.0).abs() < 1e-12, "with margin 0.96: {with_margin}");

    let out = Command::new(env!("CARGO_BIN_EXE_vidpipe"))
        .args([
            "solve-chunk-length",
            "--batch-size",
            "1024",
            "--bitrate",
            "1Mb",
            "--read-speed",
            "500MB",
            "--step-time",
            "4",
            "--margin",
            "1.0",
        ])
        .output()
        .map_err(|e| e.to_string())?;
    let printed = String::from_utf8_lossy(&out.stdout).trim().to_string();
    ensure!(out.status.success() && printed == "15.625", "cli printed `{printed}` ({})", out.status);
    Ok(format!("T_max = {t_max} s in {elapsed:?}, nearest 16 s, practical 15 s, cli prints {printed}"))
}

/// Span frames covering `[start, end)` on a constant-rate stream.
fn span_frames(start: f64, end: f64, fps: f64, total: u64) -> u64 {
    let first = (start * fps + 1e-9).floor().max(0.0) as u64;
    let last = ((end * fps - 1e-9).ceil() as u64).min(total);
    last.saturating_sub(first).max(1)
}

// Requests from the loader's own distribution mixed with free-form ones.
fn fuzzed_requests(c: &Corpus, n: usize, seed: u64) -> Vec<ClipRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = CropRect::new(0, 0, CORPUS_W, CORPUS_H);
    let geometry = FrameGeometry::new(CORPUS_W, CORPUS_H);
    (0..n)
        .map(|case| {
            let id = rng.random_range(0..c.dataset.len());
            if case % 4 == 0 {
                let spec = SamplingSpec {
                    hflip_prob: 0.5,
                    ..SamplingSpec::default()
                };
                return c.dataset.request(id, &spec, case as u64).unwrap();
            }
            let duration = c.dataset.samples[id].duration;
            let len = rng.random_range(0.1..=duration);
            let start = rng.random_range(0.0..=duration - len);
            let crop = match rng.random_range(0..10) {
                0 => full,
                1..=4 => sample_crop(geometry, &RrcParams::default(), SampleSeed::new(seed, 0, case as u64)).unwrap(),
                _ => {
                    let w = rng.random_range(1..=CORPUS_W);
                    let h = rng.random_range(1..=CORPUS_H);
                    CropRect::new(rng.random_range(0..=CORPUS_W - w), rng.random_range(0..=CORPUS_H - h), w, h)
                }
            };
            let (target_h, target_w) = [(224, 224), (112, 112), (48, 64)][rng.random_range(0..3)];
            ClipRequest {
                chunk_path: c.dataset.samples[id].chunk_path.clone(),
                local_start: start,
                local_end: start + len,
                num_frames: rng.random_range(1..=16),
                crop,
                hflip: rng.random_bool(0.5),
                target_h,
                target_w,
                frame_sampling: if rng.random_bool(0.5) {
                    FrameSampling::UniformRandom
                } else {
                    FrameSampling::UniformDeterministic
                },
                seed: SampleSeed::new(seed, 0, case as u64),
            }
        })
        .collect()
}

fn fused_equals_reference() -> Outcome {
    let c = corpus();
    let opts = DecoderOptions::default();
    let t0 = Instant::now();
    let requests = fuzzed_requests(c, 200, 0x5EED);
    let mut frames = 0;
    for (case, req) in requests.iter().enumerate() {
        let fused = decode_fused(req, opts).map_err(|e| format!("case {case}: {e}"))?;
        let reference = decode_then_crop(req, opts).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(fused.shape == reference.shape, "case {case}: shape {:?} vs {:?}", fused.shape, reference.shape);
        ensure!(fused.frames == reference.frames, "case {case}: pixels differ for {req:?}");
        ensure!(fused.frame_pts == reference.frame_pts, "case {case}: source frames differ");
        frames += fused.shape[0];
    }
    let elapsed = t0.elapsed();
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!("200 requests, {frames} frames byte-identical in {:.1}s", elapsed.as_secs_f64()))
}

fn work_avoidance() -> Outcome {
    let c = corpus();
    let opts = DecoderOptions::default();
    let total = (CORPUS_SEC * f64::from(CORPUS_FPS)) as u64;
    let frame_area = u64::from(CORPUS_W) * u64::from(CORPUS_H);
    let (mut strict, mut checked) = (0, 0);
    for (case, req) in fuzzed_requests(c, 200, 0xA401D).iter().enumerate() {
        let g0 = frames_decoded_total();
        let fused = decode_fused(req, opts).map_err(|e| e.to_string())?;
        let g1 = frames_decoded_total();
        let reference = decode_then_crop(req, opts).map_err(|e| e.to_string())?;
        let g2 = frames_decoded_total();
        let (f, r) = (fused.counters, reference.counters);
        // The per-call counters agree with the process-wide codec counter.
        ensure!(g1 - g0 == f.frames_decoded && g2 - g1 == r.frames_decoded, "case {case}: counters disagree");
        ensure!(f.frames_decoded <= r.frames_decoded, "case {case}: fused decoded {} > {}", f.frames_decoded, r.frames_decoded);
        ensure!(f.pixels_converted <= r.pixels_converted, "case {case}: fused converted more pixels");

        let sampled = fused.frame_pts.iter().map(|p| p.to_bits()).collect::<HashSet<_>>().len() as u64;
        let span = span_frames(req.local_start, req.local_end, f64::from(CORPUS_FPS), total);
        if req.crop.area() < frame_area && sampled < span {
            checked += 1;
            ensure!(
                f.frames_decoded < r.frames_decoded,
                "case {case}: decoded {} vs {} with {sampled} of {span} span frames sampled: {req:?}",
                f.frames_decoded,
                r.frames_decoded
            );
            ensure!(f.pixels_converted < r.pixels_converted, "case {case}: pixels not reduced");
            strict += 1;
        }
    }
    ensure!(checked > 100, "only {checked} requests met the strictness condition");
    Ok(format!("200 requests: fused <= reference on all, strictly fewer decoded frames on {strict} of {checked} eligible"))
}

struct SplitMix(u64);

impl SplitMix {
    fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

// Area fractions of rects that fit, drawn straight from U(A) and U(r).
fn rrc_oracle(w: u32, h: u32, p: &RrcParams, n: usize) -> Vec<f64> {
    let mut rng = SplitMix(0x0DDBA11);
    let frame = f64::from(w) * f64::from(h);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let a = rng.uniform(p.scale[0] * frame, p.scale[1] * frame);
        let r = rng.uniform(p.ratio[0], p.ratio[1]);
        let cw = (a * r).sqrt().round_ties_even();
        let ch = (a / r).sqrt().round_ties_even();
        if cw >= 1.0 && ch >= 1.0 && cw <= f64::from(w) && ch <= f64::from(h) {
            out.push(cw * ch / frame);
        }
    }
    out
}

fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

fn rrc_statistics() -> Outcome {
    let p = RrcParams::default();
    ensure!(p.scale == [0.5, 1.0], "default scale is {:?}", p.scale);
    let mut lines = Vec::new();
    for (w, h, epoch) in [(340u32, 256u32, 11u64), (CORPUS_W, CORPUS_H, 12), (256, 256, 13)] {
        let n = 10_000;
        let sampled: Vec<f64> = (0..n as u64)
            .map(|i| {
                let r = sample_crop(FrameGeometry::new(w, h), &p, SampleSeed::new(epoch, 0, i)).unwrap();
                assert!(
                    r.crop_w >= 1 && r.crop_h >= 1 && r.x + r.crop_w <= w && r.y + r.crop_h <= h,
                    "{r:?} escapes {w}x{h}"
                );
                f64::from(r.crop_w) * f64::from(r.crop_h) / (f64::from(w) * f64::from(h))
            })
            .collect();
        let m = 200_000;
        let oracle = rrc_oracle(w, h, &p, m);
        let d = ks_statistic(sampled, oracle);
        let critical = 1.628 * (((n + m) as f64) / ((n * m) as f64)).sqrt();
        ensure!(d < critical, "{w}x{h}: KS D = {d:.4} >= {critical:.4}");
        lines.push(format!("{w}x{h} D={d:.4}<{critical:.4}"));
    }
    Ok(format!("10^4 crops per geometry, all contained; {}", lines.join(", ")))
}

fn psnr(a: &RgbImage, b: &RgbImage) -> f64 {
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

fn chunk_round_trip() -> Outcome {
    let (w, h, fps) = (160u32, 128u32, 10u32);
    let t0 = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let source = dir.path().join("source.mp4");
    write_pattern_video(&source, Pattern::new(w, h, 9, 2), 45 * fps, &EncodeSettings::h264(w, h, fps, 300_000))
        .map_err(|e| e.to_string())?;
    let duration = probe(&source).map_err(|e| e.to_string())?.duration;
    let plan = plan_chunks("source", duration, 15.0).map_err(|e| e.to_string())?;
    let out = dir.path().join("chunks");
    let options = ChunkOptions::default();
    let records = chunk_video(&source, &plan, ChunkMode::Reencode, &out, &options).map_err(|e| e.to_string())?;
    let manifest = ChunkManifest::new(chunk_header(15.0, ChunkMode::Reencode, &options), records);
    manifest.validate()?;
    ensure!(manifest.len() == 3, "{} chunks", manifest.len());

    // Each chunk alone in a fresh directory.
    for r in manifest.records() {
        let alone = tempfile::tempdir().map_err(|e| e.to_string())?;
        let copy = alone.path().join("chunk.mp4");
        std::fs::copy(out.join(&r.chunk_path), &copy).map_err(|e| e.to_string())?;
        let info = probe(&copy).map_err(|e| e.to_string())?;
        ensure!(info.keyframes.first() == Some(&0.0), "chunk {} does not open on a keyframe", r.chunk_index);
        let frames = decode_all(&copy, DecoderOptions::default()).map_err(|e| e.to_string())?;
        ensure!(frames.len() == 15 * fps as usize, "chunk {} decodes {} frames", r.chunk_index, frames.len());
        let first = (r.start_sec * f64::from(fps)).round() as u32;
        ensure!(read_code(&frames[0].1) == (first, 9), "chunk {} starts at the wrong frame", r.chunk_index);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let t: f64 = rng.random_range(0.0..45.0);
        let spans = manifest.locate("source", t, t + 1e-3).map_err(|e| e.to_string())?;
        let span = &spans[0];
        let (_, got) = frame_at(&out.join(&span.chunk_path), span.local_start, DecoderOptions::default())
            .map_err(|e| e.to_string())?;
        let (_, want) = frame_at(&source, t, DecoderOptions::default()).map_err(|e| e.to_string())?;
        let expected_index = (t * f64::from(fps) + 1e-9).floor() as u32;
        ensure!(read_code(&got).0 == expected_index, "t = {t}: chunk frame {} != {expected_index}", read_code(&got).0);
        let db = psnr(&got, &want);
        ensure!(db > 35.0, "t = {t}: PSNR {db:.2} dB");
        worst = worst.min(db);
    }
    let elapsed = t0.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!("3 chunks self-contained, 20 timestamps with min PSNR {worst:.2} dB"))
}

fn throughput_model() -> Outcome {
    let mut lines = Vec::new();
    let cases = [
        ("standard", 39.4, 65.04),
        ("standard", 39.4, 88.8),
        ("standard", 39.4, 95.36),
        ("standard", 39.4, 117.76),
        ("improved", 62.8, 421.76),
    ];
    for (name, per_gpu, cpu_total) in cases {
        let profile = PipelineProfile {
            num_gpus: 8,
            per_gpu_rate: per_gpu,
            num_workers: 1,
            per_worker_rate: cpu_total,
            read_speed: 500e6,
            bits_per_clip: 1e6,
        };
        let report = pipeline_throughput(&profile).map_err(|e| e.to_string())?;
        let io: f64 = 500e6 * 8.0 / 1e6;
        let gpu = 8.0 * per_gpu;
        let oracle = io.min(cpu_total).min(gpu);
        ensure!(report.end_to_end == oracle, "{name} cpu {cpu_total}: {} != {oracle}", report.end_to_end);
        ensure!(report.bottleneck == Stage::Cpu, "{name} cpu {cpu_total}: bottleneck {:?}", report.bottleneck);
        lines.push(format!("{name} {}", report.end_to_end));
    }
    let standard = lines[3].clone();
    ensure!(standard == "standard 117.76", "{standard}");
    ensure!(lines[4] == "improved 421.76", "{}", lines[4]);
    Ok(format!("CPU-bound at 8 GPUs: {}", lines.join(", ")))
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

const BASELINE: MemoryModes = MemoryModes {
    flash_attention: false,
    grad_checkpointing: false,
};
const FLASH: MemoryModes = MemoryModes {
    flash_attention: true,
    grad_checkpointing: false,
};
const FLASH_CKPT: MemoryModes = MemoryModes {
    flash_attention: true,
    grad_checkpointing: true,
};

fn memory_scaling_laws() -> Outcome {
    let t0 = Instant::now();
    let base = VitConfig::vit_b_4x224();
    let mut plain = Vec::new();
    let mut flash = Vec::new();
    for frames in [2u32, 4, 8, 16, 32, 64] {
        let cfg = VitConfig { frames, ..base };
        let n = cfg.tokens() as f64;
        plain.push((n, activation_memory(&cfg, BASELINE).map_err(|e| e.to_string())?.mha));
        flash.push((n, activation_memory(&cfg, FLASH).map_err(|e| e.to_string())?.mha));
    }
    let plain_slope = least_squares_slope(&plain);
    let flash_slope = least_squares_slope(&flash);
    ensure!((plain_slope - 2.0).abs() <= 0.05, "plain MHA exponent {plain_slope:.3}");
    ensure!((flash_slope - 1.0).abs() <= 0.05, "flash MHA exponent {flash_slope:.3}");

    let mut depth = Vec::new();
    for l in [4u32, 16, 64] {
        let cfg = VitConfig { depth: l, ..base };
        depth.push((f64::from(l), activation_memory(&cfg, FLASH_CKPT).map_err(|e| e.to_string())?.total));
    }
    let depth_slope = least_squares_slope(&depth);
    ensure!((depth_slope - 0.5).abs() <= 0.05, "checkpointed total scales as L^{depth_slope:.3}");

    let totals: Vec<f64> = [BASELINE, FLASH, FLASH_CKPT]
        .iter()
        .map(|&m| activation_memory(&base, m).map(|r| r.total))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure!(totals[0] > totals[1] && totals[1] > totals[2], "totals {totals:?}");
    let elapsed = t0.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!(
        "MHA exponents {plain_slope:.3} plain / {flash_slope:.3} flash, checkpointed L^{depth_slope:.3}, totals {:.1} > {:.1} > {:.1} MB",
        totals[0], totals[1], totals[2]
    ))
}

fn max_batch_ordering() -> Outcome {
    let cfg = VitConfig::vit_b_4x224();
    let ram = 24.0 * 1024f64.powi(3);
    let overhead = calibrate_fixed_overhead(&cfg, BASELINE, ram, 22).map_err(|e| e.to_string())?;
    let mut batches = Vec::new();
    for modes in [BASELINE, FLASH, FLASH_CKPT] {
        let fit = max_batch_size(&cfg, modes, ram, overhead).map_err(|e| e.to_string())?;
        let per_video = activation_memory(&cfg, modes).map_err(|e| e.to_string())?.total_bytes();
        let oracle = ((ram - overhead) / per_video).floor() as u64;
        match fit {
            BatchFit::Feasible(b) => {
                ensure!(b == oracle, "{modes:?}: {b} != {oracle}");
                batches.push(b);
            }
            BatchFit::Infeasible => return Err(format!("{modes:?} infeasible")),
        }
    }
    ensure!(batches[0] == 22, "calibrated baseline fits {}", batches[0]);
    ensure!(batches[0] < batches[1] && batches[1] < batches[2], "ordering {batches:?}");
    for (got, expected) in [(batches[1], 68.0), (batches[2], 304.0)] {
        let rel = (got as f64 - expected) / expected;
        ensure!(rel.abs() <= 0.30, "{got} is {:+.1}% from {expected}", rel * 100.0);
    }
    Ok(format!(
        "22 < {} < {} ({:+.1}% vs 68, {:+.1}% vs 304)",
        batches[1],
        batches[2],
        (batches[1] as f64 / 68.0 - 1.0) * 100.0,
        (batches[2] as f64 / 304.0 - 1.0) * 100.0
    ))
}

fn libav(pipeline: Pipeline) -> Arc<LibavDecoder> {
    Arc::new(LibavDecoder::new(pipeline, DecoderOptions::default()))
}

struct Epoch {
    ids: Vec<usize>,
    digest: u64,
    high_water: usize,
}

fn run_epoch(c: &Corpus, workers: usize, capacity: usize, seed: u64, consumer: Duration) -> Result<Epoch, String> {
    let cfg = LoaderConfig {
        epoch_seed: seed,
        ..LoaderConfig::new(workers, capacity, 8)
    };
    let mut loader = Loader::new(&cfg, &c.dataset, libav(Pipeline::Fused)).map_err(|e| e.to_string())?;
    let mut ids = Vec::new();
    let mut hasher = DefaultHasher::new();
    while let Some(batch) = loader.next() {
        let batch = batch.map_err(|e| e.to_string())?;
        let hwm = loader.stats().high_water_mark;
        ensure!(hwm <= capacity, "high-water mark {hwm} exceeds capacity {capacity}");
        batch.frames.hash(&mut hasher);
        ids.extend(&batch.sample_ids);
        std::thread::sleep(consumer);
    }
    Ok(Epoch {
        ids,
        digest: hasher.finish(),
        high_water: loader.stats().high_water_mark,
    })
}

fn loader_contract() -> Outcome {
    let t0 = Instant::now();
    let c = corpus();
    ensure!(c.dataset.len() == CORPUS_CLIPS, "corpus holds {} clips", c.dataset.len());
    let bytes: u64 = c
        .manifest
        .records()
        .iter()
        .map(|r| std::fs::metadata(c.root.join(&r.chunk_path)).map(|m| m.len()).unwrap_or(0))
        .sum();
    let kbps = bytes as f64 * 8.0 / (CORPUS_CLIPS as f64 * CORPUS_SEC) / 1e3;

    let capacity = 16;
    let first = run_epoch(c, 4, capacity, 77, Duration::from_millis(2))?;
    let mut sorted = first.ids.clone();
    sorted.sort_unstable();
    ensure!(sorted == (0..CORPUS_CLIPS).collect::<Vec<_>>(), "epoch is not a permutation of the dataset");
    ensure!(first.ids == shuffled_order(CORPUS_CLIPS, 77), "delivery order differs from the seeded shuffle");

    let second = run_epoch(c, 7, capacity, 77, Duration::ZERO)?;
    ensure!(second.ids == first.ids, "order changed between runs with the same seed");
    ensure!(second.digest == first.digest, "batch contents changed between runs with the same seed");
    let other = shuffled_order(CORPUS_CLIPS, 78);
    ensure!(other != first.ids, "a different seed gave the same order");

    // Drop mid-epoch and time the wind-down against observed decode times.
    let cfg = LoaderConfig {
        epoch_seed: 79,
        ..LoaderConfig::new(8, capacity, 4)
    };
    let mut loader = Loader::new(&cfg, &c.dataset, libav(Pipeline::Fused)).map_err(|e| e.to_string())?;
    let mut longest = Duration::ZERO;
    for _ in 0..6 {
        let batch = loader.next().ok_or("epoch ended early")?.map_err(|e| e.to_string())?;
        for t in &batch.timings {
            longest = longest.max(t.finished - t.started);
        }
    }
    let before = frames_decoded_total();
    let t_drop = Instant::now();
    drop(loader);
    let wind_down = t_drop.elapsed();
    let after = frames_decoded_total();
    std::thread::sleep(Duration::from_millis(50));
    ensure!(frames_decoded_total() == after, "decoding continued after shutdown");
    ensure!(wind_down <= longest, "shutdown took {wind_down:?}, longest decode {longest:?}");

    let total = t0.elapsed() + c.build;
    ensure!(total < Duration::from_secs(600), "took {total:?}");
    Ok(format!(
        "{CORPUS_CLIPS} clips ({CORPUS_W}x{CORPUS_H}, {CORPUS_FPS} fps, {kbps:.0} kb/s, built in {:.0}s): exactly once, seeded order stable across 4 and 7 workers, high-water {} and {} <= {capacity}, shutdown {wind_down:?} <= {longest:?} ({} frames in flight), total {:.0}s",
        c.build.as_secs_f64(),
        first.high_water,
        second.high_water,
        after - before,
        total.as_secs_f64()
    ))
}

fn benchmark_direction() -> Outcome {
    let c = corpus();
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut lines = Vec::new();
    for workers in [8usize, 16] {
        let mut totals = [0.0; 2];
        for (slot, pipeline) in [Pipeline::Fused, Pipeline::Reference].into_iter().enumerate() {
            let cfg = LoaderConfig {
                pipeline,
                epoch_seed: 5,
                ..LoaderConfig::new(workers, 32, 8)
            };
            let (report, _) = run_benchmark(&cfg, &c.dataset, libav(pipeline), &BenchOptions::new(256))
                .map_err(|e| e.to_string())?;
            totals[slot] = report.total_throughput;
        }
        ensure!(
            totals[0] > totals[1],
            "M = {workers}: fused {:.1} <= reference {:.1} clips/s",
            totals[0],
            totals[1]
        );
        lines.push(format!("M={workers} fused {:.1} > reference {:.1} clips/s", totals[0], totals[1]));
    }
    Ok(format!("{} ({threads} hardware threads)", lines.join(", ")))
}

