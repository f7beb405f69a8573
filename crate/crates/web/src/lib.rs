//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string so the page only needs `JSON.parse`.
//! Errors come back as rejected strings.

use serde_json::json;
use wasm_bindgen::prelude::*;

use vidpipe_core::perf::{
    activation_memory, calibrate_fixed_overhead, fit_batch, pipeline_throughput, sweep_gpus, MemoryModes,
    PipelineProfile, VitConfig,
};
use vidpipe_core::{sample_crop, FrameGeometry, RrcParams, SampleSeed};

const GIB: f64 = 1024.0 * 1024.0 * 1024.0;

fn to_json(v: serde_json::Value) -> String {
    v.to_string()
}

/// `count` random resized crops of a `width`×`height` frame, as
/// `[{x, y, crop_w, crop_h}, ...]`.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn sample_crops(
    width: u32,
    height: u32,
    count: u32,
    seed: u32,
    scale_min: f64,
    scale_max: f64,
    ratio_min: f64,
    ratio_max: f64,
) -> Result<String, String> {
    let params = RrcParams {
        scale: [scale_min, scale_max],
        ratio: [ratio_min, ratio_max],
        ..RrcParams::default()
    };
    let geometry = FrameGeometry::new(width, height);
    let rects = (0..u64::from(count))
        .map(|i| sample_crop(geometry, &params, SampleSeed::new(u64::from(seed), 0, i)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(to_json(json!(rects)))
}

/// ViT-B activation memory for `frames` input frames in all three modes,
/// with the largest batch that fits in `gpu_ram_gib`.
///
/// The fixed overhead is calibrated so the baseline fits exactly
/// `baseline_batch`; 0 means no overhead.
#[wasm_bindgen]
pub fn plan_memory(frames: u32, gpu_ram_gib: f64, baseline_batch: u32) -> Result<String, String> {
    let cfg = VitConfig {
        frames,
        ..VitConfig::vit_b_4x224()
    };
    let ram = gpu_ram_gib * GIB;
    let baseline = MemoryModes {
        flash_attention: false,
        grad_checkpointing: false,
    };
    let overhead = if baseline_batch == 0 {
        0.0
    } else {
        calibrate_fixed_overhead(&cfg, baseline, ram, u64::from(baseline_batch)).map_err(|e| e.to_string())?
    };
    let mut modes = Vec::new();
    for (name, flash, ckpt) in [("baseline", false, false), ("flash", true, false), ("flash+ckpt", true, true)] {
        let m = MemoryModes {
            flash_attention: flash,
            grad_checkpointing: ckpt,
        };
        let report = activation_memory(&cfg, m).map_err(|e| e.to_string())?;
        let batch = fit_batch(report.total_bytes(), ram, overhead).batch_size();
        modes.push(json!({"name": name, "memory": report, "max_batch": batch}));
    }
    Ok(to_json(json!({
        "tokens": cfg.tokens(),
        "fixed_overhead_gib": overhead / GIB,
        "modes": modes,
    })))
}

/// Stage capacities and end-to-end rate, plus a sweep over 1..=`max_gpus`.
#[wasm_bindgen]
pub fn simulate_throughput(
    gpus: u32,
    per_gpu_rate: f64,
    workers: u32,
    per_worker_rate: f64,
    read_speed_mb_s: f64,
    megabits_per_clip: f64,
    max_gpus: u32,
) -> Result<String, String> {
    let profile = PipelineProfile {
        num_gpus: gpus,
        per_gpu_rate,
        num_workers: workers,
        per_worker_rate,
        read_speed: read_speed_mb_s * 1e6,
        bits_per_clip: megabits_per_clip * 1e6,
    };
    let report = pipeline_throughput(&profile).map_err(|e| e.to_string())?;
    let sweep: Vec<_> = sweep_gpus(&profile, max_gpus.max(1))
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(g, r)| json!({"gpus": g, "report": r}))
        .collect();
    Ok(to_json(json!({"report": report, "sweep": sweep})))
}
