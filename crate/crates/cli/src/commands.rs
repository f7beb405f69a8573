use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use vidpipe_core::bench::{run_benchmark, SampleRow};
use vidpipe_core::clip::write_tensor;
use vidpipe_core::perf::{
    activation_memory, calibrate_fixed_overhead, fit_batch, fit_coefficients, pipeline_throughput, sweep_gpus,
    BatchFit, MemoryModes, MemoryObservation, MemoryReport, PipelineProfile, VitConfig,
};
use vidpipe_core::units::{parse_bits, parse_bytes, parse_seconds};
use vidpipe_core::{
    center_crop, plan_chunks, sample_crop, solve_chunk_length, ChunkLengthAdvice, ChunkManifest, ChunkRecord,
    ClipRequest, Dataset, FrameGeometry, HardwareProfile, Pipeline, SampleSeed,
};
use vidpipe_media::corpus::MANIFEST_FILE;
use vidpipe_media::{
    chunk_header, chunk_video, make_synthetic_corpus, probe, ChunkMode, ChunkOptions, CorpusSpec, DecoderOptions,
    LibavDecoder,
};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::{Cli, Command};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<()> {
    let config = PipelineConfig::load_or_default(cli.config.as_deref())?;
    let out = Output { json: cli.json };
    match &cli.command {
        Command::SolveChunkLength(a) => solve(a, &config, &out),
        Command::Chunk(a) => chunk(a, &config, &out),
        Command::Decode(a) => decode(a, &config, &out),
        Command::BenchLoader(a) => bench(a, &config, cli.seed, &out),
        Command::MakeCorpus(a) => corpus(a, &out),
        Command::PlanMemory(a) => plan_memory(a, &config, &out),
        Command::CalibrateMemory(a) => calibrate(a, &config, &out),
        Command::SimulateThroughput(a) => throughput(a, &config, &out),
        Command::SampleCrop(a) => crops(a, &config, cli.seed.unwrap_or(0), &out),
    }
}

struct Output {
    json: bool,
}

impl Output {
    /// Prints `value` as JSON, or `human` otherwise.
    fn emit<T: Serialize>(&self, value: &T, human: impl FnOnce() -> String) -> Result<()> {
        let text = if self.json {
            serde_json::to_string_pretty(value).expect("reports serialize")
        } else {
            human()
        };
        let mut stdout = std::io::stdout().lock();
        writeln!(stdout, "{text}").map_err(|e| CliError::io("stdout", e))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(&dir.display().to_string(), e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(&path.display().to_string(), e))
}

fn solve(a: &crate::SolveArgs, config: &PipelineConfig, out: &Output) -> Result<()> {
    let hw = config.chunking.hardware.as_ref().map(|h| h.profile());
    let missing = |name: &str| CliError::Config(format!("--{name} is required (or set chunking.hardware in the config)"));
    let profile = HardwareProfile {
        batch_size: a.batch_size.or(hw.map(|h| h.batch_size)).ok_or_else(|| missing("batch-size"))?,
        avg_bitrate: match &a.bitrate {
            Some(s) => parse_bits(s)?,
            None => hw.map(|h| h.avg_bitrate).ok_or_else(|| missing("bitrate"))?,
        },
        read_speed: match &a.read_speed {
            Some(s) => parse_bytes(s)?,
            None => hw.map(|h| h.read_speed).ok_or_else(|| missing("read-speed"))?,
        },
        step_time: match &a.step_time {
            Some(s) => parse_seconds(s)?,
            None => hw.map(|h| h.step_time).ok_or_else(|| missing("step-time"))?,
        },
    };
    let margin = a.margin.unwrap_or(config.chunking.safety_margin);
    let t_max = solve_chunk_length(&profile, margin)?;
    let advice = ChunkLengthAdvice::from_bound(t_max);
    out.emit(
        &json!({
            "t_max_sec": t_max,
            "nearest_sec": advice.nearest_sec,
            "practical_sec": advice.practical_sec,
            "safety_margin": margin,
            "profile": profile,
        }),
        || t_max.to_string(),
    )
}

const VIDEO_EXTENSIONS: [&str; 6] = ["mp4", "m4v", "mov", "mkv", "webm", "avi"];

fn video_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let entries = fs::read_dir(input).map_err(|e| CliError::Config(format!("--input {}: {e}", input.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| VIDEO_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn chunk_length(a: &crate::ChunkArgs, config: &PipelineConfig) -> Result<f64> {
    if let Some(s) = &a.chunk_length {
        return Ok(parse_seconds(s)?);
    }
    if let Some(s) = config.chunking.chunk_length {
        return Ok(s.0);
    }
    let hw = config
        .chunking
        .hardware
        .as_ref()
        .ok_or_else(|| CliError::Config("--chunk-length is required (or set chunking.chunk_length or chunking.hardware)".into()))?;
    let t_max = solve_chunk_length(&hw.profile(), config.chunking.safety_margin)?;
    let practical = ChunkLengthAdvice::from_bound(t_max).practical_sec;
    if practical == 0 {
        return Err(CliError::Infeasible(format!("the disk budget allows chunks of only {t_max:.3}s")));
    }
    info!("solved chunk length {t_max:.3}s, using {practical}s");
    Ok(practical as f64)
}

fn chunk(a: &crate::ChunkArgs, config: &PipelineConfig, out: &Output) -> Result<()> {
    let length = chunk_length(a, config)?;
    let mode: ChunkMode = a.mode.map_or(config.chunking.mode, Into::into);
    let options = ChunkOptions {
        jobs: a.jobs.unwrap_or(config.chunking.jobs),
        gop_sec: config.chunking.gop_sec.min(length),
        threads: config.decoder.threads,
        ..ChunkOptions::from_env()
    };
    let inputs = video_inputs(&a.input)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out.display().to_string(), e))?;
    let manifest_path = a.out.join(MANIFEST_FILE);
    let header = chunk_header(length, mode, &options);
    let mut manifest = if manifest_path.exists() {
        let existing = ChunkManifest::load(&manifest_path)?;
        if existing.header.chunk_length != length || existing.header.mode != header.mode {
            return Err(CliError::Config(format!(
                "{} was written with {}s {} chunks; refusing to mix in {length}s {}",
                manifest_path.display(),
                existing.header.chunk_length,
                existing.header.mode,
                header.mode
            )));
        }
        existing
    } else {
        ChunkManifest::new(header, Vec::new())
    };

    let mut failures = Vec::new();
    let mut written: Vec<ChunkRecord> = Vec::new();
    for path in &inputs {
        let source_id = path.file_stem().map_or_else(|| "source".into(), |s| s.to_string_lossy().into_owned());
        let result = probe(path)
            .map_err(CliError::from)
            .and_then(|info| plan_chunks(source_id.clone(), info.duration, length).map_err(CliError::from))
            .and_then(|plan| chunk_video(path, &plan, mode, &a.out, &options).map_err(CliError::from));
        match result {
            Ok(records) => {
                info!("{}: {} chunks", path.display(), records.len());
                written.extend(records);
            }
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                failures.push(json!({"input": path, "error": e.to_string()}));
            }
        }
    }
    manifest.extend(written.iter().cloned());
    manifest.write_to(&manifest_path)?;
    out.emit(
        &json!({
            "manifest": manifest_path,
            "chunk_length": length,
            "mode": mode.as_str(),
            "inputs": inputs.len(),
            "chunks_written": written.len(),
            "failures": failures,
        }),
        || {
            format!(
                "{} chunks from {} of {} inputs -> {}",
                written.len(),
                inputs.len() - failures.len(),
                inputs.len(),
                manifest_path.display()
            )
        },
    )?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{} of {} inputs failed", failures.len(), inputs.len())))
    }
}

fn decode(a: &crate::DecodeArgs, config: &PipelineConfig, out: &Output) -> Result<()> {
    let text = fs::read_to_string(&a.request)
        .map_err(|e| CliError::Config(format!("cannot read request {}: {e}", a.request.display())))?;
    let request: ClipRequest =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", a.request.display())))?;
    let pipeline: Pipeline = a.pipeline.map_or(config.decoder.pipeline, Into::into);
    let decoder = LibavDecoder::new(pipeline, DecoderOptions { threads: config.decoder.threads });
    let clip = decoder.decode(&request)?;
    let dims = clip.shape.map(|d| d as u64);
    let file = fs::File::create(&a.out).map_err(|e| CliError::io(&a.out.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    write_tensor(&mut w, dims, &clip.frames)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&a.out.display().to_string(), e))?;
    out.emit(
        &json!({
            "out": a.out,
            "pipeline": pipeline.as_str(),
            "shape": clip.shape,
            "timestamps": clip.timestamps,
            "frame_pts": clip.frame_pts,
            "source": clip.source,
            "counters": clip.counters,
            "timing_ms": clip.timing,
        }),
        || {
            format!(
                "{:?} -> {} ({} frames decoded, {} converted)",
                clip.shape,
                a.out.display(),
                clip.counters.frames_decoded,
                clip.counters.frames_converted
            )
        },
    )
}

fn bench(a: &crate::BenchArgs, config: &PipelineConfig, seed: Option<u64>, out: &Output) -> Result<()> {
    let mut lc = config.loader_config();
    if let Some(w) = a.workers {
        lc.num_workers = w;
    }
    if let Some(p) = a.pipeline {
        lc.pipeline = p.into();
    }
    if let Some(b) = a.batch_size {
        lc.batch_size = b;
    }
    if let Some(q) = a.queue_capacity {
        lc.queue_capacity = q;
    }
    if let Some(s) = seed {
        lc.epoch_seed = s;
    }
    if let Some(m) = &a.manifest {
        lc.manifest = Some(m.clone());
    }
    let mut options = config.bench_options();
    if let Some(n) = a.samples {
        options.sample_count = n;
    }
    if let Some(ms) = a.consumer_ms {
        options.consumer_ms_per_clip = ms;
    }
    let manifest_path = lc
        .manifest
        .clone()
        .ok_or_else(|| CliError::Config("no manifest: pass --manifest or set loader.manifest".into()))?;
    let manifest = ChunkManifest::load(&manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let dataset = Dataset::from_manifest(&manifest, base);
    let decoder = Arc::new(LibavDecoder::new(lc.pipeline, DecoderOptions { threads: config.decoder.threads }));
    let (report, rows) = run_benchmark(&lc, &dataset, decoder, &options)?;
    if let Some(path) = &a.out {
        write_file(path, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    }
    if let Some(path) = &a.dump_csv {
        let mut csv = String::from(SampleRow::CSV_HEADER);
        csv.push('\n');
        for r in &rows {
            csv.push_str(&r.to_csv());
            csv.push('\n');
        }
        write_file(path, &csv)?;
    }
    if report.skipped > 0 {
        warn!("{} samples were skipped after decode errors", report.skipped);
    }
    out.emit(&report, || {
        format!(
            "pipeline {} with {} workers: {:.2} clips/s total, {:.2} clips/s per worker, latency p50 {:.2} ms p90 {:.2} ms ({} measured, {} warm-up)",
            report.pipeline,
            report.num_workers,
            report.total_throughput,
            report.mean_worker_throughput,
            report.latency_ms.p50,
            report.latency_ms.p90,
            report.samples_measured,
            report.warmup_samples
        )
    })
}

fn parse_resolution(s: &str) -> Result<(u32, u32)> {
    let bad = || CliError::Config(format!("--resolution `{s}` is not WIDTHxHEIGHT"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?))
}

fn corpus(a: &crate::CorpusArgs, out: &Output) -> Result<()> {
    let (width, height) = parse_resolution(&a.resolution)?;
    let spec = CorpusSpec {
        n_clips: a.n_clips,
        length_sec: parse_seconds(&a.length)?,
        width,
        height,
        fps: a.fps,
        bitrate: parse_bits(&a.bitrate)?.round() as u64,
        gop_sec: a.gop,
        noise: a.noise,
        jobs: a.jobs,
    };
    let manifest = make_synthetic_corpus(&spec, &a.out).map_err(|e| match e {
        vidpipe_media::MediaError::Input(m) => CliError::Config(m),
        other => CliError::Data(other.to_string()),
    })?;
    let bytes: u64 = manifest
        .records()
        .iter()
        .filter_map(|r| fs::metadata(a.out.join(&r.chunk_path)).ok())
        .map(|m| m.len())
        .sum();
    out.emit(
        &json!({"manifest": a.out.join(MANIFEST_FILE), "clips": manifest.len(), "bytes": bytes, "spec": spec}),
        || format!("{} clips, {bytes} bytes -> {}", manifest.len(), a.out.join(MANIFEST_FILE).display()),
    )
}

fn vit(config: &PipelineConfig) -> VitConfig {
    config.models.vit.unwrap_or_else(VitConfig::vit_b_4x224)
}

fn gpu_ram(flag: &Option<String>, config: &PipelineConfig) -> Result<Option<f64>> {
    Ok(match flag {
        Some(s) => Some(parse_bytes(s)?),
        None => config.models.gpu_ram.map(|b| b.0),
    })
}

const BASELINE: MemoryModes = MemoryModes {
    flash_attention: false,
    grad_checkpointing: false,
};

fn memory_line(r: &MemoryReport) -> String {
    format!(
        "layernorm {:.3} MB, mha {:.3} MB, mlp {:.3} MB, checkpoints {:.3} MB, total {:.3} MB/video (N = {})",
        r.layernorm, r.mha, r.mlp, r.checkpoints, r.total, r.tokens
    )
}

fn plan_memory(a: &crate::MemoryArgs, config: &PipelineConfig, out: &Output) -> Result<()> {
    let cfg = vit(config);
    let modes = MemoryModes {
        flash_attention: a.flash,
        grad_checkpointing: a.ckpt,
    };
    let report = activation_memory(&cfg, modes)?;
    let ram = gpu_ram(&a.gpu_ram, config)?;
    let overhead = match (&a.fixed_overhead, a.calibrate_batch, ram) {
        (Some(s), _, _) => Some(parse_bytes(s)?),
        (None, Some(b), Some(ram)) => Some(calibrate_fixed_overhead(&cfg, BASELINE, ram, b)?),
        (None, Some(_), None) => return Err(CliError::Config("--calibrate-batch needs --gpu-ram".into())),
        (None, None, _) => config.models.fixed_overhead.map(|b| b.0),
    };
    let fit = ram.map(|ram| fit_batch(report.total_bytes(), ram, overhead.unwrap_or(0.0)));

    if let Some(path) = &a.csv {
        let mut csv = String::from("frames,tokens,layernorm_mb,mha_mb,mlp_mb,checkpoints_mb,total_mb,max_batch\n");
        for frames in [1u32, 2, 4, 8, 16, 32] {
            let c = VitConfig {
                frames: frames * cfg.patch_t,
                ..cfg
            };
            let r = activation_memory(&c, modes)?;
            let b = ram
                .map(|ram| fit_batch(r.total_bytes(), ram, overhead.unwrap_or(0.0)).batch_size().unwrap_or(0).to_string())
                .unwrap_or_default();
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{b}\n",
                c.frames, r.tokens, r.layernorm, r.mha, r.mlp, r.checkpoints, r.total
            ));
        }
        write_file(path, &csv)?;
    }

    out.emit(
        &json!({"memory": report, "gpu_ram": ram, "fixed_overhead": overhead, "batch": fit}),
        || {
            let mut s = memory_line(&report);
            if let Some(fit) = fit {
                s.push_str(&match fit {
                    BatchFit::Feasible(b) => format!("\nmax batch {b}"),
                    BatchFit::Infeasible => "\nmax batch: infeasible".into(),
                });
            }
            s
        },
    )?;
    match fit {
        Some(BatchFit::Infeasible) => Err(CliError::Infeasible(format!(
            "no batch of {:.3} MB videos fits in {:.0} bytes after {:.0} bytes of fixed overhead",
            report.total,
            ram.unwrap_or(0.0),
            overhead.unwrap_or(0.0)
        ))),
        _ => Ok(()),
    }
}

fn calibrate(a: &crate::CalibrateArgs, config: &PipelineConfig, out: &Output) -> Result<()> {
    let base = vit(config);
    let observed = MemoryObservation {
        layernorm: a.layernorm,
        mha_plain: a.mha_plain,
        mha_flash: a.mha_flash,
        mlp: a.mlp,
    };
    let cfg = VitConfig {
        coefficients: fit_coefficients(&base, &observed)?,
        ..base
    };
    let ram = gpu_ram(&a.gpu_ram, config)?;
    let overhead = match (a.batch, ram) {
        (Some(b), Some(ram)) => Some(calibrate_fixed_overhead(&cfg, BASELINE, ram, b)?),
        _ => None,
    };
    let mut predictions = Vec::new();
    for (flash, ckpt) in [(false, false), (true, false), (true, true)] {
        let modes = MemoryModes {
            flash_attention: flash,
            grad_checkpointing: ckpt,
        };
        let r = activation_memory(&cfg, modes)?;
        let batch = match (ram, overhead) {
            (Some(ram), Some(o)) => fit_batch(r.total_bytes(), ram, o).batch_size(),
            _ => None,
        };
        predictions.push(json!({"modes": modes, "memory": r, "max_batch": batch}));
    }
    out.emit(
        &json!({"coefficients": cfg.coefficients, "fixed_overhead": overhead, "predictions": predictions}),
        || {
            let c = cfg.coefficients;
            let mut s = format!(
                "coefficients: layernorm {:.6} mlp_hidden {:.6} mlp_out {:.6} attention {:.6} flash_stats {:.6} flash_out {:.6}",
                c.layernorm, c.mlp_hidden, c.mlp_out, c.attention, c.flash_stats, c.flash_out
            );
            if let Some(o) = overhead {
                s.push_str(&format!("\nfixed overhead {o:.0} bytes"));
            }
            for p in &predictions {
                s.push_str(&format!(
                    "\nflash={} ckpt={}: total {:.3} MB/video, max batch {}",
                    p["modes"]["flash_attention"],
                    p["modes"]["grad_checkpointing"],
                    p["memory"]["total"].as_f64().unwrap_or(f64::NAN),
                    p["max_batch"]
                ));
            }
            s
        },
    )
}

fn throughput(a: &crate::ThroughputArgs, config: &PipelineConfig, out: &Output) -> Result<()> {
    let from_file = match &a.profile {
        Some(p) => PipelineConfig::load(p)?.models.throughput,
        None => config.models.throughput.clone(),
    };
    let base = from_file.map(|t| t.profile());
    let missing = |name: &str| CliError::Config(format!("--{name} is required (or give a profile with [models.throughput])"));
    let profile = PipelineProfile {
        num_gpus: a.gpus.or(base.map(|b| b.num_gpus)).ok_or_else(|| missing("gpus"))?,
        per_gpu_rate: a.per_gpu_rate.or(base.map(|b| b.per_gpu_rate)).ok_or_else(|| missing("per-gpu-rate"))?,
        num_workers: a.workers.or(base.map(|b| b.num_workers)).ok_or_else(|| missing("workers"))?,
        per_worker_rate: a
            .per_worker_rate
            .or(base.map(|b| b.per_worker_rate))
            .ok_or_else(|| missing("per-worker-rate"))?,
        read_speed: match &a.read_speed {
            Some(s) => parse_bytes(s)?,
            None => base.map(|b| b.read_speed).ok_or_else(|| missing("read-speed"))?,
        },
        bits_per_clip: match &a.bits_per_clip {
            Some(s) => parse_bits(s)?,
            None => base.map(|b| b.bits_per_clip).ok_or_else(|| missing("bits-per-clip"))?,
        },
    };
    let report = pipeline_throughput(&profile)?;
    if let Some(path) = &a.csv {
        let mut csv = String::from("gpus,io,cpu,gpu,end_to_end,bottleneck,gpu_utilization\n");
        for (g, r) in sweep_gpus(&profile, a.max_gpus.max(1))? {
            csv.push_str(&format!(
                "{g},{},{},{},{},{},{}\n",
                r.capacities.io,
                r.capacities.cpu,
                r.capacities.gpu,
                r.end_to_end,
                serde_json::to_value(r.bottleneck).unwrap().as_str().unwrap(),
                r.gpu_utilization
            ));
        }
        write_file(path, &csv)?;
    }
    out.emit(&json!({"profile": profile, "report": report}), || {
        format!(
            "io {:.2}, cpu {:.2}, gpu {:.2} videos/s -> end to end {:.2} videos/s, bottleneck {}, GPU utilization {:.1}%",
            report.capacities.io,
            report.capacities.cpu,
            report.capacities.gpu,
            report.end_to_end,
            serde_json::to_value(report.bottleneck).unwrap().as_str().unwrap(),
            report.gpu_utilization * 100.0
        )
    })
}

fn crops(a: &crate::CropArgs, config: &PipelineConfig, seed: u64, out: &Output) -> Result<()> {
    let geometry = FrameGeometry::new(a.width, a.height);
    let params = config.rrc;
    let rects = (0..a.count)
        .map(|i| {
            if a.center {
                center_crop(geometry, params.target_h(), params.target_w())
            } else {
                sample_crop(geometry, &params, SampleSeed::new(seed, 0, i))
            }
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    out.emit(&rects, || {
        rects
            .iter()
            .map(|r| format!("{} {} {} {}", r.x, r.y, r.crop_w, r.crop_h))
            .collect::<Vec<_>>()
            .join("\n")
    })
}
