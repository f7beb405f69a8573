//! Activation memory of an isotropic video ViT.
//!
//! Activations saved for backward are counted per layer type:
//!
//! * LayerNorm: `layernorm · N·D` (normalized outputs)
//! * MLP: `(mlp_hidden · mlp_ratio + mlp_out) · N·D`
//! * MHA, plain: `attention · heads · N²` (logits and softmax output)
//! * MHA, memory-efficient: `flash_stats · heads · N + flash_out · N·D`
//!
//! all times `bytes_per_elem`. Without checkpointing every one of the `L`
//! layers keeps its activations. With checkpointing the stack is cut into
//! `⌈√L⌉` segments; only segment inputs (`N·D` each) and one live segment
//! are resident.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const MB: f64 = 1e6;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
}

/// Saved-tensor counts per term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryCoefficients {
    pub layernorm: f64,
    pub mlp_hidden: f64,
    pub mlp_out: f64,
    pub attention: f64,
    pub flash_stats: f64,
    pub flash_out: f64,
}

impl Default for MemoryCoefficients {
    fn default() -> Self {
        Self {
            layernorm: 2.0,
            mlp_hidden: 2.0,
            mlp_out: 1.0,
            attention: 2.0,
            flash_stats: 1.0,
            flash_out: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitConfig {
    pub frames: u32,
    pub height: u32,
    pub width: u32,
    #[serde(default = "one")]
    pub patch_t: u32,
    pub patch_h: u32,
    pub patch_w: u32,
    pub depth: u32,
    pub dim: u32,
    pub heads: u32,
    #[serde(default = "two")]
    pub bytes_per_elem: f64,
    #[serde(default = "four")]
    pub mlp_ratio: f64,
    #[serde(default)]
    pub extra_tokens: u32,
    #[serde(default)]
    pub coefficients: MemoryCoefficients,
}

fn one() -> u32 {
    1
}
fn two() -> f64 {
    2.0
}
fn four() -> f64 {
    4.0
}

impl VitConfig {
    /// ViT-B/16 on 4 frames of 224×224 with 16×16×1 cubes, fp16, one class
    /// token.
    pub fn vit_b_4x224() -> Self {
        Self {
            frames: 4,
            height: 224,
            width: 224,
            patch_t: 1,
            patch_h: 16,
            patch_w: 16,
            depth: 12,
            dim: 768,
            heads: 12,
            bytes_per_elem: 2.0,
            mlp_ratio: 4.0,
            extra_tokens: 1,
            coefficients: MemoryCoefficients::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("frames", self.frames, self.patch_t),
            ("height", self.height, self.patch_h),
            ("width", self.width, self.patch_w),
        ];
        for (name, size, patch) in dims {
            if patch == 0 || size == 0 || size % patch != 0 {
                return Err(ModelError::Config(format!(
                    "{name} {size} is not a positive multiple of the patch extent {patch}"
                )));
            }
        }
        if self.depth == 0 || self.dim == 0 || self.heads == 0 {
            return Err(ModelError::Config("depth, dim and heads must be at least 1".into()));
        }
        if !(self.bytes_per_elem > 0.0 && self.mlp_ratio > 0.0) {
            return Err(ModelError::Config("bytes_per_elem and mlp_ratio must be positive".into()));
        }
        Ok(())
    }

    pub fn tokens(&self) -> u64 {
        u64::from(self.frames / self.patch_t)
            * u64::from(self.height / self.patch_h)
            * u64::from(self.width / self.patch_w)
            + u64::from(self.extra_tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MemoryModes {
    pub flash_attention: bool,
    pub grad_checkpointing: bool,
}

/// Activation memory in MB (10⁶ bytes) per video.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub layernorm: f64,
    pub mha: f64,
    pub mlp: f64,
    /// Segment-boundary activations kept by gradient checkpointing.
    pub checkpoints: f64,
    pub total: f64,
    pub tokens: u64,
    /// Layers whose activations are resident at the peak.
    pub resident_layers: u32,
    pub modes: MemoryModes,
}

impl MemoryReport {
    pub fn total_bytes(&self) -> f64 {
        self.total * MB
    }
}

/// `(segments, layers per segment)` for checkpointing a `depth`-layer stack.
pub fn checkpoint_schedule(depth: u32) -> (u32, u32) {
    let segments = f64::from(depth).sqrt().ceil() as u32;
    (segments, depth.div_ceil(segments))
}

pub fn activation_memory(config: &VitConfig, modes: MemoryModes) -> Result<MemoryReport, ModelError> {
    config.validate()?;
    let c = &config.coefficients;
    let n = config.tokens() as f64;
    let d = f64::from(config.dim);
    let heads = f64::from(config.heads);
    let bytes = config.bytes_per_elem;

    let layernorm = c.layernorm * n * d * bytes;
    let mlp = (c.mlp_hidden * config.mlp_ratio + c.mlp_out) * n * d * bytes;
    let mha = if modes.flash_attention {
        (c.flash_stats * heads * n + c.flash_out * n * d) * bytes
    } else {
        c.attention * heads * n * n * bytes
    };

    let (resident_layers, checkpoints) = if modes.grad_checkpointing {
        let (segments, per_segment) = checkpoint_schedule(config.depth);
        (per_segment, f64::from(segments) * n * d * bytes)
    } else {
        (config.depth, 0.0)
    };
    let layers = f64::from(resident_layers);
    let report = MemoryReport {
        layernorm: layernorm * layers / MB,
        mha: mha * layers / MB,
        mlp: mlp * layers / MB,
        checkpoints: checkpoints / MB,
        total: 0.0,
        tokens: config.tokens(),
        resident_layers,
        modes,
    };
    Ok(MemoryReport {
        total: report.layernorm + report.mha + report.mlp + report.checkpoints,
        ..report
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "batch_size", rename_all = "snake_case")]
pub enum BatchFit {
    Feasible(u64),
    Infeasible,
}

impl BatchFit {
    pub fn batch_size(&self) -> Option<u64> {
        match *self {
            BatchFit::Feasible(b) => Some(b),
            BatchFit::Infeasible => None,
        }
    }
}

/// Largest `b` with `b · per_video + fixed_overhead ≤ gpu_ram` (bytes).
pub fn fit_batch(per_video_bytes: f64, gpu_ram: f64, fixed_overhead: f64) -> BatchFit {
    let free = gpu_ram - fixed_overhead;
    if !(free > 0.0 && per_video_bytes > 0.0) {
        return BatchFit::Infeasible;
    }
    match (free / per_video_bytes).floor() as u64 {
        0 => BatchFit::Infeasible,
        b => BatchFit::Feasible(b),
    }
}

pub fn max_batch_size(
    config: &VitConfig,
    modes: MemoryModes,
    gpu_ram: f64,
    fixed_overhead: f64,
) -> Result<BatchFit, ModelError> {
    let report = activation_memory(config, modes)?;
    Ok(fit_batch(report.total_bytes(), gpu_ram, fixed_overhead))
}

/// Fixed overhead (bytes) placing `observed_batch` in the middle of its
/// feasible interval for the given configuration.
pub fn calibrate_fixed_overhead(
    config: &VitConfig,
    modes: MemoryModes,
    gpu_ram: f64,
    observed_batch: u64,
) -> Result<f64, ModelError> {
    let per_video = activation_memory(config, modes)?.total_bytes();
    let overhead = gpu_ram - (observed_batch as f64 + 0.5) * per_video;
    if overhead < 0.0 {
        return Err(ModelError::Config(format!(
            "{observed_batch} videos of {:.2} MB do not fit in {:.2} GB",
            per_video / MB,
            gpu_ram / 1e9
        )));
    }
    Ok(overhead)
}

/// Measured or published per-type memory (MB/video) to fit coefficients to.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryObservation {
    pub layernorm: Option<f64>,
    pub mha_plain: Option<f64>,
    pub mha_flash: Option<f64>,
    pub mlp: Option<f64>,
}

/// Rescales each coefficient group so the no-checkpoint model reproduces the
/// observed values exactly. Unobserved groups are left unchanged.
pub fn fit_coefficients(config: &VitConfig, observed: &MemoryObservation) -> Result<MemoryCoefficients, ModelError> {
    let plain = activation_memory(config, MemoryModes::default())?;
    let flash = activation_memory(
        config,
        MemoryModes {
            flash_attention: true,
            grad_checkpointing: false,
        },
    )?;
    let scale = |obs: Option<f64>, model: f64, name: &str| -> Result<f64, ModelError> {
        match obs {
            None => Ok(1.0),
            Some(v) if v >= 0.0 && model > 0.0 => Ok(v / model),
            Some(v) => Err(ModelError::Config(format!(
                "cannot fit {name}: observed {v}, model term {model}"
            ))),
        }
    };
    let mut c = config.coefficients;
    c.layernorm *= scale(observed.layernorm, plain.layernorm, "layernorm")?;
    let mlp = scale(observed.mlp, plain.mlp, "mlp")?;
    c.mlp_hidden *= mlp;
    c.mlp_out *= mlp;
    c.attention *= scale(observed.mha_plain, plain.mha, "plain attention")?;
    let fl = scale(observed.mha_flash, flash.mha, "memory-efficient attention")?;
    c.flash_stats *= fl;
    c.flash_out *= fl;
    Ok(c)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x.ln(), b + y.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = points.iter().fold((0.0, 0.0), |(num, den), &(x, y)| {
        let dx = x.ln() - mx;
        (num + dx * (y.ln() - my), den + dx * dx)
    });
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLAIN: MemoryModes = MemoryModes {
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

    fn with_tokens(side: u32) -> VitConfig {
        VitConfig {
            height: side,
            width: side,
            extra_tokens: 0,
            ..VitConfig::vit_b_4x224()
        }
    }

    #[test]
    fn token_count() {
        assert_eq!(VitConfig::vit_b_4x224().tokens(), 785);
        assert_eq!(with_tokens(224).tokens(), 784);
    }

    #[test]
    fn rejects_indivisible_shapes() {
        let bad = VitConfig {
            height: 225,
            ..VitConfig::vit_b_4x224()
        };
        assert!(activation_memory(&bad, PLAIN).is_err());
    }

    #[test]
    fn doubling_tokens_scales_attention_terms() {
        // 4 → 8 frames doubles N exactly.
        let base = with_tokens(224);
        let doubled = VitConfig { frames: 8, ..base };
        for (modes, factor) in [(FLASH, 2.0), (PLAIN, 4.0)] {
            let a = activation_memory(&base, modes).unwrap().mha;
            let b = activation_memory(&doubled, modes).unwrap().mha;
            assert!((b / a - factor).abs() < 1e-12, "{modes:?}: {}", b / a);
        }
    }

    #[test]
    fn vit_b_modes_are_ordered() {
        let cfg = VitConfig::vit_b_4x224();
        let plain = activation_memory(&cfg, PLAIN).unwrap();
        let flash = activation_memory(&cfg, FLASH).unwrap();
        let ckpt = activation_memory(&cfg, FLASH_CKPT).unwrap();
        assert!(plain.mha > 100.0 * flash.mha);
        assert!(plain.total > flash.total && flash.total > ckpt.total);
        for r in [plain, flash, ckpt] {
            let sum = r.layernorm + r.mha + r.mlp + r.checkpoints;
            assert!((r.total - sum).abs() < 1e-9);
        }
        // Default coefficients land near the published LayerNorm bar.
        assert!((plain.layernorm - 29.04).abs() / 29.04 < 0.01);
    }

    #[test]
    fn checkpoint_schedule_examples() {
        assert_eq!(checkpoint_schedule(12), (4, 3));
        assert_eq!(checkpoint_schedule(16), (4, 4));
        assert_eq!(checkpoint_schedule(1), (1, 1));
        assert_eq!(checkpoint_schedule(10), (4, 3));
    }

    #[test]
    fn fitted_coefficients_reproduce_observations() {
        let cfg = VitConfig::vit_b_4x224();
        let obs = MemoryObservation {
            layernorm: Some(29.04),
            mha_plain: Some(261.80),
            mha_flash: Some(0.085),
            mlp: Some(141.55),
        };
        let fitted = VitConfig {
            coefficients: fit_coefficients(&cfg, &obs).unwrap(),
            ..cfg
        };
        let plain = activation_memory(&fitted, PLAIN).unwrap();
        let flash = activation_memory(&fitted, FLASH).unwrap();
        assert!((plain.layernorm - 29.04).abs() < 1e-9);
        assert!((plain.mha - 261.80).abs() < 1e-9);
        assert!((plain.mlp - 141.55).abs() < 1e-9);
        assert!((flash.mha - 0.085).abs() < 1e-12);
    }

    #[test]
    fn batch_fit_boundaries() {
        assert_eq!(fit_batch(10.0, 101.0, 1.0), BatchFit::Feasible(10));
        assert_eq!(fit_batch(10.0, 100.0, 100.0 - 1.0), BatchFit::Infeasible);
        // Halving per-video memory at least doubles the batch.
        for free in [7.0, 100.0, 12345.0] {
            let b = fit_batch(10.0, free, 0.0).batch_size().unwrap_or(0);
            let b2 = fit_batch(5.0, free, 0.0).batch_size().unwrap_or(0);
            assert!(b2 >= 2 * b);
        }
    }

    #[test]
    fn one_byte_headroom_is_infeasible() {
        let cfg = VitConfig::vit_b_4x224();
        let overhead = 10e9;
        assert_eq!(
            max_batch_size(&cfg, FLASH_CKPT, overhead + 1.0, overhead).unwrap(),
            BatchFit::Infeasible
        );
    }

    #[test]
    fn calibration_hits_observed_batch() {
        let cfg = VitConfig::vit_b_4x224();
        let ram = 24.0 * 1024f64.powi(3);
        let overhead = calibrate_fixed_overhead(&cfg, PLAIN, ram, 22).unwrap();
        assert_eq!(max_batch_size(&cfg, PLAIN, ram, overhead).unwrap(), BatchFit::Feasible(22));
        assert!(calibrate_fixed_overhead(&cfg, PLAIN, 1e9, 22).is_err());
    }

    #[test]
    fn max_batch_is_monotone() {
        let cfg = VitConfig::vit_b_4x224();
        let mut last = 0;
        for gb in 8..64 {
            let b = max_batch_size(&cfg, FLASH, gb as f64 * 1e9, 4e9).unwrap().batch_size().unwrap_or(0);
            assert!(b >= last);
            last = b;
        }
        let bigger = [
            VitConfig { frames: 8, ..cfg },
            VitConfig { depth: 24, ..cfg },
            VitConfig { dim: 1024, heads: 16, ..cfg },
        ];
        let base = max_batch_size(&cfg, FLASH, 24e9, 4e9).unwrap().batch_size().unwrap();
        for c in bigger {
            let b = max_batch_size(&c, FLASH, 24e9, 4e9).unwrap().batch_size().unwrap_or(0);
            assert!(b <= base, "{c:?}");
        }
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<_> = [1.0, 2.0, 8.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(1.7))).collect();
        assert!((loglog_slope(&pts) - 1.7).abs() < 1e-12);
    }
}
