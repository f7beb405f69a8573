//! RandomResizedCrop parameters sampled from frame geometry alone.
//!
//! Crops are drawn before any pixel is decoded, so the decoder can apply
//! them as a filter. The aspect ratio is drawn uniformly (not log-uniformly)
//! from `[ratio_min, ratio_max]` and all rounding is half-to-even.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{uniform, SampleSeed, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum RrcError {
    #[error("invalid crop configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
}

/// What to return once every attempt produced a crop that does not fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    #[default]
    CenterCrop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RrcParams {
    /// Output size as `[height, width]`.
    #[serde(default = "default_target")]
    pub target: [u32; 2],
    #[serde(default = "default_scale")]
    pub scale: [f64; 2],
    #[serde(default = "default_ratio")]
    pub ratio: [f64; 2],
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default)]
    pub fallback: Fallback,
}

fn default_target() -> [u32; 2] {
    [224, 224]
}
fn default_scale() -> [f64; 2] {
    [0.5, 1.0]
}
fn default_ratio() -> [f64; 2] {
    [3.0 / 4.0, 4.0 / 3.0]
}
fn default_attempts() -> u32 {
    10
}

impl Default for RrcParams {
    /// 224×224 output, scale (0.5, 1.0), ratio (3/4, 4/3), 10 attempts.
    fn default() -> Self {
        Self {
            target: default_target(),
            scale: default_scale(),
            ratio: default_ratio(),
            max_attempts: default_attempts(),
            fallback: Fallback::CenterCrop,
        }
    }
}

impl RrcParams {
    pub fn target_h(&self) -> u32 {
        self.target[0]
    }

    pub fn target_w(&self) -> u32 {
        self.target[1]
    }

    pub fn validate(&self) -> Result<(), RrcError> {
        let [smin, smax] = self.scale;
        let [rmin, rmax] = self.ratio;
        if !(smin > 0.0 && smin <= smax && smax <= 1.0) {
            return Err(RrcError::Config(format!(
                "scale range must satisfy 0 < min <= max <= 1, got ({smin}, {smax})"
            )));
        }
        if !(rmin > 0.0 && rmin <= rmax && rmax.is_finite()) {
            return Err(RrcError::Config(format!(
                "ratio range must satisfy 0 < min <= max, got ({rmin}, {rmax})"
            )));
        }
        if self.target[0] == 0 || self.target[1] == 0 {
            return Err(RrcError::Config("target size must be at least 1×1".into()));
        }
        if self.max_attempts == 0 {
            return Err(RrcError::Config("max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub width: u32,
    pub height: u32,
}

impl FrameGeometry {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    fn validate(&self) -> Result<(), RrcError> {
        if self.width == 0 || self.height == 0 {
            return Err(RrcError::Input(format!(
                "frame geometry {}×{} is smaller than 1×1",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// A crop rectangle in frame pixels; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub crop_w: u32,
    pub crop_h: u32,
}

impl CropRect {
    pub const fn new(x: u32, y: u32, crop_w: u32, crop_h: u32) -> Self {
        Self {
            x,
            y,
            crop_w,
            crop_h,
        }
    }

    pub const fn full(geometry: FrameGeometry) -> Self {
        Self::new(0, 0, geometry.width, geometry.height)
    }

    pub fn area(&self) -> u64 {
        u64::from(self.crop_w) * u64::from(self.crop_h)
    }

    pub fn fits(&self, geometry: FrameGeometry) -> bool {
        self.crop_w >= 1
            && self.crop_h >= 1
            && u64::from(self.x) + u64::from(self.crop_w) <= u64::from(geometry.width)
            && u64::from(self.y) + u64::from(self.crop_h) <= u64::from(geometry.height)
    }
}

fn round_even(v: f64) -> f64 {
    v.round_ties_even()
}

/// Samples a crop rectangle for `geometry` using the crop stream of `seed`.
///
/// Each attempt draws the area `A ~ U(s_min·HW, s_max·HW)` and the ratio
/// `r ~ U(r_min, r_max)`, rounds `√(A·r) × √(A/r)` and, if the rectangle
/// fits, draws the left and top edges from one stream in that order.
/// Once `max_attempts` attempts miss, a centered crop at the largest
/// in-range size that fits is returned instead.
pub fn sample_crop(
    geometry: FrameGeometry,
    params: &RrcParams,
    seed: SampleSeed,
) -> Result<CropRect, RrcError> {
    params.validate()?;
    geometry.validate()?;

    let width = f64::from(geometry.width);
    let height = f64::from(geometry.height);
    let area = width * height;
    let [smin, smax] = params.scale;
    let [rmin, rmax] = params.ratio;
    let mut rng = seed.rng(Stream::Crop);

    for _ in 0..params.max_attempts {
        let target_area = uniform(&mut rng, smin * area, smax * area);
        let ratio = uniform(&mut rng, rmin, rmax);
        let crop_w = round_even((target_area * ratio).sqrt());
        let crop_h = round_even((target_area / ratio).sqrt());
        if crop_w < 1.0 || crop_h < 1.0 || crop_w > width || crop_h > height {
            continue;
        }
        let x = round_even(uniform(&mut rng, 0.0, width - crop_w));
        let y = round_even(uniform(&mut rng, 0.0, height - crop_h));
        return Ok(CropRect::new(x as u32, y as u32, crop_w as u32, crop_h as u32));
    }

    Ok(match params.fallback {
        Fallback::CenterCrop => fallback_crop(geometry, params),
    })
}

/// Largest centered rectangle whose aspect ratio is the frame ratio clamped
/// into range and whose area does not exceed `s_max·HW`.
fn fallback_crop(geometry: FrameGeometry, params: &RrcParams) -> CropRect {
    let width = f64::from(geometry.width);
    let height = f64::from(geometry.height);
    let ratio = (width / height).clamp(params.ratio[0], params.ratio[1]);
    let (mut w, mut h) = if ratio <= width / height {
        (height * ratio, height)
    } else {
        (width, width / ratio)
    };
    let budget = params.scale[1] * width * height;
    if w * h > budget {
        let k = (budget / (w * h)).sqrt();
        w *= k;
        h *= k;
    }
    let crop_w = round_even(w).clamp(1.0, width) as u32;
    let crop_h = round_even(h).clamp(1.0, height) as u32;
    CropRect::new(
        (geometry.width - crop_w) / 2,
        (geometry.height - crop_h) / 2,
        crop_w,
        crop_h,
    )
}

/// Centered `target_w × target_h` rectangle; odd margins favour left/top.
pub fn center_crop(
    geometry: FrameGeometry,
    target_h: u32,
    target_w: u32,
) -> Result<CropRect, RrcError> {
    geometry.validate()?;
    if target_h == 0 || target_w == 0 {
        return Err(RrcError::Input("target size must be at least 1×1".into()));
    }
    if target_w > geometry.width || target_h > geometry.height {
        return Err(RrcError::Input(format!(
            "target {target_w}×{target_h} exceeds frame {}×{}",
            geometry.width, geometry.height
        )));
    }
    Ok(CropRect::new(
        (geometry.width - target_w) / 2,
        (geometry.height - target_h) / 2,
        target_w,
        target_h,
    ))
}
