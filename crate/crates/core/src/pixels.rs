//! Pixel operations shared by the fused and reference decode paths.
//!
//! Color conversion is BT.601 limited-range integer arithmetic and the
//! scaler is fixed-point bilinear with half-pixel centers. Both are pure
//! per-pixel functions, so converting a crop directly yields the same bytes
//! as converting the whole frame and cropping afterwards.

use crate::rrc::CropRect;

/// Borrowed planar YUV 4:2:0 frame.
#[derive(Debug, Clone, Copy)]
pub struct Yuv420<'a> {
    pub width: u32,
    pub height: u32,
    pub y: &'a [u8],
    pub y_stride: usize,
    pub u: &'a [u8],
    pub u_stride: usize,
    pub v: &'a [u8],
    pub v_stride: usize,
}

#[inline]
fn clamp_u8(v: i32) -> u8 {
    v.clamp(0, 255) as u8
}

#[inline]
pub fn yuv_to_rgb(y: u8, u: u8, v: u8) -> [u8; 3] {
    let c = 298 * (i32::from(y) - 16);
    let d = i32::from(u) - 128;
    let e = i32::from(v) - 128;
    [
        clamp_u8((c + 409 * e + 128) >> 8),
        clamp_u8((c - 100 * d - 208 * e + 128) >> 8),
        clamp_u8((c + 516 * d + 128) >> 8),
    ]
}

/// Inverse of [`yuv_to_rgb`] up to rounding; used to synthesize frames.
#[inline]
pub fn rgb_to_yuv(r: u8, g: u8, b: u8) -> [u8; 3] {
    let (r, g, b) = (i32::from(r), i32::from(g), i32::from(b));
    [
        clamp_u8(((66 * r + 129 * g + 25 * b + 128) >> 8) + 16),
        clamp_u8(((-38 * r - 74 * g + 112 * b + 128) >> 8) + 128),
        clamp_u8(((112 * r - 94 * g - 18 * b + 128) >> 8) + 128),
    ]
}

/// Interleaved 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn crop(&self, rect: CropRect) -> RgbImage {
        let mut out = RgbImage::new(rect.crop_w, rect.crop_h);
        let row_bytes = rect.crop_w as usize * 3;
        for row in 0..rect.crop_h as usize {
            let src = ((rect.y as usize + row) * self.width as usize + rect.x as usize) * 3;
            out.data[row * row_bytes..(row + 1) * row_bytes]
                .copy_from_slice(&self.data[src..src + row_bytes]);
        }
        out
    }

    pub fn hflip(&self) -> RgbImage {
        let mut out = self.clone();
        let w = self.width as usize;
        for (dst, src) in out.data.chunks_exact_mut(w * 3).zip(self.data.chunks_exact(w * 3)) {
            for j in 0..w {
                dst[j * 3..j * 3 + 3].copy_from_slice(&src[(w - 1 - j) * 3..(w - j) * 3]);
            }
        }
        out
    }
}

impl<'a> Yuv420<'a> {
    /// Converts the whole frame.
    pub fn to_rgb(&self) -> RgbImage {
        self.convert_region(CropRect::new(0, 0, self.width, self.height), false)
    }

    /// Converts only the pixels of `rect`, optionally mirrored left-right.
    /// `rect` must lie inside the frame.
    pub fn convert_region(&self, rect: CropRect, hflip: bool) -> RgbImage {
        let mut out = RgbImage::new(rect.crop_w, rect.crop_h);
        let w = rect.crop_w as usize;
        for row in 0..rect.crop_h as usize {
            let sy = rect.y as usize + row;
            let y_row = &self.y[sy * self.y_stride..];
            let u_row = &self.u[(sy / 2) * self.u_stride..];
            let v_row = &self.v[(sy / 2) * self.v_stride..];
            let dst = &mut out.data[row * w * 3..(row + 1) * w * 3];
            for j in 0..w {
                let sx = rect.x as usize + if hflip { w - 1 - j } else { j };
                let rgb = yuv_to_rgb(y_row[sx], u_row[sx / 2], v_row[sx / 2]);
                dst[j * 3..j * 3 + 3].copy_from_slice(&rgb);
            }
        }
        out
    }
}

const FRAC_BITS: u32 = 11;
const ONE: i32 = 1 << FRAC_BITS;

#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: i32,
}

/// Half-pixel-center sample positions for one axis, Q16 then reduced to Q11.
fn taps(src: u32, dst: u32) -> Vec<Tap> {
    let (src, dst) = (i64::from(src), i64::from(dst));
    (0..dst)
        .map(|o| {
            let pos = (((2 * o + 1) * src) << 16) / (2 * dst) - (1 << 15);
            let pos = pos.max(0);
            let i0 = (pos >> 16) as usize;
            let last = (src - 1) as usize;
            if i0 >= last {
                Tap { i0: last, i1: last, frac: 0 }
            } else {
                Tap {
                    i0,
                    i1: i0 + 1,
                    frac: ((pos & 0xffff) >> (16 - FRAC_BITS)) as i32,
                }
            }
        })
        .collect()
}

/// Bilinear resize into planar `3 × dst_h × dst_w` output.
pub fn resize_bilinear_chw(src: &RgbImage, dst_w: u32, dst_h: u32, out: &mut [u8]) {
    let plane = dst_w as usize * dst_h as usize;
    assert_eq!(out.len(), plane * 3, "output buffer has the wrong size");
    let xs = taps(src.width, dst_w);
    let ys = taps(src.height, dst_h);
    let stride = src.width as usize * 3;
    for (oy, ty) in ys.iter().enumerate() {
        let r0 = &src.data[ty.i0 * stride..(ty.i0 + 1) * stride];
        let r1 = &src.data[ty.i1 * stride..(ty.i1 + 1) * stride];
        let wy1 = ty.frac;
        let wy0 = ONE - wy1;
        for (ox, tx) in xs.iter().enumerate() {
            let wx1 = tx.frac;
            let wx0 = ONE - wx1;
            for c in 0..3 {
                let p00 = i32::from(r0[tx.i0 * 3 + c]);
                let p01 = i32::from(r0[tx.i1 * 3 + c]);
                let p10 = i32::from(r1[tx.i0 * 3 + c]);
                let p11 = i32::from(r1[tx.i1 * 3 + c]);
                let top = p00 * wx0 + p01 * wx1;
                let bottom = p10 * wx0 + p11 * wx1;
                let v = (top * wy0 + bottom * wy1 + (1 << (2 * FRAC_BITS - 1))) >> (2 * FRAC_BITS);
                out[c * plane + oy * dst_w as usize + ox] = v as u8;
            }
        }
    }
}
