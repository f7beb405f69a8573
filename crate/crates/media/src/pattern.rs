//! Synthetic test pattern with the frame index and clip id baked into the
//! pixels as two rows of large black/white blocks.
//!
//! Row 0 carries the 16-bit frame index and row 1 the 16-bit clip id, most
//! significant bit first. The rest of the picture is a moving triangle-wave
//! gradient, a moving bright square and optional hashed noise, so encoders
//! have realistic texture to work with.

use vidpipe_core::pixels::RgbImage;

pub const CODE_BITS: u32 = 16;
const WHITE: u8 = 235;
const BLACK: u8 = 16;

/// Block size `(width, height)` of the code rows for a frame size.
pub fn code_block(width: u32, height: u32) -> (u32, u32) {
    let bw = (width / CODE_BITS).max(1);
    let bh = bw.clamp(2, (height / 8).max(2)) & !1;
    (bw, bh.max(2))
}

fn hash(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^ (x >> 33)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pattern {
    pub width: u32,
    pub height: u32,
    pub clip_id: u32,
    /// Peak noise amplitude in luma steps.
    pub noise: u8,
}

impl Pattern {
    pub fn new(width: u32, height: u32, clip_id: u32, noise: u8) -> Self {
        Self {
            width,
            height,
            clip_id,
            noise,
        }
    }

    fn luma(&self, x: u32, y: u32, index: u32) -> u8 {
        let (bw, bh) = code_block(self.width, self.height);
        if y < 2 * bh {
            let row = y / bh;
            let bit = x / bw;
            if bit >= CODE_BITS {
                return BLACK;
            }
            let word = if row == 0 { index } else { self.clip_id };
            return if (word >> (CODE_BITS - 1 - bit)) & 1 == 1 { WHITE } else { BLACK };
        }
        let g = (x * 2 + y + index * 3 + self.clip_id * 17) & 255;
        let tri = if g < 128 { g * 2 } else { (255 - g) * 2 };
        let mut v = 40 + (tri * 140 / 255) as i32;
        let side = (self.height / 4).max(2);
        let sx = (index * 2 + self.clip_id * 29) % self.width.max(1);
        let sy = self.height / 2;
        let dx = (x + self.width - sx) % self.width;
        if dx < side && y >= sy && y < sy + side {
            v += 50;
        }
        if self.noise > 0 {
            let h = hash(u64::from(x) | u64::from(y) << 16 | u64::from(index) << 32 | u64::from(self.clip_id) << 48);
            let span = 2 * i32::from(self.noise) + 1;
            v += (h % span as u64) as i32 - i32::from(self.noise);
        }
        v.clamp(16, 235) as u8
    }

    fn chroma(&self, cx: u32, cy: u32, index: u32) -> (u8, u8) {
        let (_, bh) = code_block(self.width, self.height);
        if cy < bh {
            return (128, 128);
        }
        let cw = (self.width / 2).max(1);
        let ch = (self.height / 2).max(1);
        let u = 128 + (cx * 60 / cw) as i32 - 30 + ((self.clip_id * 7) % 21) as i32 - 10;
        let v = 128 + (cy * 60 / ch) as i32 - 30 + ((index / 4) % 21) as i32 - 10;
        (u.clamp(16, 240) as u8, v.clamp(16, 240) as u8)
    }

    /// Writes frame `index` into planar 4:2:0 buffers.
    pub fn fill(&self, index: u32, y: &mut [u8], y_stride: usize, u: &mut [u8], u_stride: usize, v: &mut [u8], v_stride: usize) {
        for row in 0..self.height {
            let line = &mut y[row as usize * y_stride..];
            for col in 0..self.width {
                line[col as usize] = self.luma(col, row, index);
            }
        }
        for row in 0..self.height.div_ceil(2) {
            for col in 0..self.width.div_ceil(2) {
                let (cu, cv) = self.chroma(col, row, index);
                u[row as usize * u_stride + col as usize] = cu;
                v[row as usize * v_stride + col as usize] = cv;
            }
        }
    }
}

fn block_is_white(img: &RgbImage, x0: u32, y0: u32, bw: u32, bh: u32) -> bool {
    let (mut sum, mut n) = (0u64, 0u64);
    for y in y0 + bh / 4..y0 + (3 * bh).div_ceil(4) {
        for x in x0 + bw / 4..x0 + (3 * bw).div_ceil(4) {
            if x < img.width && y < img.height {
                let [r, g, b] = img.pixel(x, y);
                sum += u64::from(r) + u64::from(g) + u64::from(b);
                n += 3;
            }
        }
    }
    n > 0 && sum / n > 128
}

/// Reads `(frame_index, clip_id)` back from a full, unflipped frame.
pub fn read_code(img: &RgbImage) -> (u32, u32) {
    let (bw, bh) = code_block(img.width, img.height);
    let word = |row: u32| {
        (0..CODE_BITS).fold(0u32, |acc, bit| {
            (acc << 1) | u32::from(block_is_white(img, bit * bw, row * bh, bw, bh))
        })
    };
    (word(0), word(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use vidpipe_core::pixels::Yuv420;

    fn render(p: &Pattern, index: u32) -> RgbImage {
        let (w, h) = (p.width as usize, p.height as usize);
        let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
        let (mut y, mut u, mut v) = (vec![0; w * h], vec![0; cw * ch], vec![0; cw * ch]);
        p.fill(index, &mut y, w, &mut u, cw, &mut v, cw);
        Yuv420 {
            width: p.width,
            height: p.height,
            y: &y,
            y_stride: w,
            u: &u,
            u_stride: cw,
            v: &v,
            v_stride: cw,
        }
        .to_rgb()
    }

    #[test]
    fn code_round_trips_losslessly() {
        for (w, h) in [(160, 128), (320, 256), (64, 48)] {
            let p = Pattern::new(w, h, 1234, 6);
            for index in [0, 1, 119, 4095, 65535] {
                assert_eq!(read_code(&render(&p, index)), (index, 1234), "{w}x{h} frame {index}");
            }
        }
    }

    #[test]
    fn frames_differ_over_time() {
        let p = Pattern::new(64, 48, 0, 0);
        assert_ne!(render(&p, 0).data, render(&p, 1).data);
    }
}
