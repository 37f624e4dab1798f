//! 64-bit DCT perceptual hash.
//!
//! Recipe, pinned so hashes are reproducible across implementations:
//!
//! 1. Edge-pad crops narrower or shorter than `min_crop_px` (padding split
//!    evenly, the extra pixel on the right/bottom).
//! 2. Resample to 32x32 with bilinear interpolation on pixel centers
//!    (`src = (dst + 0.5) * scale - 0.5`, clamped to the source extent).
//! 3. Orthonormal 2D DCT-II.
//! 4. Take the 8x8 low-frequency block in row-major order without the DC
//!    term, then coefficient (0, 8), giving 64 values. Magnitudes below
//!    [`SNAP_EPSILON`] are set to zero so rounding noise cannot flip bits.
//! 5. Bit = coefficient strictly greater than the median (mean of the two
//!    middle values), ties give 0. The first coefficient is the most
//!    significant bit.

use std::fmt;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub const HASH_SIDE: usize = 32;
const BLOCK: usize = 8;
pub const SNAP_EPSILON: f64 = 1e-9;

/// Luma weights applied to decoded RGB pixels.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PerceptualHash(pub u64);

impl fmt::Display for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

pub fn hamming(a: PerceptualHash, b: PerceptualHash) -> u32 {
    (a.0 ^ b.0).count_ones()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HashError {
    #[error("crop has zero area ({width}x{height})")]
    ZeroArea { width: usize, height: usize },
    #[error("crop buffer holds {got} pixels, expected {expected}")]
    BadBuffer { got: usize, expected: usize },
}

/// Grayscale pixels in `[0, 255]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayCrop {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayCrop {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, HashError> {
        if width == 0 || height == 0 {
            return Err(HashError::ZeroArea { width, height });
        }
        if pixels.len() != width * height {
            return Err(HashError::BadBuffer {
                got: pixels.len(),
                expected: width * height,
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self, HashError> {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, pixels)
    }

    /// Luma of the `[x0, x1) x [y0, y1)` region of a decoded RGB image.
    pub fn from_rgb_region(img: &RgbImage, x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self, HashError> {
        let (w, h) = ((x1.saturating_sub(x0)) as usize, (y1.saturating_sub(y0)) as usize);
        Self::from_fn(w, h, |x, y| {
            let p = img.get_pixel(x0 + x as u32, y0 + y as u32).0;
            LUMA_WEIGHTS[0] * f64::from(p[0]) + LUMA_WEIGHTS[1] * f64::from(p[1]) + LUMA_WEIGHTS[2] * f64::from(p[2])
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn transposed(&self) -> Self {
        Self::from_fn(self.height, self.width, |x, y| self.get(y, x)).expect("non-empty")
    }

    /// Replicate edge pixels until both sides are at least `min_side`.
    pub fn edge_padded(&self, min_side: usize) -> Self {
        if self.width >= min_side && self.height >= min_side {
            return self.clone();
        }
        let new_w = self.width.max(min_side);
        let new_h = self.height.max(min_side);
        let left = (new_w - self.width) / 2;
        let top = (new_h - self.height) / 2;
        Self::from_fn(new_w, new_h, |x, y| {
            let sx = x.saturating_sub(left).min(self.width - 1);
            let sy = y.saturating_sub(top).min(self.height - 1);
            self.get(sx, sy)
        })
        .expect("non-empty")
    }

    /// Bilinear resample onto a `side`x`side` grid.
    pub fn resampled(&self, side: usize) -> Self {
        let axis = |src_len: usize| -> Vec<(usize, usize, f64)> {
            let scale = src_len as f64 / side as f64;
            let max = (src_len - 1) as f64;
            (0..side)
                .map(|i| {
                    let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
                    let i0 = s.floor() as usize;
                    let i1 = (i0 + 1).min(src_len - 1);
                    (i0, i1, s - i0 as f64)
                })
                .collect()
        };
        let xs = axis(self.width);
        let ys = axis(self.height);
        let mut pixels = Vec::with_capacity(side * side);
        for &(y0, y1, ty) in &ys {
            for &(x0, x1, tx) in &xs {
                let top = self.get(x0, y0) * (1.0 - tx) + self.get(x1, y0) * tx;
                let bottom = self.get(x0, y1) * (1.0 - tx) + self.get(x1, y1) * tx;
                pixels.push(top * (1.0 - ty) + bottom * ty);
            }
        }
        Self {
            width: side,
            height: side,
            pixels,
        }
    }
}

/// `basis[k][n] = c(k) * cos(pi * (2n + 1) * k / 2N)` for the orthonormal DCT-II.
fn dct_basis() -> &'static [[f64; HASH_SIDE]; HASH_SIDE] {
    static BASIS: std::sync::OnceLock<[[f64; HASH_SIDE]; HASH_SIDE]> = std::sync::OnceLock::new();
    BASIS.get_or_init(|| {
        let n = HASH_SIDE as f64;
        let mut basis = [[0.0; HASH_SIDE]; HASH_SIDE];
        for (k, row) in basis.iter_mut().enumerate() {
            let c = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for (i, v) in row.iter_mut().enumerate() {
                *v = c * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * n)).cos();
            }
        }
        basis
    })
}

/// Low-frequency DCT coefficients of a 32x32 image, only the first `BLOCK + 1`
/// rows and columns, computed separably.
fn low_frequency_dct(img: &GrayCrop) -> [[f64; BLOCK + 1]; BLOCK + 1] {
    debug_assert_eq!((img.width, img.height), (HASH_SIDE, HASH_SIDE));
    let basis = dct_basis();
    // Row pass: rows[y][u] = sum_x f(x, y) basis[u][x]
    let mut rows = [[0.0; BLOCK + 1]; HASH_SIDE];
    for (y, out) in rows.iter_mut().enumerate() {
        let line = &img.pixels[y * HASH_SIDE..(y + 1) * HASH_SIDE];
        for (u, o) in out.iter_mut().enumerate() {
            *o = line.iter().zip(&basis[u]).map(|(a, b)| a * b).sum();
        }
    }
    let mut coeffs = [[0.0; BLOCK + 1]; BLOCK + 1];
    for (v, out) in coeffs.iter_mut().enumerate() {
        for (u, o) in out.iter_mut().enumerate() {
            *o = (0..HASH_SIDE).map(|y| rows[y][u] * basis[v][y]).sum();
        }
    }
    coeffs
}

/// The 64 hashed coefficients in bit order, indexed `[row][col]` = `[v][u]`.
pub fn hashed_coefficient_positions() -> [(usize, usize); 64] {
    let mut out = [(0, 0); 64];
    let mut i = 0;
    for r in 0..BLOCK {
        for c in 0..BLOCK {
            if (r, c) != (0, 0) {
                out[i] = (r, c);
                i += 1;
            }
        }
    }
    out[63] = (0, BLOCK);
    out
}

/// Threshold 64 coefficients against their median and pack them MSB first.
pub fn pack_bits(values: &[f64; 64]) -> PerceptualHash {
    let snapped: Vec<f64> = values
        .iter()
        .map(|&v| if v.abs() < SNAP_EPSILON { 0.0 } else { v })
        .collect();
    let mut sorted = snapped.clone();
    sorted.sort_by(f64::total_cmp);
    let median = (sorted[31] + sorted[32]) / 2.0;
    let bits = snapped.iter().fold(0u64, |acc, &v| (acc << 1) | u64::from(v > median));
    PerceptualHash(bits)
}

pub fn phash(crop: &GrayCrop, min_crop_px: usize) -> PerceptualHash {
    let small = crop.edge_padded(min_crop_px).resampled(HASH_SIDE);
    let coeffs = low_frequency_dct(&small);
    let mut values = [0.0; 64];
    for (v, (r, c)) in values.iter_mut().zip(hashed_coefficient_positions()) {
        *v = coeffs[r][c];
    }
    pack_bits(&values)
}
