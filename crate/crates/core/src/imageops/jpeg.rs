//! Baseline JPEG distortion: blockwise DCT quantisation without the
//! (lossless) entropy coding stage.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::{to_u8, GrayImage, JPEG_QUALITY_RANGE};
use crate::error::{Error, Result};

/// Standard luminance quantisation table, row-major.
pub const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Percentage applied to the base table for a quality in 1..=100.
pub fn ijg_scale(quality: u8) -> u32 {
    let q = u32::from(quality.clamp(1, 100));
    if q < 50 {
        5000 / q
    } else {
        200 - 2 * q
    }
}

pub fn quant_table(quality: u8) -> [u16; 64] {
    let scale = f64::from(ijg_scale(quality));
    LUMA_TABLE.map(|e| (f64::from(e) * scale / 100.0).round().clamp(1.0, 255.0) as u16)
}

/// Orthonormal DCT-II basis, `basis[u][x]`.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = a * (((2 * x + 1) * u) as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

/// `C · block · Cᵀ` (forward) or `Cᵀ · block · C` (inverse).
fn transform(block: &[f64; 64], inverse: bool) -> [f64; 64] {
    let c = basis();
    let at = |i: usize, j: usize| if inverse { c[j][i] } else { c[i][j] };
    let mut tmp = [0.0; 64];
    for i in 0..8 {
        for j in 0..8 {
            tmp[i * 8 + j] = (0..8).map(|k| at(i, k) * block[k * 8 + j]).sum();
        }
    }
    let mut out = [0.0; 64];
    for i in 0..8 {
        for j in 0..8 {
            out[i * 8 + j] = (0..8).map(|k| tmp[i * 8 + k] * at(j, k)).sum();
        }
    }
    out
}

/// Compresses and decompresses `img` at the given quality. Partial edge
/// blocks are filled by replicating the last row/column.
pub fn jpeg_roundtrip(img: &GrayImage, quality: u8) -> Result<GrayImage> {
    let (lo, hi) = JPEG_QUALITY_RANGE;
    if !(lo..=hi).contains(&quality) {
        return Err(Error::invalid("jpeg_roundtrip", format!("quality {quality} outside [{lo}, {hi}]")));
    }
    Ok(jpeg_roundtrip_with_table(img, &quant_table(quality)))
}

pub fn jpeg_roundtrip_with_table(img: &GrayImage, table: &[u16; 64]) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    let p = img.get((bx + x).min(w - 1), (by + y).min(h - 1));
                    block[y * 8 + x] = f64::from(p) - 128.0;
                }
            }
            let mut coef = transform(&block, false);
            for (c, &q) in coef.iter_mut().zip(table) {
                let q = f64::from(q);
                *c = (*c / q).round() * q;
            }
            let rec = transform(&coef, true);
            for y in 0..8.min(h - by) {
                for x in 0..8.min(w - bx) {
                    out.set(bx + x, by + y, to_u8(rec[y * 8 + x] + 128.0));
                }
            }
        }
    }
    out
}
