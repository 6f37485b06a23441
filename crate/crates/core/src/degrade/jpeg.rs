//! Baseline-JPEG quantization loss without entropy coding.
//!
//! Samples are converted to full-range BT.601 YCbCr with no chroma
//! subsampling (4:4:4), split into 8×8 blocks, transformed by an orthonormal
//! DCT-II, quantized with the standard tables scaled for the requested
//! quality, and decoded back to 8-bit RGB.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{contract, Result};
use crate::tensor::Tensor;

#[rustfmt::skip]
const LUMA_BASE: [u32; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
const CHROMA_BASE: [u32; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

fn check_quality(quality: u32) -> Result<()> {
    if !(1..=100).contains(&quality) {
        return Err(contract(format!("jpeg quality must be in [1, 100], got {quality}")));
    }
    Ok(())
}

/// libjpeg quality scaling (integer arithmetic), entries clamped to [1, 255].
fn scaled_table(base: &[u32; 64], quality: u32) -> [f64; 64] {
    let s = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    let mut out = [0.0; 64];
    for (o, &q) in out.iter_mut().zip(base) {
        *o = ((q * s + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

/// Luminance and chrominance quantization tables for `quality`.
pub fn quant_tables(quality: u32) -> Result<([f64; 64], [f64; 64])> {
    check_quality(quality)?;
    Ok((scaled_table(&LUMA_BASE, quality), scaled_table(&CHROMA_BASE, quality)))
}

/// Orthonormal DCT-II basis: `m[u][x] = ½·C(u)·cos((2x+1)uπ/16)`.
fn dct_matrix() -> &'static [[f64; 8]; 8] {
    static M: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = 0.5 * cu * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        m
    })
}

fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let m = dct_matrix();
    let mut tmp = [0.0; 64];
    // rows: tmp[y][u] = Σx m[u][x] f[y][x]
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| m[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| m[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn idct(coef: &[f64; 64]) -> [f64; 64] {
    let m = dct_matrix();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|v| m[v][y] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|u| m[u][x] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

/// Compresses and decompresses an RGB image at `quality` (1–100).
/// Height and width must be multiples of 8.
pub fn jpeg_degrade(image: &Tensor<f32>, quality: u32) -> Result<Tensor<f32>> {
    check_quality(quality)?;
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(contract(format!("jpeg_degrade needs an RGB image, got {c} channels")));
    }
    if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
        return Err(contract(format!("jpeg_degrade needs sides that are multiples of 8, got {h}×{w}")));
    }
    let (luma_q, chroma_q) = quant_tables(quality)?;
    let plane = h * w;
    let src = image.data();

    let mut ycc = vec![0.0f64; 3 * plane];
    for i in 0..plane {
        let px = |ch: usize| (src[ch * plane + i].clamp(0.0, 1.0) as f64 * 255.0).round();
        let (r, g, b) = (px(0), px(1), px(2));
        ycc[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        ycc[plane + i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
        ycc[2 * plane + i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
    }

    for ch in 0..3 {
        let q = if ch == 0 { &luma_q } else { &chroma_q };
        let p = &mut ycc[ch * plane..(ch + 1) * plane];
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                let mut block = [0.0; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        block[y * 8 + x] = p[(by + y) * w + bx + x] - 128.0;
                    }
                }
                let mut coef = fdct(&block);
                for (cv, &qv) in coef.iter_mut().zip(q) {
                    *cv = (*cv / qv).round() * qv;
                }
                let rec = idct(&coef);
                for y in 0..8 {
                    for x in 0..8 {
                        p[(by + y) * w + bx + x] = rec[y * 8 + x] + 128.0;
                    }
                }
            }
        }
    }

    let mut out = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        let (y, cb, cr) = (ycc[i], ycc[plane + i] - 128.0, ycc[2 * plane + i] - 128.0);
        let rgb = [y + 1.402 * cr, y - 0.344_136 * cb - 0.714_136 * cr, y + 1.772 * cb];
        for (ch, v) in rgb.into_iter().enumerate() {
            out[ch * plane + i] = (v.round().clamp(0.0, 255.0) / 255.0) as f32;
        }
    }
    Tensor::new([3, h, w], out)
}
