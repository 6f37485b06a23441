//! Full-reference quality metrics on RGB images in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::tensor::{ensure_same_shape, Tensor};

/// Stand-in for +∞ dB in serialized reports.
pub const PSNR_INFINITY_SENTINEL: f64 = 1e9;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

pub fn mse(reference: &Tensor<f32>, test: &Tensor<f32>) -> Result<f64> {
    ensure_same_shape("mse", reference.shape(), test.shape())?;
    let n = reference.numel();
    if n == 0 {
        return Err(contract("mse of empty images"));
    }
    let s: f64 = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(s / n as f64)
}

/// `10·log10(1/MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(reference: &Tensor<f32>, test: &Tensor<f32>) -> Result<f64> {
    let m = mse(reference, test)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// Maps +∞ to [`PSNR_INFINITY_SENTINEL`] for serialization.
pub fn finite_psnr(db: f64) -> f64 {
    if db.is_infinite() && db > 0.0 {
        PSNR_INFINITY_SENTINEL
    } else {
        db
    }
}

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" filtering: output is (h−10)×(w−10).
fn filter_valid(p: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &p[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = win.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win.iter().enumerate().map(|(k, a)| a * tmp[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM (11×11 Gaussian window, σ = 1.5, K1 = 0.01,
/// K2 = 0.03, dynamic range 1), averaged over valid window positions and
/// then over channels.
pub fn ssim(reference: &Tensor<f32>, test: &Tensor<f32>) -> Result<f64> {
    ensure_same_shape("ssim", reference.shape(), test.shape())?;
    let (c, h, w) = reference.chw()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(contract(format!(
            "ssim needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let win = gaussian_window();
    let (c1, c2) = ((K1 * 1.0).powi(2), (K2 * 1.0).powi(2));
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = reference.data()[ch * plane..(ch + 1) * plane].iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = test.data()[ch * plane..(ch + 1) * plane].iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &win));
        let n = mx.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / n as f64;
    }
    Ok(total / c as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Mean PSNR/SSIM with the per-image scores they were averaged from.
/// PSNR values are stored with +∞ already mapped to the sentinel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub per_image: Vec<ImageScore>,
}

impl QualityReport {
    pub fn from_scores(per_image: Vec<ImageScore>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(contract("quality report needs at least one image"));
        }
        let n = per_image.len() as f64;
        let psnr_db = per_image.iter().map(|s| s.psnr).sum::<f64>() / n;
        let ssim = per_image.iter().map(|s| s.ssim).sum::<f64>() / n;
        Ok(Self { psnr_db, ssim, per_image })
    }

    pub fn score(id: impl Into<String>, reference: &Tensor<f32>, test: &Tensor<f32>) -> Result<ImageScore> {
        Ok(ImageScore { id: id.into(), psnr: finite_psnr(psnr(reference, test)?), ssim: ssim(reference, test)? })
    }
}
