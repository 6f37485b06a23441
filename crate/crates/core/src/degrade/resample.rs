//! Separable bicubic resampling with the Catmull-Rom kernel (a = −0.5).
//!
//! Pixel centers are aligned (`src = (dst + ½)·scale − ½`). When shrinking,
//! the kernel is widened by the scale factor so it also acts as an
//! anti-aliasing filter. Taps outside the image replicate the edge pixel and
//! every row of weights is normalized to sum to one.

use crate::error::{contract, Result};
use crate::tensor::Tensor;

pub(crate) const A: f64 = -0.5;

pub fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * A
    } else {
        0.0
    }
}

/// For each output index, the (input index, weight) taps.
fn taps(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = in_len as f64 / out_len as f64;
    let support = scale.max(1.0);
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale - 0.5;
            let lo = (center - 2.0 * support).floor() as isize;
            let hi = (center + 2.0 * support).ceil() as isize;
            let mut row: Vec<(usize, f64)> = Vec::new();
            for j in lo..=hi {
                let wgt = cubic((j as f64 - center) / support);
                if wgt == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, in_len as isize - 1) as usize;
                match row.iter_mut().find(|(k, _)| *k == idx) {
                    Some((_, w)) => *w += wgt,
                    None => row.push((idx, wgt)),
                }
            }
            let total: f64 = row.iter().map(|(_, w)| w).sum();
            row.iter_mut().for_each(|(_, w)| *w /= total);
            row
        })
        .collect()
}

pub fn resize_bicubic(image: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = image.chw()?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(contract(format!("cannot resize {h}×{w} to {out_h}×{out_w}")));
    }
    let xt = taps(w, out_w);
    let yt = taps(h, out_h);
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let mut horiz = vec![0.0f64; h * out_w];
    for ch in 0..c {
        let p = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let row = &p[y * w..(y + 1) * w];
            for (x, t) in xt.iter().enumerate() {
                horiz[y * out_w + x] = t.iter().map(|&(j, wt)| row[j] as f64 * wt).sum();
            }
        }
        for t in &yt {
            for x in 0..out_w {
                let v: f64 = t.iter().map(|&(j, wt)| horiz[j * out_w + x] * wt).sum();
                out.push(v as f32);
            }
        }
    }
    Tensor::new([c, out_h, out_w], out)
}
