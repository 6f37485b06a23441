//! Seedable degradation operators and the mapping from raw degradation
//! levels (noise σ, JPEG quality, SR scale) to the conditioning scalar.

mod jpeg;
mod resample;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::tensor::Tensor;

pub use jpeg::{jpeg_degrade, quant_tables};
pub use resample::{cubic, resize_bicubic};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Noise,
    Jpeg,
    Sr,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Noise => "noise",
            Task::Jpeg => "jpeg",
            Task::Sr => "sr",
        }
    }

    /// Levels evaluated by default for each task.
    pub fn default_levels(self) -> Vec<f64> {
        match self {
            Task::Noise => vec![5.0, 25.0, 45.0, 65.0, 90.0],
            Task::Jpeg => vec![10.0, 30.0, 50.0, 70.0, 80.0],
            Task::Sr => vec![2.0, 3.0, 4.0, 5.0, 6.0],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "noise" | "denoise" => Ok(Task::Noise),
            "jpeg" | "dejpeg" => Ok(Task::Jpeg),
            "sr" | "super-resolution" => Ok(Task::Sr),
            other => Err(format!("unknown task '{other}' (expected noise, jpeg or sr)")),
        }
    }
}

/// The span of raw levels a model was trained on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRange {
    pub min: f64,
    pub max: f64,
}

/// A conditioning scalar together with whether it lies outside `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conditioning {
    pub c: f64,
    pub extrapolated: bool,
}

impl LevelRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        let r = Self { min, max };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min >= self.max {
            return Err(contract(format!(
                "degenerate level range ({}, {})",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    /// `c = (level − min) / (max − min)`. Levels outside the range are
    /// allowed and flagged.
    pub fn normalize(&self, level: f64) -> Result<Conditioning> {
        self.validate()?;
        if !level.is_finite() {
            return Err(contract(format!("degradation level must be finite, got {level}")));
        }
        let c = (level - self.min) / self.span();
        Ok(Conditioning { c, extrapolated: !(0.0..=1.0).contains(&c) })
    }

    pub fn denormalize(&self, c: f64) -> f64 {
        c * self.span() + self.min
    }
}

/// A task, a raw level and the trained range the level is interpreted in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub task: Task,
    pub level: f64,
    pub range: LevelRange,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl DegradationSpec {
    pub fn normalize_level(&self) -> Result<Conditioning> {
        self.range.normalize(self.level)
    }

    /// Degrades `image` into the network input for this task (for SR, the
    /// bicubically re-upsampled image).
    pub fn apply(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        degrade(image, self.task, self.level, self.seed.unwrap_or(0))
    }
}

pub fn degrade(image: &Tensor<f32>, task: Task, level: f64, seed: u64) -> Result<Tensor<f32>> {
    match task {
        Task::Noise => add_gaussian_noise(image, level, seed),
        Task::Jpeg => {
            let q = level.round();
            if !(1.0..=100.0).contains(&q) {
                return Err(contract(format!("jpeg quality must be in [1, 100], got {level}")));
            }
            jpeg_degrade(image, q as u32)
        }
        Task::Sr => Ok(sr_degrade(image, level)?.1),
    }
}

/// Mixes `parts` into `base` with splitmix64 so every (step, sample, level)
/// gets its own independent stream.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// Adds i.i.d. Gaussian noise with standard deviation `sigma/255` and clamps
/// to `[0, 1]`.
pub fn add_gaussian_noise(image: &Tensor<f32>, sigma: f64, seed: u64) -> Result<Tensor<f32>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(contract(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let std = sigma / 255.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    for v in out.data_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v = ((*v as f64 + std * n).clamp(0.0, 1.0)) as f32;
    }
    Ok(out)
}

/// Bicubic downscale by `1/scale`, then bicubic upscale back to the input
/// size. Returns `(low_res, pre_upsampled)`.
pub fn sr_degrade(image: &Tensor<f32>, scale: f64) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if !(scale >= 1.0 && scale.is_finite()) {
        return Err(contract(format!("super-resolution scale must be ≥ 1, got {scale}")));
    }
    let (_, h, w) = image.chw()?;
    let lh = ((h as f64 / scale).round() as usize).max(1);
    let lw = ((w as f64 / scale).round() as usize).max(1);
    let low = resize_bicubic(image, lh, lw)?;
    let up = resize_bicubic(&low, h, w)?;
    Ok((low, up))
}
