//! Evaluation harness: per-level PSNR/SSIM over a corpus, conditioning
//! sweeps and benchmark reports.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::ImageRecord;
use crate::degrade::{degrade, derive_seed, Task};
use crate::error::{contract, Result};
use crate::metrics::{finite_psnr, psnr, ImageScore, QualityReport};
use crate::model::HyperRestoreModel;
use crate::tensor::Tensor;

/// Inclusive `min:max:step` grid of conditioning values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Grid {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && step.is_finite()) {
            return Err(contract("grid bounds and step must be finite"));
        }
        if max < min {
            return Err(contract(format!("empty grid: max {max} < min {min}")));
        }
        if step <= 0.0 && max > min {
            return Err(contract(format!("grid step must be positive, got {step}")));
        }
        Ok(Self { min, max, step })
    }

    pub fn points(&self) -> Vec<f64> {
        if self.max == self.min {
            return vec![self.min];
        }
        // Tolerate the last point landing a hair past max through rounding.
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.min + i as f64 * self.step).collect()
    }
}

impl FromStr for Grid {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(contract(format!("grid must look like min:max:step, got '{s}'")));
        };
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| contract(format!("bad grid number '{t}'")));
        Grid::new(num(a)?, num(b)?, num(c)?)
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.min, self.max, self.step)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub c: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub best: SweepPoint,
}

/// Restores `degraded` at every grid value of `c` and scores each output
/// against `reference`. Ties go to the earliest grid point.
pub fn sweep(model: &HyperRestoreModel, degraded: &Tensor<f32>, reference: &Tensor<f32>, grid: &Grid) -> Result<SweepResult> {
    sweep_many(model, &[(degraded.clone(), reference.clone())], grid)
}

/// Like [`sweep`], with PSNR averaged over several (degraded, reference) pairs.
pub fn sweep_many(model: &HyperRestoreModel, pairs: &[(Tensor<f32>, Tensor<f32>)], grid: &Grid) -> Result<SweepResult> {
    if pairs.is_empty() {
        return Err(contract("sweep needs at least one image"));
    }
    let mut points = Vec::new();
    for c in grid.points() {
        let kernels = model.hypernet.generate_network_weights(c)?;
        let mut total = 0.0;
        for (deg, reference) in pairs {
            let out = model.restore_with_kernels(deg, &kernels)?;
            total += finite_psnr(psnr(reference, &out)?);
        }
        points.push(SweepPoint { c, psnr: total / pairs.len() as f64 });
    }
    let best = points
        .iter()
        .copied()
        .fold(None::<SweepPoint>, |acc, p| match acc {
            Some(a) if a.psnr >= p.psnr => Some(a),
            _ => Some(p),
        })
        .ok_or_else(|| contract("empty grid"))?;
    Ok(SweepResult { points, best })
}

/// Degraded copies of `records` at `level`, with a noise stream per image.
pub fn degrade_records(records: &[ImageRecord], task: Task, level: f64, seed: u64) -> Result<Vec<Tensor<f32>>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| degrade(&r.pixels, task, level, derive_seed(seed, &[level.to_bits(), i as u64])))
        .collect()
}

/// Scores of one level over a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: f64,
    pub c: f64,
    /// Degraded input against the clean image.
    pub input: QualityReport,
    /// Restored output against the clean image.
    pub output: QualityReport,
}

/// How restoration is conditioned when evaluating a level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Conditioner {
    /// Use the true level.
    TrueLevel,
    /// Use this fixed raw level whatever the degradation.
    Fixed(f64),
    /// Skip the network and score the degraded input.
    Bypass,
}

pub fn evaluate_level(
    model: &HyperRestoreModel,
    records: &[ImageRecord],
    level: f64,
    conditioner: Conditioner,
    seed: u64,
) -> Result<LevelReport> {
    let degraded = degrade_records(records, model.task, level, seed)?;
    let cond_level = match conditioner {
        Conditioner::Fixed(l) => l,
        _ => level,
    };
    let c = model.conditioning(cond_level)?;
    let kernels = model.hypernet.generate_network_weights(c)?;
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    for (r, d) in records.iter().zip(&degraded) {
        ins.push(QualityReport::score(&r.id, &r.pixels, d)?);
        let out = match conditioner {
            Conditioner::Bypass => d.clone(),
            _ => model.restore_with_kernels(d, &kernels)?,
        };
        outs.push(QualityReport::score(&r.id, &r.pixels, &out)?);
    }
    Ok(LevelReport { level, c, input: QualityReport::from_scores(ins)?, output: QualityReport::from_scores(outs)? })
}

/// One line of a benchmark report file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReportRecord {
    Image { level: f64, id: String, psnr: f64, ssim: f64, input_psnr: f64, input_ssim: f64 },
    Level { level: f64, c: f64, psnr: f64, ssim: f64, input_psnr: f64, input_ssim: f64 },
    Mean { psnr: f64, ssim: f64, input_psnr: f64, input_ssim: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub levels: Vec<LevelReport>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_input_psnr: f64,
    pub mean_input_ssim: f64,
}

impl BenchmarkReport {
    pub fn records(&self) -> Vec<ReportRecord> {
        let mut out = Vec::new();
        for l in &self.levels {
            for (o, i) in l.output.per_image.iter().zip(&l.input.per_image) {
                out.push(image_record(l.level, o, i));
            }
        }
        for l in &self.levels {
            out.push(ReportRecord::Level {
                level: l.level,
                c: l.c,
                psnr: l.output.psnr_db,
                ssim: l.output.ssim,
                input_psnr: l.input.psnr_db,
                input_ssim: l.input.ssim,
            });
        }
        out.push(ReportRecord::Mean {
            psnr: self.mean_psnr,
            ssim: self.mean_ssim,
            input_psnr: self.mean_input_psnr,
            input_ssim: self.mean_input_ssim,
        });
        out
    }

    /// Line-delimited JSON, one record per line.
    pub fn to_jsonl(&self) -> String {
        self.records()
            .iter()
            .map(|r| serde_json::to_string(r).expect("report records serialize") + "\n")
            .collect()
    }

    /// Plain-text table with one column per level and a Mean column.
    pub fn table(&self) -> String {
        let mut s = String::from("            ");
        for l in &self.levels {
            s += &format!("{:>14}", format!("level {}", l.level));
        }
        s += &format!("{:>14}\n", "Mean");
        let row = |name: &str, f: &dyn Fn(&LevelReport) -> f64, mean: f64| {
            let mut r = format!("{name:<12}");
            for l in &self.levels {
                r += &format!("{:>14.4}", f(l));
            }
            r + &format!("{mean:>14.4}\n")
        };
        s += &row("input PSNR", &|l| l.input.psnr_db, self.mean_input_psnr);
        s += &row("input SSIM", &|l| l.input.ssim, self.mean_input_ssim);
        s += &row("PSNR", &|l| l.output.psnr_db, self.mean_psnr);
        s += &row("SSIM", &|l| l.output.ssim, self.mean_ssim);
        s
    }
}

fn image_record(level: f64, o: &ImageScore, i: &ImageScore) -> ReportRecord {
    ReportRecord::Image { level, id: o.id.clone(), psnr: o.psnr, ssim: o.ssim, input_psnr: i.psnr, input_ssim: i.ssim }
}

pub fn benchmark(
    model: &HyperRestoreModel,
    records: &[ImageRecord],
    levels: &[f64],
    bypass: bool,
    seed: u64,
) -> Result<BenchmarkReport> {
    if records.is_empty() {
        return Err(contract("benchmark corpus is empty"));
    }
    if levels.is_empty() {
        return Err(contract("benchmark needs at least one level"));
    }
    let conditioner = if bypass { Conditioner::Bypass } else { Conditioner::TrueLevel };
    let reports = levels
        .iter()
        .map(|&l| evaluate_level(model, records, l, conditioner, seed))
        .collect::<Result<Vec<_>>>()?;
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&LevelReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(BenchmarkReport {
        mean_psnr: mean(&|l| l.output.psnr_db),
        mean_ssim: mean(&|l| l.output.ssim),
        mean_input_psnr: mean(&|l| l.input.psnr_db),
        mean_input_ssim: mean(&|l| l.input.ssim),
        levels: reports,
    })
}
