//! Joint training of the hypernetwork and the shared weights over k
//! degradation levels. The total loss is the unweighted sum of the per-level
//! mean L1 losses.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{ImageRecord, PatchSource};
use crate::degrade::{degrade, derive_seed, LevelRange, Task};
use crate::error::{contract, Error, Result};
use crate::estimator::EstimatorConfig;
use crate::eval::{evaluate_level, Conditioner};
use crate::model::HyperRestoreModel;
use crate::net::ArchConfig;
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::tape::Tape;
use crate::tensor::Tensor;

// Seed stream tags.
const PATCH_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const VAL_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub levels: Vec<f64>,
    /// Defaults to the smallest and largest trained level.
    #[serde(default)]
    pub range: Option<LevelRange>,
    #[serde(default)]
    pub arch: ArchConfig,
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Halve the learning rate every this many steps; 0 keeps it constant.
    #[serde(default)]
    pub lr_halve_every: usize,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
    /// Parallel workers for the per-sample passes; 1 is the determinism reference.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Validate every this many steps (and after the last step); 0 disables.
    #[serde(default)]
    pub val_every: usize,
    /// Hold out every n-th corpus image for validation; 0 validates on the
    /// training images.
    #[serde(default)]
    pub val_split_every: usize,
    #[serde(default)]
    pub estimator: Option<EstimatorConfig>,
}

fn default_batch() -> usize {
    4
}
fn default_patch() -> usize {
    32
}
fn default_lr() -> f64 {
    1e-3
}
fn default_clip() -> f64 {
    1.0
}
fn default_workers() -> usize {
    1
}

impl TrainConfig {
    /// Desk-scale defaults for `task` at the given levels.
    pub fn new(task: Task, levels: Vec<f64>, steps: usize) -> Self {
        Self {
            task,
            levels,
            range: None,
            arch: ArchConfig::default(),
            steps,
            batch_size: default_batch(),
            patch_size: default_patch(),
            learning_rate: default_lr(),
            adam: AdamConfig::default(),
            lr_halve_every: 0,
            clip_norm: default_clip(),
            seed: 0,
            workers: default_workers(),
            val_every: 0,
            val_split_every: 0,
            estimator: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(crate::error::io_err(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Levels in ascending order. Configs may list them in any order.
    pub fn sorted_levels(&self) -> Vec<f64> {
        let mut l = self.levels.clone();
        l.sort_by(f64::total_cmp);
        l
    }

    pub fn level_range(&self) -> Result<LevelRange> {
        match self.range {
            Some(r) => {
                r.validate()?;
                Ok(r)
            }
            None => {
                let l = self.sorted_levels();
                LevelRange::new(l[0], l[l.len() - 1])
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.levels.len() < 2 {
            return bad(format!("need at least 2 training levels, got {}", self.levels.len()));
        }
        if self.levels.iter().any(|l| !l.is_finite()) {
            return bad("training levels must be finite".into());
        }
        if self.sorted_levels().windows(2).any(|w| w[0] == w[1]) {
            return bad("training levels must be distinct".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(8) {
            return bad(format!("patch_size must be a positive multiple of 8, got {}", self.patch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        self.arch.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.level_range().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        match self.lr_halve_every {
            0 => self.learning_rate,
            s => self.learning_rate * 0.5f64.powi((step / s) as i32),
        }
    }
}

/// The inputs of one level within a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelBatch {
    pub level: f64,
    pub c: f64,
    pub inputs: Vec<Tensor<f32>>,
}

/// The same clean patches degraded at every level.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub targets: Vec<Tensor<f32>>,
    pub levels: Vec<LevelBatch>,
}

impl Batch {
    /// Degrades `clean` at each level with an independent noise stream per
    /// (level, sample). `stream` distinguishes batches drawn with one seed.
    pub fn build(clean: Vec<Tensor<f32>>, task: Task, levels: &[f64], range: LevelRange, seed: u64, stream: u64) -> Result<Self> {
        let levels = levels
            .iter()
            .map(|&level| {
                let inputs = clean
                    .iter()
                    .enumerate()
                    .map(|(i, p)| degrade(p, task, level, derive_seed(seed, &[NOISE_STREAM, stream, level.to_bits(), i as u64])))
                    .collect::<Result<Vec<_>>>()?;
                Ok(LevelBatch { level, c: range.normalize(level)?.c, inputs })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { targets: clean, levels })
    }

    fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.targets.is_empty() {
            return Err(contract("batch needs at least one level and one sample"));
        }
        for l in &self.levels {
            if l.inputs.len() != self.targets.len() {
                return Err(contract(format!(
                    "level {} has {} inputs for {} targets",
                    l.level,
                    l.inputs.len(),
                    self.targets.len()
                )));
            }
        }
        Ok(())
    }
}

/// Loss and gradients of one batch, gradients in canonical parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub total_loss: f64,
    pub level_losses: Vec<f64>,
    pub grads: Vec<Vec<f64>>,
}

/// Loss, per-level losses and gradients for `batch`. Each (level, sample)
/// runs on its own tape; contributions are summed in level-then-sample
/// order, so the result does not depend on `pool`.
pub fn compute_gradients(model: &HyperRestoreModel, batch: &Batch, pool: Option<&rayon::ThreadPool>) -> Result<Gradients> {
    batch.validate()?;
    let n = batch.targets.len() as f64;
    let jobs: Vec<(usize, usize)> =
        (0..batch.levels.len()).flat_map(|l| (0..batch.targets.len()).map(move |i| (l, i))).collect();
    let run = |&(l, i): &(usize, usize)| -> Result<(f64, Vec<Vec<f32>>)> {
        let lb = &batch.levels[l];
        let mut tape = Tape::<f32>::new();
        let vars = model.bind(&mut tape, true);
        let x = tape.constant(lb.inputs[i].clone());
        let y = model.forward_on_tape(&mut tape, &vars, x, lb.c)?;
        let t = tape.constant(batch.targets[i].clone());
        let loss = tape.l1_loss(y, t)?;
        tape.backward(loss)?;
        let grads = vars.params().iter().map(|&v| tape.grad(v).expect("trainable").to_vec()).collect();
        Ok((tape.scalar(loss) as f64, grads))
    };

    let sizes: Vec<usize> = model.parameter_slices().iter().map(|s| s.len()).collect();
    let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
    let mut level_losses = vec![0.0; batch.levels.len()];
    let mut accumulate = |(l, _): (usize, usize), (loss, g): (f64, Vec<Vec<f32>>)| {
        level_losses[l] += loss / n;
        for (acc, gi) in grads.iter_mut().zip(g) {
            acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b as f64 / n);
        }
    };
    match pool {
        Some(pool) if pool.current_num_threads() > 1 => {
            let results: Vec<_> = pool.install(|| jobs.par_iter().map(run).collect::<Vec<_>>());
            for (job, r) in jobs.iter().zip(results) {
                accumulate(*job, r?);
            }
        }
        _ => {
            for job in &jobs {
                accumulate(*job, run(job)?);
            }
        }
    }
    Ok(Gradients { total_loss: level_losses.iter().sum(), level_losses, grads })
}

/// Model, optimizer moments, step counter and per-level loss history.
pub struct TrainState {
    pub model: HyperRestoreModel,
    pub optimizer: Adam,
    pub step: usize,
    /// One row per completed step, per-level losses in batch level order.
    pub loss_history: Vec<Vec<f64>>,
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl TrainState {
    pub fn new(model: HyperRestoreModel, adam: AdamConfig) -> Self {
        let sizes: Vec<usize> = model.parameter_slices().iter().map(|s| s.len()).collect();
        Self { optimizer: Adam::new(adam, &sizes), model, step: 0, loss_history: Vec::new(), pool: None }
    }

    /// Runs the per-sample passes on `workers` threads (1 = sequential).
    pub fn with_workers(mut self, workers: usize) -> Result<Self> {
        self.pool = if workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| contract(format!("cannot start {workers} workers: {e}")))?;
            Some(Arc::new(pool))
        } else {
            None
        };
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub total_loss: f64,
    pub level_losses: Vec<f64>,
    pub grad_norm: f64,
}

/// One Adam update from the summed loss of every level in `batch`.
pub fn train_step(state: &mut TrainState, batch: &Batch, lr: f64, clip_norm: f64) -> Result<StepReport> {
    let mut g = compute_gradients(&state.model, batch, state.pool.as_deref())?;
    for (lb, &loss) in batch.levels.iter().zip(&g.level_losses) {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: state.step, level: lb.level });
        }
    }
    let grad_norm = clip_global_norm(&mut g.grads, clip_norm);
    state.optimizer.step(&mut state.model.parameter_slices_mut(), &g.grads, lr)?;
    state.loss_history.push(g.level_losses.clone());
    let report = StepReport { step: state.step, total_loss: g.total_loss, level_losses: g.level_losses, grad_norm };
    state.step += 1;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelValue {
    pub level: f64,
    pub value: f64,
}

/// One line of training progress output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub level_loss: Vec<LevelValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_psnr: Option<Vec<LevelValue>>,
}

/// Provenance stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub levels: Vec<f64>,
    pub steps: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub final_loss: Option<f64>,
    #[serde(default)]
    pub val_psnr: Option<Vec<LevelValue>>,
}

/// Mean validation PSNR per level with a fixed degradation stream.
pub fn validation_psnr(model: &HyperRestoreModel, records: &[ImageRecord], levels: &[f64], seed: u64) -> Result<Vec<LevelValue>> {
    levels
        .iter()
        .map(|&level| {
            let r = evaluate_level(model, records, level, Conditioner::TrueLevel, derive_seed(seed, &[VAL_STREAM]))?;
            Ok(LevelValue { level, value: r.output.psnr_db })
        })
        .collect()
}

pub struct TrainOutcome {
    pub model: HyperRestoreModel,
    pub metadata: TrainMetadata,
}

/// Trains from scratch on random patches of `records`, reporting progress
/// through `on_progress`.
pub fn train(cfg: &TrainConfig, records: &[ImageRecord], mut on_progress: impl FnMut(&ProgressRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, val_set) = match cfg.val_split_every {
        0 => (records.to_vec(), records.to_vec()),
        n => crate::datasets::split(records, n),
    };
    if train_set.is_empty() {
        return Err(contract("training set is empty"));
    }
    let levels = cfg.sorted_levels();
    let range = cfg.level_range()?;
    let model = HyperRestoreModel::init(cfg.arch, cfg.task, range, cfg.seed)?;
    let mut state = TrainState::new(model, cfg.adam).with_workers(cfg.workers)?;
    let mut patches = PatchSource::new(&train_set, cfg.patch_size, derive_seed(cfg.seed, &[PATCH_STREAM]), true)?;

    let mut final_loss = None;
    let mut last_val = None;
    for step in 0..cfg.steps {
        let clean = patches.sample_patches(cfg.batch_size)?;
        let batch = Batch::build(clean, cfg.task, &levels, range, cfg.seed, step as u64)?;
        let lr = cfg.learning_rate_at(step);
        let report = train_step(&mut state, &batch, lr, cfg.clip_norm)?;
        final_loss = Some(report.total_loss);

        let done = step + 1;
        let validate = cfg.val_every > 0 && !val_set.is_empty() && (done % cfg.val_every == 0 || done == cfg.steps);
        let val_psnr = if validate { Some(validation_psnr(&state.model, &val_set, &levels, cfg.seed)?) } else { None };
        if val_psnr.is_some() {
            last_val = val_psnr.clone();
        }
        let level_loss =
            levels.iter().zip(&report.level_losses).map(|(&level, &value)| LevelValue { level, value }).collect();
        on_progress(&ProgressRecord { step: done, lr, loss: report.total_loss, level_loss, val_psnr });
    }

    let mut model = state.model;
    if let Some(ecfg) = &cfg.estimator {
        let est_levels = ecfg.levels.clone().unwrap_or_else(|| levels.clone());
        model.estimator = Some(crate::estimator::train_estimator(&train_set, cfg.task, &est_levels, ecfg)?);
    }
    let metadata = TrainMetadata {
        levels,
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        patch_size: cfg.patch_size,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        final_loss,
        val_psnr: last_val,
    };
    Ok(TrainOutcome { model, metadata })
}
