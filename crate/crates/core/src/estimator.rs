//! Blind degradation-level estimator: five convolutions followed by three
//! fully connected layers regressing the raw level of a 64×64 crop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{ImageRecord, PatchSource};
use crate::degrade::{degrade, derive_seed, LevelRange, Task};
use crate::error::{contract, Error, Result};
use crate::net::he_uniform;
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

pub const INPUT_SIZE: usize = 64;

/// (in, out, stride) of each convolution; the last three halve resolution.
const CONVS: [(usize, usize, usize); 5] = [(3, 8, 1), (8, 8, 1), (8, 16, 2), (16, 16, 2), (16, 16, 2)];
const FC_HIDDEN: [usize; 2] = [32, 16];

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorNet {
    /// (kernel, bias) per convolution.
    pub convs: Vec<(Tensor<f32>, Tensor<f32>)>,
    /// (weight out×in, bias) per fully connected layer.
    pub fcs: Vec<(Tensor<f32>, Tensor<f32>)>,
}

struct EstimatorVars {
    convs: Vec<(Var, Var)>,
    fcs: Vec<(Var, Var)>,
}

impl EstimatorVars {
    fn params(&self) -> Vec<Var> {
        self.convs.iter().chain(&self.fcs).flat_map(|&(a, b)| [a, b]).collect()
    }
}

impl EstimatorNet {
    /// `initial_level` seeds the output bias so training starts at a sensible
    /// mean prediction.
    pub fn init(seed: u64, initial_level: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = CONVS
            .iter()
            .map(|&(cin, cout, _)| (he_uniform([cout, cin, 3, 3], &mut rng), Tensor::zeros([cout])))
            .collect();
        let flat = CONVS[4].1 * (INPUT_SIZE / 8) * (INPUT_SIZE / 8);
        let dims = [flat, FC_HIDDEN[0], FC_HIDDEN[1], 1];
        let mut fcs: Vec<(Tensor<f32>, Tensor<f32>)> = dims
            .windows(2)
            .map(|d| {
                let bound = (6.0 / d[0] as f32).sqrt();
                let w = (0..d[0] * d[1]).map(|_| rng.gen_range(-bound..bound)).collect();
                (Tensor::new([d[1], d[0]], w).expect("sized"), Tensor::zeros([d[1]]))
            })
            .collect();
        fcs[2].1 = Tensor::full([1], initial_level as f32);
        Self { convs, fcs }
    }

    /// Canonical (name, tensor) list, used for checkpoints.
    pub fn named(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out = Vec::new();
        for (i, (k, b)) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), k));
            out.push((format!("conv{i}.bias"), b));
        }
        for (i, (w, b)) in self.fcs.iter().enumerate() {
            out.push((format!("fc{i}.weight"), w));
            out.push((format!("fc{i}.bias"), b));
        }
        out
    }

    /// Rebuilds from tensors in [`EstimatorNet::named`] order.
    pub fn from_tensors(mut tensors: Vec<Tensor<f32>>) -> Result<Self> {
        let expected = 2 * (CONVS.len() + 3);
        if tensors.len() != expected {
            return Err(contract(format!("estimator needs {expected} tensors, got {}", tensors.len())));
        }
        let template = Self::init(0, 0.0);
        let fcs_t = tensors.split_off(2 * CONVS.len());
        let pairs = |v: Vec<Tensor<f32>>| {
            let mut it = v.into_iter();
            std::iter::from_fn(move || Some((it.next()?, it.next()?))).collect::<Vec<_>>()
        };
        let net = Self { convs: pairs(tensors), fcs: pairs(fcs_t) };
        for ((name, a), (_, b)) in net.named().iter().zip(template.named()) {
            if a.shape() != b.shape() {
                return Err(contract(format!(
                    "estimator tensor {name} has shape {:?}, expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(net)
    }

    fn slices_mut(&mut self) -> Vec<&mut [f32]> {
        self.convs
            .iter_mut()
            .chain(self.fcs.iter_mut())
            .flat_map(|(a, b)| [a.data_mut(), b.data_mut()])
            .collect()
    }

    fn sizes(&self) -> Vec<usize> {
        self.named().iter().map(|(_, t)| t.numel()).collect()
    }

    fn bind<T: Scalar>(&self, tape: &mut Tape<T>, trainable: bool) -> EstimatorVars {
        let mut leaf = |t: &Tensor<f32>| tape.leaf(t.cast(), trainable);
        EstimatorVars {
            convs: self.convs.iter().map(|(k, b)| (leaf(k), leaf(b))).collect(),
            fcs: self.fcs.iter().map(|(w, b)| (leaf(w), leaf(b))).collect(),
        }
    }

    fn forward<T: Scalar>(tape: &mut Tape<T>, vars: &EstimatorVars, input: Var) -> Result<Var> {
        let mut x = input;
        for (&(k, b), &(_, _, stride)) in vars.convs.iter().zip(&CONVS) {
            let y = tape.conv2d(x, k, Some(b), stride, 1)?;
            x = tape.relu(y);
        }
        let last = vars.fcs.len() - 1;
        for (i, &(w, b)) in vars.fcs.iter().enumerate() {
            x = tape.linear(x, w, Some(b))?;
            if i < last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    /// Raw-unit level estimate. Larger images are center-cropped to 64×64.
    pub fn estimate_level(&self, image: &Tensor<f32>) -> Result<f64> {
        let crop = standardize(image)?;
        let mut tape = Tape::<f32>::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(crop);
        let y = Self::forward(&mut tape, &vars, x)?;
        Ok(tape.scalar(y) as f64)
    }
}

fn standardize(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (c, h, w) = image.chw()?;
    if c != 3 || h < INPUT_SIZE || w < INPUT_SIZE {
        return Err(contract(format!(
            "estimator needs a 3×{INPUT_SIZE}×{INPUT_SIZE} or larger image, got {:?}",
            image.shape()
        )));
    }
    image.center_crop(INPUT_SIZE, INPUT_SIZE)
}

/// `100 · (1 − mean|estimate − truth| / (max − min))`.
pub fn accuracy_from_estimates(pairs: &[(f64, f64)], range: LevelRange) -> Result<f64> {
    range.validate()?;
    if pairs.is_empty() {
        return Err(contract("estimator accuracy needs a non-empty evaluation set"));
    }
    let mae = pairs.iter().map(|(e, t)| (e - t).abs()).sum::<f64>() / pairs.len() as f64;
    Ok(100.0 * (1.0 - mae / range.span()))
}

pub fn estimator_accuracy(net: &EstimatorNet, eval_set: &[(Tensor<f32>, f64)], range: LevelRange) -> Result<f64> {
    range.validate()?;
    let pairs = eval_set
        .iter()
        .map(|(img, truth)| Ok((net.estimate_level(img)?, *truth)))
        .collect::<Result<Vec<_>>>()?;
    accuracy_from_estimates(&pairs, range)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// Levels to train on; defaults to the restoration model's levels.
    #[serde(default)]
    pub levels: Option<Vec<f64>>,
}

fn default_steps() -> usize {
    600
}
fn default_batch() -> usize {
    6
}
fn default_lr() -> f64 {
    1e-3
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { steps: default_steps(), batch_size: default_batch(), learning_rate: default_lr(), seed: 0, levels: None }
    }
}

/// Trains an estimator with L1 regression on raw levels, drawing a random
/// 64×64 crop and a random trained level for every sample.
pub fn train_estimator(
    records: &[ImageRecord],
    task: Task,
    levels: &[f64],
    cfg: &EstimatorConfig,
) -> Result<EstimatorNet> {
    if levels.is_empty() {
        return Err(contract("estimator training needs at least one level"));
    }
    if cfg.batch_size == 0 {
        return Err(contract("estimator batch size must be positive"));
    }
    let mean_level = levels.iter().sum::<f64>() / levels.len() as f64;
    let mut net = EstimatorNet::init(cfg.seed, mean_level);
    let mut adam = Adam::new(AdamConfig::default(), &net.sizes());
    let mut patches = PatchSource::new(records, INPUT_SIZE, derive_seed(cfg.seed, &[1]), true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2]));

    for step in 0..cfg.steps {
        let clean = patches.sample_patches(cfg.batch_size)?;
        let mut grads: Vec<Vec<f64>> = net.sizes().iter().map(|&n| vec![0.0; n]).collect();
        for (i, patch) in clean.iter().enumerate() {
            let level = levels[rng.gen_range(0..levels.len())];
            let noisy = degrade(patch, task, level, derive_seed(cfg.seed, &[3, step as u64, i as u64]))?;
            let mut tape = Tape::<f32>::new();
            let vars = net.bind(&mut tape, true);
            let x = tape.constant(noisy);
            let y = EstimatorNet::forward(&mut tape, &vars, x)?;
            let target = tape.constant(Tensor::new([1], vec![level as f32])?);
            let loss = tape.l1_loss(y, target)?;
            if !tape.scalar(loss).is_finite() {
                return Err(Error::NonFiniteLoss { step, level });
            }
            tape.backward(loss)?;
            for (acc, v) in grads.iter_mut().zip(vars.params()) {
                let g = tape.grad(v).expect("trainable leaf");
                acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b as f64 / cfg.batch_size as f64);
            }
        }
        clip_global_norm(&mut grads, 1.0);
        adam.step(&mut net.slices_mut(), &grads, cfg.learning_rate)?;
    }
    Ok(net)
}
