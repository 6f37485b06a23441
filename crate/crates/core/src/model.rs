//! All learnable state of an adaptive restoration model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::degrade::{LevelRange, Task};
use crate::error::{contract, Result};
use crate::estimator::EstimatorNet;
use crate::hypernet::{generate_kernel_var, HyperNetwork};
use crate::net::{self, count_total_parameters, ArchConfig, ParamBreakdown, SharedVars, SharedWeights};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct HyperRestoreModel {
    pub arch: ArchConfig,
    pub task: Task,
    pub range: LevelRange,
    pub hypernet: HyperNetwork,
    pub shared: SharedWeights,
    pub estimator: Option<EstimatorNet>,
}

/// Tape handles for every restoration parameter, in canonical order.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub meta: Vec<(Var, Var)>,
    pub shared: SharedVars,
}

impl ModelVars {
    /// Meta blocks (`w` then `b` per slot) followed by the shared weights.
    pub fn params(&self) -> Vec<Var> {
        self.meta.iter().flat_map(|&(w, b)| [w, b]).chain(self.shared.all()).collect()
    }
}

impl HyperRestoreModel {
    pub fn init(arch: ArchConfig, task: Task, range: LevelRange, seed: u64) -> Result<Self> {
        arch.validate()?;
        range.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shared = SharedWeights::init(&arch, &mut rng);
        let hypernet = HyperNetwork::init(arch.num_generated_kernels(), arch.resblock_kernel_shape(), &mut rng);
        Ok(Self { arch, task, range, hypernet, shared, estimator: None })
    }

    /// Conditioning scalar for a raw level.
    pub fn conditioning(&self, level: f64) -> Result<f64> {
        Ok(self.range.normalize(level)?.c)
    }

    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, trainable: bool) -> ModelVars {
        let meta = self
            .hypernet
            .blocks()
            .iter()
            .map(|b| {
                let n = b.w().len();
                let w = tape.leaf(Tensor::new([n], b.w().to_vec()).expect("flat").cast(), trainable);
                let bb = tape.leaf(Tensor::new([n], b.b().to_vec()).expect("flat").cast(), trainable);
                (w, bb)
            })
            .collect();
        let shared = self.shared.bind(tape, trainable);
        ModelVars { meta, shared }
    }

    /// Generates the network for `c` on the tape and runs it on `input`.
    pub fn forward_on_tape<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        vars: &ModelVars,
        input: Var,
        c: f64,
    ) -> Result<Var> {
        let kernels = vars
            .meta
            .iter()
            .zip(self.hypernet.blocks())
            .map(|(&(w, b), block)| generate_kernel_var(tape, w, b, c, block.kernel_shape()))
            .collect::<Result<Vec<_>>>()?;
        net::forward(tape, input, &kernels, &vars.shared, &self.arch)
    }

    /// Restores `image` with the network generated at conditioning `c`;
    /// the output is clamped to `[0, 1]`.
    pub fn restore(&self, image: &Tensor<f32>, c: f64) -> Result<Tensor<f32>> {
        let kernels = self.hypernet.generate_network_weights(c)?;
        self.restore_with_kernels(image, &kernels)
    }

    /// Restores with kernels that were generated beforehand.
    pub fn restore_with_kernels(&self, image: &Tensor<f32>, kernels: &[Tensor<f32>]) -> Result<Tensor<f32>> {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(image.clone());
        let ks: Vec<Var> = kernels.iter().map(|k| tape.constant(k.clone())).collect();
        let shared = self.shared.bind(&mut tape, false);
        let y = net::forward(&mut tape, x, &ks, &shared, &self.arch)?;
        Ok(tape.value(y).clamp01())
    }

    pub fn restore_at_level(&self, image: &Tensor<f32>, level: f64) -> Result<Tensor<f32>> {
        self.restore(image, self.conditioning(level)?)
    }

    /// Blind restoration: the level comes from the attached estimator.
    pub fn estimate_level(&self, image: &Tensor<f32>) -> Result<f64> {
        let est = self
            .estimator
            .as_ref()
            .ok_or_else(|| contract("model has no level estimator"))?;
        est.estimate_level(image)
    }

    pub fn parameter_breakdown(&self) -> ParamBreakdown {
        count_total_parameters(&self.shared, &self.hypernet)
    }

    /// Restoration parameters in canonical order (see [`ModelVars::params`]).
    pub fn parameter_slices(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for b in self.hypernet.blocks() {
            out.push(b.w());
            out.push(b.b());
        }
        out.extend(self.shared.named().into_iter().map(|(_, t)| t.data()));
        out
    }

    pub fn parameter_slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for b in self.hypernet.blocks_mut() {
            let (w, bb) = b.params_mut();
            out.push(w);
            out.push(bb);
        }
        out.extend(self.shared.named_mut().into_iter().map(|(_, t)| t.data_mut()));
        out
    }

    /// SHA-256 over the restoration parameters' bit patterns.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for s in self.parameter_slices() {
            for v in s {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
