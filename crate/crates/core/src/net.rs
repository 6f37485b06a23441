//! The main restoration network: a shared stride-2 head, residual blocks
//! whose kernels come from the hypernetwork, a skip over the residual
//! blocks, and a shared pixelshuffle tail.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::hypernet::{HyperNetwork, KernelShape};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub channels: usize,
    pub num_resblocks: usize,
    #[serde(default = "default_kernel_size")]
    pub kernel_size: usize,
    #[serde(default = "default_upscale")]
    pub upscale_internal: usize,
}

fn default_kernel_size() -> usize {
    3
}

fn default_upscale() -> usize {
    2
}

impl ArchConfig {
    pub fn new(channels: usize, num_resblocks: usize) -> Self {
        Self { channels, num_resblocks, kernel_size: 3, upscale_internal: 2 }
    }

    /// Small model used for CPU experiments.
    pub fn desk() -> Self {
        Self::new(8, 4)
    }

    /// 64 channels, 16 residual blocks.
    pub fn full() -> Self {
        Self::new(64, 16)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_resblocks == 0 {
            return Err(contract("num_resblocks must be at least 1"));
        }
        if self.channels == 0 {
            return Err(contract("channels must be at least 1"));
        }
        if self.kernel_size != 3 {
            return Err(contract(format!("kernel_size must be 3, got {}", self.kernel_size)));
        }
        if self.upscale_internal != 2 {
            return Err(contract(format!(
                "upscale_internal must be 2 to undo the stride-2 head, got {}",
                self.upscale_internal
            )));
        }
        Ok(())
    }

    /// Two generated kernels per residual block.
    pub fn num_generated_kernels(&self) -> usize {
        2 * self.num_resblocks
    }

    pub fn resblock_kernel_shape(&self) -> KernelShape {
        KernelShape { cout: self.channels, cin: self.channels, k: self.kernel_size }
    }
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Head and tail parameters shared by every generated network.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedWeights {
    pub head_kernel: Tensor<f32>,
    pub head_bias: Tensor<f32>,
    pub expand_kernel: Tensor<f32>,
    pub expand_bias: Tensor<f32>,
    pub out_kernel: Tensor<f32>,
    pub out_bias: Tensor<f32>,
}

impl SharedWeights {
    pub fn init(cfg: &ArchConfig, rng: &mut impl Rng) -> Self {
        let (c, k, r2) = (cfg.channels, cfg.kernel_size, cfg.upscale_internal * cfg.upscale_internal);
        Self {
            head_kernel: fan_in_uniform([c, 3, k, k], rng),
            head_bias: Tensor::zeros([c]),
            expand_kernel: fan_in_uniform([c * r2, c, k, k], rng),
            expand_bias: Tensor::zeros([c * r2]),
            out_kernel: fan_in_uniform([3, c, k, k], rng),
            out_bias: Tensor::zeros([3]),
        }
    }

    /// Canonical (name suffix, tensor) order used by the checkpoint and optimizer.
    pub fn named(&self) -> [(&'static str, &Tensor<f32>); 6] {
        [
            ("head.weight", &self.head_kernel),
            ("head.bias", &self.head_bias),
            ("tail_expand.weight", &self.expand_kernel),
            ("tail_expand.bias", &self.expand_bias),
            ("tail_out.weight", &self.out_kernel),
            ("tail_out.bias", &self.out_bias),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor<f32>); 6] {
        [
            ("head.weight", &mut self.head_kernel),
            ("head.bias", &mut self.head_bias),
            ("tail_expand.weight", &mut self.expand_kernel),
            ("tail_expand.bias", &mut self.expand_bias),
            ("tail_out.weight", &mut self.out_kernel),
            ("tail_out.bias", &mut self.out_bias),
        ]
    }

    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, trainable: bool) -> SharedVars {
        let mut leaf = |t: &Tensor<f32>| tape.leaf(t.cast(), trainable);
        SharedVars {
            head_kernel: leaf(&self.head_kernel),
            head_bias: leaf(&self.head_bias),
            expand_kernel: leaf(&self.expand_kernel),
            expand_bias: leaf(&self.expand_bias),
            out_kernel: leaf(&self.out_kernel),
            out_bias: leaf(&self.out_bias),
        }
    }
}

/// `U(±1/√fan_in)`, the same bound the meta blocks use for their intercepts.
pub(crate) fn fan_in_uniform(shape: [usize; 4], rng: &mut impl Rng) -> Tensor<f32> {
    let bound = 1.0 / ((shape[1] * shape[2] * shape[3]) as f32).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

pub(crate) fn he_uniform(shape: [usize; 4], rng: &mut impl Rng) -> Tensor<f32> {
    let fan_in = (shape[1] * shape[2] * shape[3]) as f32;
    let bound = (6.0 / fan_in).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Tape handles for the shared weights of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SharedVars {
    pub head_kernel: Var,
    pub head_bias: Var,
    pub expand_kernel: Var,
    pub expand_bias: Var,
    pub out_kernel: Var,
    pub out_bias: Var,
}

impl SharedVars {
    pub fn all(&self) -> [Var; 6] {
        [
            self.head_kernel,
            self.head_bias,
            self.expand_kernel,
            self.expand_bias,
            self.out_kernel,
            self.out_bias,
        ]
    }
}

/// Runs the main network on one 3×H×W image. The output is not clamped.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    image: Var,
    kernels: &[Var],
    shared: &SharedVars,
    cfg: &ArchConfig,
) -> Result<Var> {
    cfg.validate()?;
    if kernels.len() != cfg.num_generated_kernels() {
        return Err(contract(format!(
            "expected {} generated kernels for {} residual blocks, got {}",
            cfg.num_generated_kernels(),
            cfg.num_resblocks,
            kernels.len()
        )));
    }
    let (c, h, w) = tape.value(image).chw()?;
    if c != 3 {
        return Err(contract(format!("restoration input must have 3 channels, got {c}")));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(contract(format!("restoration input must have even size, got {h}×{w}")));
    }
    let pad = cfg.kernel_size / 2;

    let head = tape.conv2d(image, shared.head_kernel, Some(shared.head_bias), 2, pad)?;
    let f0 = tape.relu(head);
    let mut f = f0;
    for pair in kernels.chunks_exact(2) {
        let a = tape.conv2d(f, pair[0], None, 1, pad)?;
        let a = tape.relu(a);
        let b = tape.conv2d(a, pair[1], None, 1, pad)?;
        f = tape.add(f, b)?;
    }
    let f = tape.add(f, f0)?;
    let up = tape.conv2d(f, shared.expand_kernel, Some(shared.expand_bias), 1, pad)?;
    let up = tape.pixelshuffle(up, cfg.upscale_internal)?;
    tape.conv2d(up, shared.out_kernel, Some(shared.out_bias), 1, pad)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub head: usize,
    pub resblock_meta: usize,
    pub tail_expand: usize,
    pub tail_out: usize,
    pub shared: usize,
    pub hypernet: usize,
    pub total: usize,
    /// Kernel parameters of one generated main network's residual blocks.
    pub generated_kernels: usize,
}

impl ParamBreakdown {
    fn assemble(head: usize, resblock_meta: usize, tail_expand: usize, tail_out: usize, generated_kernels: usize) -> Self {
        let shared = head + tail_expand + tail_out;
        Self {
            head,
            resblock_meta,
            tail_expand,
            tail_out,
            shared,
            hypernet: resblock_meta,
            total: shared + resblock_meta,
            generated_kernels,
        }
    }

    /// Counts for an architecture without instantiating it.
    pub fn for_arch(cfg: &ArchConfig) -> Result<Self> {
        cfg.validate()?;
        let (c, k, r2) = (cfg.channels, cfg.kernel_size, cfg.upscale_internal * cfg.upscale_internal);
        let kk = k * k;
        let kernels = cfg.num_generated_kernels() * c * c * kk;
        Ok(Self::assemble(
            3 * c * kk + c,
            2 * kernels,
            c * c * r2 * kk + c * r2,
            c * 3 * kk + 3,
            kernels,
        ))
    }

    /// Number of residual-block kernel parameters that `levels` dedicated
    /// networks would need; the hypernetwork's own count does not grow with it.
    pub fn dedicated_kernel_count(&self, levels: usize) -> usize {
        levels * self.generated_kernels
    }
}

pub fn count_total_parameters(shared: &SharedWeights, hnet: &HyperNetwork) -> ParamBreakdown {
    ParamBreakdown::assemble(
        shared.head_kernel.numel() + shared.head_bias.numel(),
        hnet.count_parameters(),
        shared.expand_kernel.numel() + shared.expand_bias.numel(),
        shared.out_kernel.numel() + shared.out_bias.numel(),
        hnet.generated_kernel_count(),
    )
}
