//! Affine hypernetwork: every residual-block kernel of the restoration
//! network is generated as `k = c·w + b` from one conditioning scalar `c`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Cout × Cin × K × K.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelShape {
    pub cout: usize,
    pub cin: usize,
    pub k: usize,
}

impl KernelShape {
    pub fn numel(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.cout, self.cin, self.k, self.k]
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// The `(w, b)` pair that generates one main-network kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaBlock {
    w: Vec<f32>,
    b: Vec<f32>,
    target_slot: usize,
    kernel_shape: KernelShape,
}

impl MetaBlock {
    pub fn new(target_slot: usize, kernel_shape: KernelShape, w: Vec<f32>, b: Vec<f32>) -> Result<Self> {
        let n = kernel_shape.numel();
        if w.len() != n || b.len() != n {
            return Err(contract(format!(
                "meta block {target_slot}: kernel {:?} needs {n} weights, got w={} b={}",
                kernel_shape.dims(),
                w.len(),
                b.len()
            )));
        }
        Ok(Self { w, b, target_slot, kernel_shape })
    }

    /// Slope entries are drawn at a tenth of the fan-in bound used for the
    /// intercept, so generated kernels stay near a standard initialization for
    /// `c` in `[0, 1]`.
    pub fn init(target_slot: usize, kernel_shape: KernelShape, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (kernel_shape.fan_in() as f32).sqrt();
        let n = kernel_shape.numel();
        let w = (0..n).map(|_| rng.gen_range(-0.1 * bound..0.1 * bound)).collect();
        let b = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Self { w, b, target_slot, kernel_shape }
    }

    pub fn w(&self) -> &[f32] {
        &self.w
    }

    pub fn b(&self) -> &[f32] {
        &self.b
    }

    pub fn w_mut(&mut self) -> &mut [f32] {
        &mut self.w
    }

    pub fn b_mut(&mut self) -> &mut [f32] {
        &mut self.b
    }

    pub fn params_mut(&mut self) -> (&mut [f32], &mut [f32]) {
        (&mut self.w, &mut self.b)
    }

    pub fn target_slot(&self) -> usize {
        self.target_slot
    }

    pub fn kernel_shape(&self) -> KernelShape {
        self.kernel_shape
    }

    pub fn parameter_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// `c·w + b` reshaped to the kernel shape.
    pub fn generate_kernel(&self, c: f64) -> Result<Tensor<f32>> {
        check_level(c)?;
        let cf = c as f32;
        let data = self.w.iter().zip(&self.b).map(|(&w, &b)| cf * w + b).collect();
        Tensor::new(self.kernel_shape.dims(), data)
    }
}

pub(crate) fn check_level(c: f64) -> Result<()> {
    if !c.is_finite() {
        return Err(contract(format!("conditioning scalar must be finite, got {c}")));
    }
    Ok(())
}

/// Differentiable kernel generation from flat `w`/`b` nodes already on the tape.
pub fn generate_kernel_var<T: Scalar>(
    tape: &mut Tape<T>,
    w: Var,
    b: Var,
    c: f64,
    shape: KernelShape,
) -> Result<Var> {
    check_level(c)?;
    let flat = tape.axpy(c, w, b)?;
    tape.reshape(flat, shape.dims())
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperNetwork {
    blocks: Vec<MetaBlock>,
}

impl HyperNetwork {
    /// Blocks must carry the slots `0..l` exactly once; they are stored
    /// sorted by slot.
    pub fn new(mut blocks: Vec<MetaBlock>) -> Result<Self> {
        blocks.sort_by_key(|b| b.target_slot);
        for (i, b) in blocks.iter().enumerate() {
            if b.target_slot != i {
                return Err(contract(format!(
                    "meta block slots must be unique and contiguous from 0; found slot {} at position {i}",
                    b.target_slot
                )));
            }
        }
        Ok(Self { blocks })
    }

    /// One meta block per residual-block convolution, all C×C×K×K.
    pub fn init(num_kernels: usize, shape: KernelShape, rng: &mut impl Rng) -> Self {
        let blocks = (0..num_kernels).map(|j| MetaBlock::init(j, shape, rng)).collect();
        Self { blocks }
    }

    pub fn blocks(&self) -> &[MetaBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [MetaBlock] {
        &mut self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Kernels of the main network generated at `c`, in slot order.
    pub fn generate_network_weights(&self, c: f64) -> Result<Vec<Tensor<f32>>> {
        self.blocks.iter().map(|b| b.generate_kernel(c)).collect()
    }

    /// Stored parameters: `2·Cout·Cin·K·K` per block. This does not depend
    /// on how many degradation levels the model serves.
    pub fn count_parameters(&self) -> usize {
        self.blocks.iter().map(MetaBlock::parameter_count).sum()
    }

    /// Kernel parameters of one generated main network.
    pub fn generated_kernel_count(&self) -> usize {
        self.blocks.iter().map(|b| b.kernel_shape.numel()).sum()
    }
}
