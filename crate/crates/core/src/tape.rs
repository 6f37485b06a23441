//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every tensor produced during one forward pass together
//! with the operation that produced it. Nodes are appended in execution
//! order, so the node list is already topologically sorted and
//! [`Tape::backward`] simply walks it in reverse.
//!
//! Convolutions use the cross-correlation convention (no kernel flip) with
//! zero padding.

use crate::error::{contract, Result};
use crate::tensor::{ensure_same_shape, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize },
    PixelShuffle { input: Var, r: usize },
    Relu { input: Var },
    Add { a: Var, b: Var },
    /// `alpha * x + y`
    Axpy { alpha: f64, x: Var, y: Var },
    Reshape { input: Var },
    Sum { input: Var },
    Mean { input: Var },
    L1 { pred: Var, target: Var },
    Linear { input: Var, weight: Var, bias: Option<Var> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    trainable: bool,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; trainable leaves receive a gradient on `backward`.
    pub fn leaf(&mut self, value: Tensor<T>, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            trainable,
            requires_grad: trainable,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` call's loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { value, op, trainable: false, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let k = self.value(kernel);
        let geom = ConvGeom::new(x.shape(), k.shape(), stride, padding)?;
        let b = match bias {
            Some(b) => {
                let bt = self.value(b);
                if bt.shape() != [geom.cout] {
                    return Err(contract(format!(
                        "conv2d bias shape {:?} does not match {} output channels",
                        bt.shape(),
                        geom.cout
                    )));
                }
                Some(bt.data())
            }
            None => None,
        };
        let out = conv2d_forward(x.data(), k.data(), b, &geom);
        let value = Tensor::new([geom.cout, geom.ho, geom.wo], out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, stride, padding }, &inputs))
    }

    pub fn pixelshuffle(&mut self, input: Var, r: usize) -> Result<Var> {
        let value = pixelshuffle(self.value(input), r)?;
        Ok(self.push(value, Op::PixelShuffle { input, r }, &[input]))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        // NaN passes through so a poisoned input still shows up in the loss.
        let value = self.value(input).map(|v| if v < T::zero() { T::zero() } else { v });
        self.push(value, Op::Relu { input }, &[input])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ensure_same_shape("add", ta.shape(), tb.shape())?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    /// `alpha * x + y`, elementwise.
    pub fn axpy(&mut self, alpha: f64, x: Var, y: Var) -> Result<Var> {
        let (tx, ty) = (self.value(x), self.value(y));
        ensure_same_shape("axpy", tx.shape(), ty.shape())?;
        let a = T::from_f64(alpha);
        let data = tx.data().iter().zip(ty.data()).map(|(&u, &v)| a * u + v).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Axpy { alpha, x, y }, &[x, y]))
    }

    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { input }, &[input]))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s: f64 = self.value(input).data().iter().map(|v| v.as_f64()).sum();
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum { input }, &[input])
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let s: f64 = t.data().iter().map(|v| v.as_f64()).sum();
        let m = s / t.numel() as f64;
        self.push(Tensor::scalar(T::from_f64(m)), Op::Mean { input }, &[input])
    }

    /// Mean absolute difference; the subgradient at ties is zero.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        ensure_same_shape("l1_loss", p.shape(), t.shape())?;
        let loss = l1_value(p.data(), t.data());
        Ok(self.push(Tensor::scalar(T::from_f64(loss)), Op::L1 { pred, target }, &[pred, target]))
    }

    /// Fully connected layer over the flattened input: `weight · x + bias`
    /// with `weight` of shape out × in.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let (out, inp) = match w.shape() {
            &[o, i] => (o, i),
            s => return Err(contract(format!("linear weight must be out×in, got {s:?}"))),
        };
        if x.numel() != inp {
            return Err(contract(format!(
                "linear input has {} elements but weight expects {inp} (input shape {:?}, weight shape {:?})",
                x.numel(),
                x.shape(),
                w.shape()
            )));
        }
        let b = match bias {
            Some(b) => {
                let bt = self.value(b);
                if bt.shape() != [out] {
                    return Err(contract(format!("linear bias shape {:?}, expected [{out}]", bt.shape())));
                }
                Some(bt.data())
            }
            None => None,
        };
        let xd = x.data();
        let data = w
            .data()
            .chunks_exact(inp)
            .enumerate()
            .map(|(o, row)| {
                let acc: f64 = row.iter().zip(xd).map(|(&a, &b)| (a * b).as_f64()).sum();
                T::from_f64(acc + b.map_or(0.0, |b| b[o].as_f64()))
            })
            .collect();
        let value = Tensor::new([out], data)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(value, Op::Linear { input, weight, bias }, &inputs))
    }

    /// Populates gradients of `loss` for every node that depends on a
    /// trainable leaf. Previous gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            self.propagate(i, &g);
            self.nodes[i].grad = Some(g);
        }

        for n in &mut self.nodes {
            if n.trainable && n.grad.is_none() {
                n.grad = Some(vec![T::zero(); n.value.numel()]);
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<T>) {
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(g) => g.iter_mut().zip(contribution).for_each(|(a, b)| *a = *a + b),
            None => node.grad = Some(contribution),
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, stride, padding } => {
                let x = self.value(input);
                let k = self.value(kernel);
                let geom = ConvGeom::new(x.shape(), k.shape(), stride, padding)
                    .expect("geometry validated on forward");
                let gx = self.wants(input).then(|| conv2d_grad_input(g, k.data(), &geom));
                let gk = self.wants(kernel).then(|| conv2d_grad_kernel(g, x.data(), &geom));
                if let Some(gx) = gx {
                    self.accumulate(input, gx);
                }
                if let Some(gk) = gk {
                    self.accumulate(kernel, gk);
                }
                if let Some(b) = bias.filter(|&b| self.wants(b)) {
                    let plane = geom.ho * geom.wo;
                    let gb = g
                        .chunks_exact(plane)
                        .map(|c| T::from_f64(c.iter().map(|v| v.as_f64()).sum()))
                        .collect();
                    self.accumulate(b, gb);
                }
            }
            Op::PixelShuffle { input, r } => {
                if self.wants(input) {
                    let shape = self.value(input).shape().to_vec();
                    let out_shape = self.nodes[i].value.shape().to_vec();
                    let gt = Tensor::new(out_shape, g.to_vec()).expect("grad matches value");
                    let gx = pixel_unshuffle(&gt, r).expect("inverse of a valid shuffle");
                    debug_assert_eq!(gx.shape(), &shape[..]);
                    self.accumulate(input, gx.into_data());
                }
            }
            Op::Relu { input } => {
                if self.wants(input) {
                    let gx = self
                        .value(input)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&x, &gv)| if x > T::zero() { gv } else { T::zero() })
                        .collect();
                    self.accumulate(input, gx);
                }
            }
            Op::Add { a, b } => {
                if self.wants(a) {
                    self.accumulate(a, g.to_vec());
                }
                if self.wants(b) {
                    self.accumulate(b, g.to_vec());
                }
            }
            Op::Axpy { alpha, x, y } => {
                if self.wants(x) {
                    let a = T::from_f64(alpha);
                    self.accumulate(x, g.iter().map(|&v| a * v).collect());
                }
                if self.wants(y) {
                    self.accumulate(y, g.to_vec());
                }
            }
            Op::Reshape { input } => {
                if self.wants(input) {
                    self.accumulate(input, g.to_vec());
                }
            }
            Op::Sum { input } => {
                if self.wants(input) {
                    let n = self.value(input).numel();
                    self.accumulate(input, vec![g[0]; n]);
                }
            }
            Op::Mean { input } => {
                if self.wants(input) {
                    let n = self.value(input).numel();
                    let v = T::from_f64(g[0].as_f64() / n as f64);
                    self.accumulate(input, vec![v; n]);
                }
            }
            Op::L1 { pred, target } => {
                let (p, t) = (self.value(pred).data(), self.value(target).data());
                let scale = T::from_f64(g[0].as_f64() / p.len() as f64);
                let gp: Vec<T> = p
                    .iter()
                    .zip(t)
                    .map(|(&a, &b)| {
                        if a > b {
                            scale
                        } else if a < b {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if self.wants(target) {
                    self.accumulate(target, gp.iter().map(|&v| -v).collect());
                }
                if self.wants(pred) {
                    self.accumulate(pred, gp);
                }
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(input).data();
                let w = self.value(weight).data();
                let inp = x.len();
                let gx = self.wants(input).then(|| {
                    let mut acc = vec![0f64; inp];
                    for (row, &go) in w.chunks_exact(inp).zip(g) {
                        for (a, &wv) in acc.iter_mut().zip(row) {
                            *a += (wv * go).as_f64();
                        }
                    }
                    acc.into_iter().map(T::from_f64).collect::<Vec<T>>()
                });
                let gw = self.wants(weight).then(|| {
                    g.iter().flat_map(|&go| x.iter().map(move |&xv| go * xv)).collect::<Vec<T>>()
                });
                if let Some(gx) = gx {
                    self.accumulate(input, gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(weight, gw);
                }
                if let Some(b) = bias.filter(|&b| self.wants(b)) {
                    self.accumulate(b, g.to_vec());
                }
            }
        }
    }
}

pub(crate) fn l1_value<T: Scalar>(p: &[T], t: &[T]) -> f64 {
    let s: f64 = p.iter().zip(t).map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs()).sum();
    s / p.len() as f64
}

/// Validated convolution geometry.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (cin, h, w) = match *input {
            [c, h, w] => (c, h, w),
            _ => return Err(contract(format!("conv2d input must be C×H×W, got {input:?}"))),
        };
        let (cout, kc, kh, kw) = match *kernel {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(contract(format!("conv2d kernel must be Cout×Cin×K×K, got {kernel:?}"))),
        };
        if kc != cin {
            return Err(contract(format!(
                "conv2d channel mismatch: input {input:?} vs kernel {kernel:?}"
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(contract(format!("conv2d kernel must be square with odd size, got {kernel:?}")));
        }
        if stride == 0 {
            return Err(contract("conv2d stride must be positive"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(contract(format!(
                "conv2d kernel {kernel:?} larger than padded input {input:?} (padding {pad})"
            )));
        }
        Ok(Self {
            cin,
            h,
            w,
            cout,
            k: kh,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }

    /// Output indices `o` in `[lo, hi)` whose input index `o*stride + off - pad`
    /// lies inside `[0, n_in)`.
    #[inline]
    fn valid(&self, n_out: usize, n_in: usize, off: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if off >= self.pad { 0 } else { (self.pad - off).div_ceil(s) };
        let hi = if n_in + self.pad > off { ((n_in - 1 + self.pad - off) / s + 1).min(n_out) } else { 0 };
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], k: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let plane = g.ho * g.wo;
    let mut out = vec![T::zero(); g.cout * plane];
    let kk = g.k * g.k;
    for co in 0..g.cout {
        let o = &mut out[co * plane..(co + 1) * plane];
        if let Some(b) = bias {
            o.fill(b[co]);
        }
        for ci in 0..g.cin {
            let xp = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let kbase = (co * g.cin + ci) * kk;
            for ky in 0..g.k {
                let (ylo, yhi) = g.valid(g.ho, g.h, ky);
                for kx in 0..g.k {
                    let wv = k[kbase + ky * g.k + kx];
                    let (xlo, xhi) = g.valid(g.wo, g.w, kx);
                    if xlo >= xhi {
                        continue;
                    }
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let xrow = &xp[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut o[oy * g.wo..(oy + 1) * g.wo];
                        if g.stride == 1 {
                            let start = xlo + kx - g.pad;
                            for (ov, &xv) in orow[xlo..xhi].iter_mut().zip(&xrow[start..]) {
                                *ov = *ov + wv * xv;
                            }
                        } else {
                            for ox in xlo..xhi {
                                orow[ox] = orow[ox] + wv * xrow[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_grad_input<T: Scalar>(gout: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    let plane = g.ho * g.wo;
    let mut gx = vec![T::zero(); g.cin * g.h * g.w];
    let kk = g.k * g.k;
    for co in 0..g.cout {
        let go = &gout[co * plane..(co + 1) * plane];
        for ci in 0..g.cin {
            let gxp = &mut gx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let kbase = (co * g.cin + ci) * kk;
            for ky in 0..g.k {
                let (ylo, yhi) = g.valid(g.ho, g.h, ky);
                for kx in 0..g.k {
                    let wv = k[kbase + ky * g.k + kx];
                    let (xlo, xhi) = g.valid(g.wo, g.w, kx);
                    if xlo >= xhi {
                        continue;
                    }
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &go[oy * g.wo..(oy + 1) * g.wo];
                        let xrow = &mut gxp[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let start = xlo + kx - g.pad;
                            for (xv, &gv) in xrow[start..].iter_mut().zip(&grow[xlo..xhi]) {
                                *xv = *xv + wv * gv;
                            }
                        } else {
                            for ox in xlo..xhi {
                                let ix = ox * g.stride + kx - g.pad;
                                xrow[ix] = xrow[ix] + wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

fn conv2d_grad_kernel<T: Scalar>(gout: &[T], x: &[T], g: &ConvGeom) -> Vec<T> {
    let plane = g.ho * g.wo;
    let kk = g.k * g.k;
    let mut gk = vec![T::zero(); g.cout * g.cin * kk];
    for co in 0..g.cout {
        let go = &gout[co * plane..(co + 1) * plane];
        for ci in 0..g.cin {
            let xp = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let kbase = (co * g.cin + ci) * kk;
            for ky in 0..g.k {
                let (ylo, yhi) = g.valid(g.ho, g.h, ky);
                for kx in 0..g.k {
                    let (xlo, xhi) = g.valid(g.wo, g.w, kx);
                    if xlo >= xhi {
                        continue;
                    }
                    let mut acc = 0f64;
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &go[oy * g.wo..(oy + 1) * g.wo];
                        let xrow = &xp[iy * g.w..(iy + 1) * g.w];
                        let mut row = T::zero();
                        if g.stride == 1 {
                            let start = xlo + kx - g.pad;
                            for (&gv, &xv) in grow[xlo..xhi].iter().zip(&xrow[start..]) {
                                row = row + gv * xv;
                            }
                        } else {
                            for ox in xlo..xhi {
                                row = row + grow[ox] * xrow[ox * g.stride + kx - g.pad];
                            }
                        }
                        acc += row.as_f64();
                    }
                    gk[kbase + ky * g.k + kx] = T::from_f64(acc);
                }
            }
        }
    }
    gk
}

/// Depth-to-space: `out(c, r·h+dy, r·w+dx) = in(c·r² + dy·r + dx, h, w)`.
pub fn pixelshuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (cin, h, w) = input.chw()?;
    if r == 0 || cin % (r * r) != 0 {
        return Err(contract(format!(
            "pixelshuffle: {cin} channels not divisible by r²={}",
            r * r
        )));
    }
    let c = cin / (r * r);
    let (oh, ow) = (h * r, w * r);
    let src = input.data();
    let mut out = vec![T::zero(); src.len()];
    for ch in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let ic = ch * r * r + dy * r + dx;
                for y in 0..h {
                    for x in 0..w {
                        out[(ch * oh + r * y + dy) * ow + r * x + dx] = src[(ic * h + y) * w + x];
                    }
                }
            }
        }
    }
    Tensor::new([c, oh, ow], out)
}

/// Space-to-depth; exact inverse of [`pixelshuffle`].
pub fn pixel_unshuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (c, oh, ow) = input.chw()?;
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(contract(format!("pixel_unshuffle: {oh}×{ow} not divisible by r={r}")));
    }
    let (h, w) = (oh / r, ow / r);
    let src = input.data();
    let mut out = vec![T::zero(); src.len()];
    for ch in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let ic = ch * r * r + dy * r + dx;
                for y in 0..h {
                    for x in 0..w {
                        out[(ic * h + y) * w + x] = src[(ch * oh + r * y + dy) * ow + r * x + dx];
                    }
                }
            }
        }
    }
    Tensor::new([c * r * r, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        let x = tape.constant(t(&[1, 3, 3], &data));
        let k = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let y = tape.conv2d(x, k, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn strided_output_shape() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([1, 4, 4]));
        let k = tape.constant(Tensor::full([1, 1, 3, 3], 0.3));
        let y = tape.conv2d(x, k, None, 2, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2, 2]);
    }

    #[test]
    fn conv_channel_mismatch_names_shapes() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([2, 4, 4]));
        let k = tape.constant(Tensor::zeros([1, 3, 3, 3]));
        let err = tape.conv2d(x, k, None, 1, 1).unwrap_err().to_string();
        assert!(err.contains("[2, 4, 4]") && err.contains("[1, 3, 3, 3]"), "{err}");
    }

    #[test]
    fn conv_rejects_even_kernel_and_oversized_kernel() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([1, 2, 2]));
        let k2 = tape.constant(Tensor::zeros([1, 1, 2, 2]));
        let k5 = tape.constant(Tensor::zeros([1, 1, 5, 5]));
        assert!(tape.conv2d(x, k2, None, 1, 0).is_err());
        assert!(tape.conv2d(x, k5, None, 1, 1).is_err());
        assert!(tape.conv2d(x, k5, None, 1, 2).is_ok());
    }

    #[test]
    fn pixelshuffle_small_cases() {
        let x = t(&[4, 1, 1], &[1., 2., 3., 4.]);
        let y = pixelshuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[1., 2., 3., 4.]);
        assert_eq!(pixelshuffle(&x, 1).unwrap(), x);
        assert!(pixelshuffle(&t(&[3, 1, 1], &[0.; 3]), 2).is_err());
    }

    #[test]
    fn relu_values_and_dead_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[-1., 0., 2.]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0., 0., 2.]);

        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[4], &[-1., -2., -0.5, -3.]));
        let y = tape.relu(x);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.value(y).data(), &[0.; 4]);
        assert_eq!(tape.grad(x).unwrap(), &[0.; 4]);
    }

    #[test]
    fn l1_loss_cases() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2, 2], &[0.1, 0.2, 0.3, 0.4]));
        let b = tape.constant(t(&[2, 2], &[0.6, 0.7, 0.8, 0.9]));
        let same = tape.l1_loss(a, a).unwrap();
        let off = tape.l1_loss(b, a).unwrap();
        assert_eq!(tape.scalar(same), 0.0);
        assert!((tape.scalar(off) - 0.5).abs() < 1e-12);
        let c = tape.constant(t(&[4], &[0.; 4]));
        assert!(tape.l1_loss(a, c).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::full([2, 3], 0.7));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::zeros([2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn unreached_trainable_leaf_gets_zero_grad() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::full([2], 1.0));
        let unused = tape.param(Tensor::full([3], 1.0));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(unused).unwrap(), &[0.0; 3]);
    }
}
