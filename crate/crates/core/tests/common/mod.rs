//! Brute-force oracles and a finite-difference gradient checker shared by
//! the integration tests.
#![allow(dead_code)]

pub mod checks;

use hyperrestore::degrade::cubic;
use hyperrestore::tape::{Tape, Var};
use hyperrestore::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn rand_image<R: Rng>(rng: &mut R, c: usize, h: usize, w: usize) -> Tensor<f32> {
    let n = c * h * w;
    Tensor::new([c, h, w], (0..n).map(|_| rng.gen_range(0.0f32..1.0)).collect()).unwrap()
}

/// Zero-padded cross-correlation, straight from the definition.
pub fn conv2d_oracle(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, ks) = (k.shape()[0], k.shape()[2]);
    let ho = (h + 2 * pad - ks) / stride + 1;
    let wo = (w + 2 * pad - ks) / stride + 1;
    let mut out = vec![0.0; cout * ho * wo];
    for co in 0..cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bias.map_or(0.0, |b| b.data()[co]);
                for ci in 0..cin {
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let xv = x.data()[(ci * h + iy as usize) * w + ix as usize];
                            let kv = k.data()[((co * cin + ci) * ks + ky) * ks + kx];
                            acc += xv * kv;
                        }
                    }
                }
                out[(co * ho + oy) * wo + ox] = acc;
            }
        }
    }
    Tensor::new([cout, ho, wo], out).unwrap()
}

pub fn l1_oracle(p: &[f32], t: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += (p[i] as f64 - t[i] as f64).abs();
    }
    s / p.len() as f64
}

pub fn psnr_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let mut se = 0.0;
    for i in 0..a.numel() {
        let d = a.data()[i] as f64 - b.data()[i] as f64;
        se += d * d;
    }
    let mse = se / a.numel() as f64;
    10.0 * (1.0 / mse).log10()
}

/// Direct 11×11 windowed SSIM with two-pass local statistics.
pub fn ssim_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut g = [[0.0f64; 11]; 11];
    let mut gs = 0.0;
    for (dy, row) in g.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (fy, fx) = (dy as f64 - 5.0, dx as f64 - 5.0);
            *v = (-(fy * fy + fx * fx) / (2.0 * 1.5 * 1.5)).exp();
            gs += *v;
        }
    }
    let mut total = 0.0;
    for ch in 0..c {
        let px = |t: &Tensor<f32>, y: usize, x: usize| t.data()[(ch * h + y) * w + x] as f64;
        let mut acc = 0.0;
        let mut n = 0usize;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let wt = g[dy][dx] / gs;
                        ma += wt * px(a, y0 + dy, x0 + dx);
                        mb += wt * px(b, y0 + dy, x0 + dx);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let wt = g[dy][dx] / gs;
                        let (da, db) = (px(a, y0 + dy, x0 + dx) - ma, px(b, y0 + dy, x0 + dx) - mb);
                        va += wt * da * da;
                        vb += wt * db * db;
                        cov += wt * da * db;
                    }
                }
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                n += 1;
            }
        }
        total += acc / n as f64;
    }
    total / c as f64
}

/// Bicubic resize evaluated as one 2-D weighted sum per output pixel.
pub fn bicubic_oracle(img: &Tensor<f32>, oh: usize, ow: usize) -> Tensor<f64> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
    let (supy, supx) = (sy.max(1.0), sx.max(1.0));
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let cy = (oy as f64 + 0.5) * sy - 0.5;
                let cx = (ox as f64 + 0.5) * sx - 0.5;
                let (mut num, mut den) = (0.0, 0.0);
                let ry = (2.0 * supy).ceil() as isize + 1;
                let rx = (2.0 * supx).ceil() as isize + 1;
                for iy in (cy.floor() as isize - ry)..=(cy.floor() as isize + ry) {
                    for ix in (cx.floor() as isize - rx)..=(cx.floor() as isize + rx) {
                        let wt = cubic((iy as f64 - cy) / supy) * cubic((ix as f64 - cx) / supx);
                        let yy = iy.clamp(0, h as isize - 1) as usize;
                        let xx = ix.clamp(0, w as isize - 1) as usize;
                        num += wt * img.data()[(ch * h + yy) * w + xx] as f64;
                        den += wt;
                    }
                }
                out.push(num / den);
            }
        }
    }
    Tensor::new([c, oh, ow], out).unwrap()
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Default, Clone, Copy)]
pub struct FdStats {
    pub checked: usize,
    pub failures: usize,
    pub worst: f64,
}

impl FdStats {
    pub fn merge(&mut self, o: FdStats) {
        self.checked += o.checked;
        self.failures += o.failures;
        self.worst = self.worst.max(o.worst);
    }
}

pub const FD_REL_TOL: f64 = 1e-3;
const FD_ABS_FLOOR: f64 = 1e-7;
const FD_STEP: f64 = 1e-5;

/// Checks every entry of every leaf (or a random subset of `max_per_leaf`
/// entries). `build` receives the leaf handles and returns a scalar loss.
pub fn fd_check(
    leaves: &[Tensor<f64>],
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
    max_per_leaf: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> FdStats {
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = build(&mut tape, &vars);
        tape.scalar(loss)
    };
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();

    let mut stats = FdStats::default();
    let mut vals = leaves.to_vec();
    for li in 0..leaves.len() {
        let n = leaves[li].numel();
        let idx: Vec<usize> = match max_per_leaf {
            Some(m) if m < n => (0..m).map(|_| rng.gen_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        for i in idx {
            let orig = vals[li].data()[i];
            vals[li].data_mut()[i] = orig + FD_STEP;
            let up = eval(&vals);
            vals[li].data_mut()[i] = orig - FD_STEP;
            let down = eval(&vals);
            vals[li].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[li][i];
            let err = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            stats.checked += 1;
            if err > FD_REL_TOL * scale + FD_ABS_FLOOR {
                stats.failures += 1;
            }
            if scale > 0.0 {
                stats.worst = stats.worst.max(err / scale);
            }
        }
    }
    stats
}

/// Random projection to a scalar: `r · vec(v)`, so every output element
/// gets a distinct, non-trivial gradient.
pub fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    use rand::SeedableRng;
    let n = tape.value(v).numel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = tape.constant(rand_tensor(&mut rng, &[1, n], -1.0, 1.0));
    tape.linear(v, r, None).unwrap()
}
