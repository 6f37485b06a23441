//! Whole-suite checks that return a one-line summary on success.
#![allow(dead_code)]

use hyperrestore::degrade::resize_bicubic;
use hyperrestore::hypernet::{generate_kernel_var, HyperNetwork, KernelShape, MetaBlock};
use hyperrestore::metrics::{psnr, ssim};
use hyperrestore::tape::{Tape, Var};
use hyperrestore::tensor::Tensor;
use hyperrestore::{ArchConfig, HyperRestoreModel, LevelRange, ParamBreakdown, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub type Check = Result<String, String>;

pub const FD_INSTANCES: usize = 20;
pub const ORACLE_INSTANCES: usize = 100;

fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Finite-difference checks for each differentiable operation, plus the
/// whole pipeline from meta blocks to the restoration loss.
pub fn gradient_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xFD);
    let mut report = Vec::new();
    let mut run = |name: &str, rng: &mut ChaCha8Rng, f: &dyn Fn(&mut ChaCha8Rng, u64) -> FdStats| -> Result<(), String> {
        let mut total = FdStats::default();
        for i in 0..FD_INSTANCES {
            total.merge(f(rng, i as u64));
        }
        if total.failures > 0 {
            return Err(format!("{name}: {}/{} entries off (worst rel {:.2e})", total.failures, total.checked, total.worst));
        }
        report.push(format!("{name} {}", total.checked));
        Ok(())
    };

    run("conv2d", &mut rng, &|rng, s| {
        let cin = rng.gen_range(1..=3);
        let cout = rng.gen_range(1..=3);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let stride = rng.gen_range(1..=2);
        let pad = rng.gen_range(0..=k / 2 + 1);
        let h = rng.gen_range(k.max(3)..=8);
        let w = rng.gen_range(k.max(3)..=8);
        let with_bias = rng.gen_bool(0.5);
        let mut leaves = vec![rand_tensor(rng, &[cin, h, w], -1.0, 1.0), rand_tensor(rng, &[cout, cin, k, k], -1.0, 1.0)];
        if with_bias {
            leaves.push(rand_tensor(rng, &[cout], -1.0, 1.0));
        }
        fd_check(
            &leaves,
            &|t, v| {
                let y = t.conv2d(v[0], v[1], v.get(2).copied(), stride, pad).unwrap();
                project(t, y, s)
            },
            None,
            rng,
        )
    })?;
    run("pixelshuffle", &mut rng, &|rng, s| {
        let r = rng.gen_range(1..=3);
        let c = rng.gen_range(1..=2) * r * r;
        let (h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let x = rand_tensor(rng, &[c, h, w], -1.0, 1.0);
        fd_check(&[x], &|t, v| {
            let y = t.pixelshuffle(v[0], r).unwrap();
            project(t, y, s)
        }, None, rng)
    })?;
    run("relu", &mut rng, &|rng, s| {
        let n = rng.gen_range(1..=5);
        let x = away_from_zero(rng, &[2, 3, n]);
        fd_check(&[x], &|t, v| {
            let y = t.relu(v[0]);
            project(t, y, s)
        }, None, rng)
    })?;
    run("add", &mut rng, &|rng, s| {
        let shape = [rng.gen_range(1..=3), 2, 3];
        let leaves = [rand_tensor(rng, &shape, -1.0, 1.0), rand_tensor(rng, &shape, -1.0, 1.0)];
        fd_check(&leaves, &|t, v| {
            let y = t.add(v[0], v[1]).unwrap();
            project(t, y, s)
        }, None, rng)
    })?;
    run("axpy", &mut rng, &|rng, s| {
        let alpha = rng.gen_range(-2.0..2.0);
        let n = rng.gen_range(1..=20);
        let leaves = [rand_tensor(rng, &[n], -1.0, 1.0), rand_tensor(rng, &[n], -1.0, 1.0)];
        fd_check(&leaves, &|t, v| {
            let y = t.axpy(alpha, v[0], v[1]).unwrap();
            project(t, y, s)
        }, None, rng)
    })?;
    run("reshape", &mut rng, &|rng, s| {
        let x = rand_tensor(rng, &[2, 3, 4], -1.0, 1.0);
        fd_check(&[x], &|t, v| {
            let y = t.reshape(v[0], [4, 6]).unwrap();
            project(t, y, s)
        }, None, rng)
    })?;
    run("sum", &mut rng, &|rng, _| {
        let n = rng.gen_range(1..=10);
        let x = rand_tensor(rng, &[n], -1.0, 1.0);
        fd_check(&[x], &|t, v| t.sum(v[0]), None, rng)
    })?;
    run("mean", &mut rng, &|rng, _| {
        let n = rng.gen_range(1..=10);
        let x = rand_tensor(rng, &[2, n], -1.0, 1.0);
        fd_check(&[x], &|t, v| t.mean(v[0]), None, rng)
    })?;
    run("l1_loss", &mut rng, &|rng, _| {
        let n = rng.gen_range(1..=30);
        let p = rand_tensor(rng, &[n], -1.0, 1.0);
        let off = away_from_zero(rng, &[n]);
        let t = Tensor::new([n], p.data().iter().zip(off.data()).map(|(a, b)| a + b).collect()).unwrap();
        fd_check(&[p, t], &|tp, v| tp.l1_loss(v[0], v[1]).unwrap(), None, rng)
    })?;
    run("linear", &mut rng, &|rng, s| {
        let (i, o) = (rng.gen_range(1..=12), rng.gen_range(1..=5));
        let leaves = [rand_tensor(rng, &[i], -1.0, 1.0), rand_tensor(rng, &[o, i], -1.0, 1.0), rand_tensor(rng, &[o], -1.0, 1.0)];
        fd_check(&leaves, &|t, v| {
            let y = t.linear(v[0], v[1], Some(v[2])).unwrap();
            project(t, y, s)
        }, None, rng)
    })?;
    run("kernel generation", &mut rng, &|rng, s| {
        let shape = KernelShape { cout: rng.gen_range(1..=3), cin: rng.gen_range(1..=3), k: 3 };
        let c = rng.gen_range(-0.5..1.5);
        let n = shape.numel();
        let leaves = [rand_tensor(rng, &[n], -1.0, 1.0), rand_tensor(rng, &[n], -1.0, 1.0)];
        fd_check(&leaves, &|t, v| {
            let k = generate_kernel_var(t, v[0], v[1], c, shape).unwrap();
            project(t, k, s)
        }, None, rng)
    })?;
    run("pipeline", &mut rng, &|rng, s| pipeline_fd(rng, s))?;
    Ok(report.join(", "))
}

/// Meta blocks → generated kernels → restoration network → L1 loss against
/// a target, differentiated with respect to every model parameter.
pub fn pipeline_fd(rng: &mut ChaCha8Rng, seed: u64) -> FdStats {
    let arch = ArchConfig::new(2, rng.gen_range(1..=2));
    let model = HyperRestoreModel::init(arch, Task::Noise, LevelRange::new(0.0, 1.0).unwrap(), seed).unwrap();
    let c = rng.gen_range(-0.25..1.25);
    let (h, w) = (2 * rng.gen_range(2..=4), 2 * rng.gen_range(2..=4));
    let image = rand_tensor(rng, &[3, h, w], 0.0, 1.0);
    // Targets sit far from any plausible output so the L1 kink is never crossed.
    let target = Tensor::new([3, h, w], (0..3 * h * w).map(|i| if i % 2 == 0 { 5.0 } else { -5.0 }).collect()).unwrap();
    let leaves: Vec<Tensor<f64>> = model
        .parameter_slices()
        .iter()
        .zip(param_shapes(&model))
        .map(|(s, shape)| Tensor::new(shape, s.iter().map(|&v| v as f64).collect()).unwrap())
        .collect();
    let blocks = model.hypernet.blocks().to_vec();
    fd_check(
        &leaves,
        &|t, v| {
            let nmeta = 2 * blocks.len();
            let kernels: Vec<Var> = blocks
                .iter()
                .enumerate()
                .map(|(j, b)| generate_kernel_var(t, v[2 * j], v[2 * j + 1], c, b.kernel_shape()).unwrap())
                .collect();
            let shared = hyperrestore::net::SharedVars {
                head_kernel: v[nmeta],
                head_bias: v[nmeta + 1],
                expand_kernel: v[nmeta + 2],
                expand_bias: v[nmeta + 3],
                out_kernel: v[nmeta + 4],
                out_bias: v[nmeta + 5],
            };
            let x = t.constant(image.clone());
            let y = hyperrestore::net::forward(t, x, &kernels, &shared, &arch).unwrap();
            let tg = t.constant(target.clone());
            t.l1_loss(y, tg).unwrap()
        },
        Some(12),
        rng,
    )
}

fn param_shapes(model: &HyperRestoreModel) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for b in model.hypernet.blocks() {
        out.push(vec![b.kernel_shape().numel()]);
        out.push(vec![b.kernel_shape().numel()]);
    }
    out.extend(model.shared.named().iter().map(|(_, t)| t.shape().to_vec()));
    out
}

/// Exact affine interpolation and extrapolation of generated kernels.
pub fn affinity_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAF);
    let lambdas = [-0.5, 0.0, 0.25, 0.5, 1.0, 1.5];
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..50 {
        let shape = KernelShape { cout: rng.gen_range(1..=8), cin: rng.gen_range(1..=8), k: 3 };
        let block = MetaBlock::init(0, shape, &mut rng);
        let (c1, c2) = (rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0));
        let k1 = block.generate_kernel(c1).unwrap();
        let k2 = block.generate_kernel(c2).unwrap();
        for &l in &lambdas {
            let kl = block.generate_kernel(l * c1 + (1.0 - l) * c2).unwrap();
            for i in 0..kl.numel() {
                let expect = l * k1.data()[i] as f64 + (1.0 - l) * k2.data()[i] as f64;
                worst = worst.max((kl.data()[i] as f64 - expect).abs());
                checked += 1;
            }
        }
    }
    if worst > 1e-6 {
        return Err(format!("max deviation {worst:.2e} over {checked} entries"));
    }
    Ok(format!("{checked} entries, max deviation {worst:.2e}"))
}

/// Hypernetwork size is twice one network's residual kernels and does not
/// depend on how many levels are served.
pub fn parameter_identity_suite() -> Check {
    let mut lines = Vec::new();
    for arch in [ArchConfig::desk(), ArchConfig::new(64, 1), ArchConfig::full()] {
        let b = ParamBreakdown::for_arch(&arch).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = HyperNetwork::init(arch.num_generated_kernels(), arch.resblock_kernel_shape(), &mut rng);
        let dedicated_one = b.dedicated_kernel_count(1);
        if h.count_parameters() != 2 * dedicated_one || b.hypernet != 2 * dedicated_one {
            return Err(format!("{arch:?}: hypernet {} vs 2×{dedicated_one}", h.count_parameters()));
        }
        for k in [2usize, 5, 11] {
            // Serving k levels changes nothing about the stored model.
            let served = h.count_parameters();
            if served != b.hypernet {
                return Err(format!("k={k}: count changed to {served}"));
            }
            if b.dedicated_kernel_count(k) != k * dedicated_one {
                return Err(format!("k={k}: dedicated count wrong"));
            }
        }
        lines.push(format!("C={} N={}: {}", arch.channels, arch.num_resblocks, b.hypernet));
    }
    Ok(lines.join(", "))
}

pub fn conv_oracle_check(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    let mut worst = 0.0f64;
    let mut worst32 = 0.0f64;
    for _ in 0..instances {
        let cin = rng.gen_range(1..=4);
        let cout = rng.gen_range(1..=4);
        let k: usize = [1, 3, 5][rng.gen_range(0..3)];
        let stride = rng.gen_range(1..=3);
        let pad = rng.gen_range(0..=k / 2 + 1);
        let h = rng.gen_range(k.saturating_sub(2 * pad).max(1)..=12);
        let w = rng.gen_range(k.saturating_sub(2 * pad).max(1)..=12);
        let x = rand_tensor(&mut rng, &[cin, h, w], -1.0, 1.0);
        let kt = rand_tensor(&mut rng, &[cout, cin, k, k], -1.0, 1.0);
        let b = rng.gen_bool(0.5).then(|| rand_tensor(&mut rng, &[cout], -1.0, 1.0));
        let expect = conv2d_oracle(&x, &kt, b.as_ref(), stride, pad);

        let mut tape = Tape::<f64>::new();
        let (xv, kv) = (tape.constant(x.clone()), tape.constant(kt.clone()));
        let bv = b.clone().map(|b| tape.constant(b));
        let y = tape.conv2d(xv, kv, bv, stride, pad).map_err(|e| e.to_string())?;
        if tape.value(y).shape() != expect.shape() {
            return Err(format!("shape {:?} vs {:?}", tape.value(y).shape(), expect.shape()));
        }
        for (a, e) in tape.value(y).data().iter().zip(expect.data()) {
            worst = worst.max((a - e).abs());
        }

        // The f32 path, scaled by the magnitude of the summed terms.
        let mut t32 = Tape::<f32>::new();
        let (xv, kv) = (t32.constant(x.cast()), t32.constant(kt.cast()));
        let bv = b.map(|b| t32.constant(b.cast()));
        let y = t32.conv2d(xv, kv, bv, stride, pad).unwrap();
        let bound = (cin * k * k + 1) as f64;
        for (a, e) in t32.value(y).data().iter().zip(expect.data()) {
            worst32 = worst32.max((*a as f64 - e).abs() / bound);
        }
    }
    if worst > 1e-6 || worst32 > 1e-6 {
        return Err(format!("conv2d off by {worst:.2e} (f64) / {worst32:.2e} per term (f32)"));
    }
    Ok(format!("conv2d {worst:.1e}"))
}

pub fn l1_oracle_check(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.gen_range(1..=500);
        let p: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::<f32>::new();
        let pv = tape.constant(Tensor::new([n], p.clone()).unwrap());
        let tv = tape.constant(Tensor::new([n], t.clone()).unwrap());
        let l = tape.l1_loss(pv, tv).unwrap();
        worst = worst.max((tape.scalar(l) as f64 - l1_oracle(&p, &t)).abs());
    }
    if worst > 1e-7 {
        return Err(format!("l1 off by {worst:.2e}"));
    }
    Ok(format!("l1 {worst:.1e}"))
}

pub fn psnr_oracle_check(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x22);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (h, w) = (rng.gen_range(1..=24), rng.gen_range(1..=24));
        let a = rand_image(&mut rng, 3, h, w);
        let amp = rng.gen_range(0.001f32..0.5);
        let b = Tensor::new(a.shape().to_vec(), a.data().iter().map(|v| (v + rng.gen_range(-amp..amp)).clamp(0.0, 1.0)).collect()).unwrap();
        let got = psnr(&a, &b).unwrap();
        worst = worst.max((got - psnr_oracle(&a, &b)).abs());
    }
    if worst > 1e-6 {
        return Err(format!("psnr off by {worst:.2e} dB"));
    }
    Ok(format!("psnr {worst:.1e} dB"))
}

pub fn ssim_oracle_check(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x33);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (h, w) = (rng.gen_range(11..=20), rng.gen_range(11..=20));
        let c = rng.gen_range(1..=3);
        let a = rand_image(&mut rng, c, h, w);
        let amp = rng.gen_range(0.01f32..0.6);
        let b = Tensor::new(a.shape().to_vec(), a.data().iter().map(|v| (v + rng.gen_range(-amp..amp)).clamp(0.0, 1.0)).collect()).unwrap();
        worst = worst.max((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs());
    }
    if worst > 1e-4 {
        return Err(format!("ssim off by {worst:.2e}"));
    }
    Ok(format!("ssim {worst:.1e}"))
}

pub fn bicubic_oracle_check(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x44);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (h, w) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let (oh, ow) = (rng.gen_range(1..=24), rng.gen_range(1..=24));
        let c = rng.gen_range(1..=3);
        let img = rand_image(&mut rng, c, h, w);
        let got = resize_bicubic(&img, oh, ow).unwrap();
        let expect = bicubic_oracle(&img, oh, ow);
        for (a, e) in got.data().iter().zip(expect.data()) {
            worst = worst.max((*a as f64 - e).abs());
        }
    }
    if worst > 1e-5 {
        return Err(format!("bicubic off by {worst:.2e}"));
    }
    Ok(format!("bicubic {worst:.1e}"))
}

pub fn oracle_suite() -> Check {
    let parts = [
        conv_oracle_check(ORACLE_INSTANCES)?,
        l1_oracle_check(ORACLE_INSTANCES)?,
        psnr_oracle_check(ORACLE_INSTANCES)?,
        ssim_oracle_check(ORACLE_INSTANCES)?,
        bicubic_oracle_check(ORACLE_INSTANCES)?,
    ];
    Ok(parts.join(", "))
}
