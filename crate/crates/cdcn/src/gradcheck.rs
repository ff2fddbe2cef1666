//! Finite-difference verification of every differentiable operation. Each
//! check runs the reverse-mode gradient and an independent central-difference
//! estimate over the same randomized inputs and compares them elementwise by
//! relative error. `run_suite` bundles the full set for the CLI and tests.

use crate::cdc::{cdc_forward_decomposed, CdcLayer, ThetaMode};
use crate::layers::ThetaCfg;
use crate::loss::{loss_cdl, loss_mse, loss_overall, ContrastKernelBank};
use crate::model::mafm::{mafm_forward, Mafm};
use crate::nas::{
    build_supernet, OpCatalog, OpKind, SearchPlan, SharingMode, SupernetConfig,
};
use crate::ops::batchnorm::{batchnorm, BatchNormSpec};
use crate::ops::conv::{conv2d, ConvSpec};
use crate::ops::elementwise::{
    add, hadamard, mean_all, mul_attn, relu, scale_by, scale_const, sigmoid, softmax_last, sub,
    weighted_sum,
};
use crate::ops::pool::{channel_avg, channel_max, maxpool2x2};
use crate::ops::structure::{center_crop, concat_channels, split_channels};
use crate::rng::{stream_for, SplitMix64};
use crate::tape::Tape;
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

/// Step for central differences, chosen for 64-bit evaluation.
pub const FD_STEP: f64 = 1e-5;
/// Largest acceptable elementwise relative error.
pub const REL_TOL: f64 = 1e-4;
/// Pairs where both sides are below this magnitude count as agreeing.
const BOTH_SMALL: f64 = 1e-7;

/// Central-difference gradient of a scalar function. The closure is called
/// with perturbed copies of `x0`, two evaluations per coordinate.
pub fn fd_grad(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x0: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    let mut probe = x0.to_vec();
    let mut grad = Vec::with_capacity(x0.len());
    for i in 0..x0.len() {
        probe[i] = x0[i] + step;
        let plus = f(&probe)?;
        probe[i] = x0[i] - step;
        let minus = f(&probe)?;
        probe[i] = x0[i];
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Largest elementwise relative error between two gradient vectors, with
/// max(|a|,|b|) as the denominator. Panics on length mismatch since that is
/// a harness bug, not a numerical failure.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(
        analytic.len(),
        numeric.len(),
        "gradient vectors must pair up elementwise"
    );
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        if a.abs() < BOTH_SMALL && n.abs() < BOTH_SMALL {
            continue;
        }
        let rel = (a - n).abs() / a.abs().max(n.abs());
        worst = worst.max(rel);
    }
    worst
}

/// Checks one case where the parameters are standalone tensors: `fwd` must
/// rebuild the computation from them and return a scalar loss tensor.
/// Returns the worst relative error across all parameter coordinates.
pub fn check_pure(
    params: &[Tensor<f64>],
    fwd: &mut dyn FnMut(&mut Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut watched: Vec<Tensor<f64>> = params.to_vec();
    for p in watched.iter_mut() {
        tape.watch(p);
    }
    let loss = fwd(&mut tape, &watched)?;
    if loss.scalar().is_none() {
        return Err(Error::Tape("gradient check loss must be scalar".to_string()));
    }
    let grads = tape.backward(&loss)?;
    let mut analytic = Vec::new();
    for p in &watched {
        match grads.wrt(p) {
            Some(g) => analytic.extend(g.iter().copied()),
            None => analytic.extend(std::iter::repeat(0.0).take(p.shape().numel())),
        }
    }

    let x0: Vec<f64> = params.iter().flat_map(|p| p.data().iter().copied()).collect();
    let mut eval = |vals: &[f64]| -> Result<f64> {
        let mut ps: Vec<Tensor<f64>> = params.to_vec();
        let mut off = 0;
        for p in ps.iter_mut() {
            let n = p.shape().numel();
            p.data_mut().copy_from_slice(&vals[off..off + n]);
            off += n;
        }
        let mut tape = Tape::new();
        let loss = fwd(&mut tape, &ps)?;
        loss.scalar()
            .ok_or_else(|| Error::Tape("gradient check loss must be scalar".to_string()))
    };
    let numeric = fd_grad(&mut eval, &x0, FD_STEP)?;
    Ok(max_rel_error(&analytic, &numeric))
}

/// Reduces a tensor to a scalar through a fixed random weighting, so every
/// output coordinate influences the loss with a distinct coefficient.
fn weighted_mean(
    tape: &mut Tape<f64>,
    y: &Tensor<f64>,
    weights: &Tensor<f64>,
) -> Result<Tensor<f64>> {
    let prod = hadamard(tape, y, weights)?;
    Ok(mean_all(tape, &prod))
}

fn rand_t(rng: &mut SplitMix64, shape: Shape) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Values bounded away from zero, for kink-free relu probing.
fn nonzero_t(rng: &mut SplitMix64, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.uniform(0.05, 1.0);
        if rng.next_below(2) == 0 {
            v
        } else {
            -v
        }
    })
}

/// Redraws a group of values until all pairwise gaps clear `min_gap`, so
/// finite-difference steps cannot flip an argmax.
fn separated(rng: &mut SplitMix64, count: usize, min_gap: f64) -> Vec<f64> {
    loop {
        let vals: Vec<f64> = (0..count).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut ok = true;
        for i in 0..count {
            for j in i + 1..count {
                if (vals[i] - vals[j]).abs() < min_gap {
                    ok = false;
                }
            }
        }
        if ok {
            return vals;
        }
    }
}

/// Input whose every pooling window is tie-free.
fn pool_safe_t(rng: &mut SplitMix64, shape: Shape) -> Tensor<f64> {
    let mut t = Tensor::zeros(shape);
    for n in 0..shape.n {
        for c in 0..shape.c {
            for hw in 0..(shape.h / 2) {
                for ww in 0..(shape.w / 2) {
                    let vals = separated(rng, 4, 1e-3);
                    let data = t.data_mut();
                    data[shape.idx(n, c, 2 * hw, 2 * ww)] = vals[0];
                    data[shape.idx(n, c, 2 * hw, 2 * ww + 1)] = vals[1];
                    data[shape.idx(n, c, 2 * hw + 1, 2 * ww)] = vals[2];
                    data[shape.idx(n, c, 2 * hw + 1, 2 * ww + 1)] = vals[3];
                }
            }
        }
    }
    t
}

/// Input whose channel fibers are tie-free at every spatial position.
fn channel_safe_t(rng: &mut SplitMix64, shape: Shape) -> Tensor<f64> {
    let mut t = Tensor::zeros(shape);
    for n in 0..shape.n {
        for h in 0..shape.h {
            for w in 0..shape.w {
                let vals = separated(rng, shape.c, 1e-3);
                let data = t.data_mut();
                for c in 0..shape.c {
                    data[shape.idx(n, c, h, w)] = vals[c];
                }
            }
        }
    }
    t
}

fn conv_case(rng: &mut SplitMix64) -> Result<f64> {
    let x = rand_t(rng, Shape::new(2, 2, 5, 5));
    let w = rand_t(rng, Shape::new(3, 2, 3, 3));
    let b = rand_t(rng, Shape::new(1, 3, 1, 1));
    let weights = rand_t(rng, Shape::new(2, 3, 5, 5));
    check_pure(&[x, w, b], &mut |tape, ps| {
        let spec = ConvSpec::new(ps[1].clone(), Some(ps[2].clone()), 1, 1)?;
        let y = conv2d(tape, &ps[0], &spec)?;
        weighted_mean(tape, &y, &weights)
    })
}

fn conv_stride2_case(rng: &mut SplitMix64) -> Result<f64> {
    let x = rand_t(rng, Shape::new(1, 2, 6, 6));
    let w = rand_t(rng, Shape::new(2, 2, 3, 3));
    let weights = rand_t(rng, Shape::new(1, 2, 3, 3));
    check_pure(&[x, w], &mut |tape, ps| {
        let spec = ConvSpec::new(ps[1].clone(), None, 2, 1)?;
        let y = conv2d(tape, &ps[0], &spec)?;
        weighted_mean(tape, &y, &weights)
    })
}

fn cdc_fixed_case(rng: &mut SplitMix64) -> Result<f64> {
    let x = rand_t(rng, Shape::new(1, 2, 5, 5));
    let w = rand_t(rng, Shape::new(2, 2, 3, 3));
    let weights = rand_t(rng, Shape::new(1, 2, 5, 5));
    check_pure(&[x, w], &mut |tape, ps| {
        let layer = CdcLayer::new_fixed(ps[1].clone(), None, 1, 1, 0.7)?;
        let y = cdc_forward_decomposed(tape, &ps[0], &layer)?;
        weighted_mean(tape, &y, &weights)
    })
}

fn cdc_adaptive_case(rng: &mut SplitMix64) -> Result<f64> {
    let x = rand_t(rng, Shape::new(1, 2, 5, 5));
    let w = rand_t(rng, Shape::new(2, 2, 3, 3));
    let pre_theta = Tensor::zeros(Shape::new(1, 1, 1, 1));
    let weights = rand_t(rng, Shape::new(1, 2, 5, 5));
    check_pure(&[x, w, pre_theta], &mut |tape, ps| {
        let conv = ConvSpec::new(ps[1].clone(), None, 1, 1)?;
        let layer = CdcLayer { conv, theta: ThetaMode::Adaptive { pre_theta: ps[2].clone() } };
        let y = cdc_forward_decomposed(tape, &ps[0], &layer)?;
        weighted_mean(tape, &y, &weights)
    })
}

fn batchnorm_case(rng: &mut SplitMix64) -> Result<f64> {
    let x = rand_t(rng, Shape::new(3, 2, 4, 4));
    let scale = Tensor::uniform(Shape::new(1, 2, 1, 1), 0.5, 1.5, rng);
    let shift = Tensor::uniform(Shape::new(1, 2, 1, 1), -0.5, 0.5, rng);
    let weights = rand_t(rng, Shape::new(3, 2, 4, 4));
    check_pure(&[x, scale, shift], &mut |tape, ps| {
        let mut bn = BatchNormSpec::new(2);
        bn.scale = ps[1].clone();
        bn.shift = ps[2].clone();
        bn.training = true;
        let y = batchnorm(tape, &ps[0], &mut bn)?;
        weighted_mean(tape, &y, &weights)
    })
}

fn relu_case(rng: &mut SplitMix64) -> Result<f64> {
    let x = nonzero_t(rng, Shape::new(2, 3, 4, 4));
    let weights = rand_t(rng, Shape::new(2, 3, 4, 4));
    check_pure(&[x], &mut |tape, ps| {
        let y = relu(tape, &ps[0]);
        weighted_mean(tape, &y, &weights)
    })
}

fn sigmoid_case(rng: &mut SplitMix64) -> Result<f64> {
    let x = rand_t(rng, Shape::new(2, 2, 3, 3));
    let weights = rand_t(rng, Shape::new(2, 2, 3, 3));
    check_pure(&[x], &mut |tape, ps| {
        let y = sigmoid(tape, &ps[0]);
        weighted_mean(tape, &y, &weights)
    })
}

fn maxpool_case(rng: &mut SplitMix64) -> Result<f64> {
    let x = pool_safe_t(rng, Shape::new(2, 2, 4, 4));
    let weights = rand_t(rng, Shape::new(2, 2, 2, 2));
    check_pure(&[x], &mut |tape, ps| {
        let y = maxpool2x2(tape, &ps[0])?;
        weighted_mean(tape, &y, &weights)
    })
}

fn channel_avg_case(rng: &mut SplitMix64) -> Result<f64> {
    let x = rand_t(rng, Shape::new(2, 3, 3, 3));
    let weights = rand_t(rng, Shape::new(2, 1, 3, 3));
    check_pure(&[x], &mut |tape, ps| {
        let y = channel_avg(tape, &ps[0]);
        weighted_mean(tape, &y, &weights)
    })
}

fn channel_max_case(rng: &mut SplitMix64) -> Result<f64> {
    let x = channel_safe_t(rng, Shape::new(2, 3, 3, 3));
    let weights = rand_t(rng, Shape::new(2, 1, 3, 3));
    check_pure(&[x], &mut |tape, ps| {
        let y = channel_max(tape, &ps[0]);
        weighted_mean(tape, &y, &weights)
    })
}

fn arithmetic_case(rng: &mut SplitMix64) -> Result<f64> {
    let a = rand_t(rng, Shape::new(1, 2, 3, 3));
    let b = rand_t(rng, Shape::new(1, 2, 3, 3));
    let weights = rand_t(rng, Shape::new(1, 2, 3, 3));
    check_pure(&[a, b], &mut |tape, ps| {
        let total = add(tape, &ps[0], &ps[1])?;
        let diff = sub(tape, &ps[0], &ps[1])?;
        let prod = hadamard(tape, &total, &diff)?;
        let y = scale_const(tape, &prod, 0.75);
        weighted_mean(tape, &y, &weights)
    })
}

fn scale_by_case(rng: &mut SplitMix64) -> Result<f64> {
    let x = rand_t(rng, Shape::new(1, 2, 3, 3));
    let s = rand_t(rng, Shape::new(1, 1, 1, 1));
    let weights = rand_t(rng, Shape::new(1, 2, 3, 3));
    check_pure(&[x, s], &mut |tape, ps| {
        let y = scale_by(tape, &ps[0], &ps[1])?;
        weighted_mean(tape, &y, &weights)
    })
}

fn mul_attn_case(rng: &mut SplitMix64) -> Result<f64> {
    let x = rand_t(rng, Shape::new(2, 3, 3, 3));
    let attn = rand_t(rng, Shape::new(2, 1, 3, 3));
    let weights = rand_t(rng, Shape::new(2, 3, 3, 3));
    check_pure(&[x, attn], &mut |tape, ps| {
        let y = mul_attn(tape, &ps[0], &ps[1])?;
        weighted_mean(tape, &y, &weights)
    })
}

fn mean_all_case(rng: &mut SplitMix64) -> Result<f64> {
    let x = rand_t(rng, Shape::new(2, 2, 3, 3));
    check_pure(&[x], &mut |tape, ps| Ok(mean_all(tape, &ps[0])))
}

fn softmax_case(rng: &mut SplitMix64) -> Result<f64> {
    let logits = rand_t(rng, Shape::new(1, 1, 1, 5));
    let weights = rand_t(rng, Shape::new(1, 1, 1, 5));
    check_pure(&[logits], &mut |tape, ps| {
        let y = softmax_last(tape, &ps[0])?;
        weighted_mean(tape, &y, &weights)
    })
}

fn weighted_sum_case(rng: &mut SplitMix64) -> Result<f64> {
    let a = rand_t(rng, Shape::new(1, 2, 3, 3));
    let b = rand_t(rng, Shape::new(1, 2, 3, 3));
    let c = rand_t(rng, Shape::new(1, 2, 3, 3));
    let coeffs = rand_t(rng, Shape::new(1, 1, 1, 3));
    let weights = rand_t(rng, Shape::new(1, 2, 3, 3));
    check_pure(&[a, b, c, coeffs], &mut |tape, ps| {
        let y = weighted_sum(tape, &[&ps[0], &ps[1], &ps[2]], &ps[3])?;
        weighted_mean(tape, &y, &weights)
    })
}

fn concat_split_case(rng: &mut SplitMix64) -> Result<f64> {
    let a = rand_t(rng, Shape::new(1, 2, 3, 3));
    let b = rand_t(rng, Shape::new(1, 3, 3, 3));
    let w_lo = rand_t(rng, Shape::new(1, 1, 3, 3));
    let w_hi = rand_t(rng, Shape::new(1, 4, 3, 3));
    check_pure(&[a, b], &mut |tape, ps| {
        let joined = concat_channels(tape, &[&ps[0], &ps[1]])?;
        let parts = split_channels(tape, &joined, &[1, 4])?;
        let lo = weighted_mean(tape, &parts[0], &w_lo)?;
        let hi = weighted_mean(tape, &parts[1], &w_hi)?;
        let hi3 = scale_const(tape, &hi, 3.0);
        add(tape, &lo, &hi3)
    })
}

fn center_crop_case(rng: &mut SplitMix64) -> Result<f64> {
    let x = rand_t(rng, Shape::new(1, 2, 5, 5));
    let weights = rand_t(rng, Shape::new(1, 2, 5, 5));
    check_pure(&[x], &mut |tape, ps| {
        let y = center_crop(tape, &ps[0], 3, 1, 1)?;
        weighted_mean(tape, &y, &weights)
    })
}

fn loss_mse_case(rng: &mut SplitMix64) -> Result<f64> {
    let pred = rand_t(rng, Shape::new(2, 1, 4, 4));
    let target = rand_t(rng, Shape::new(2, 1, 4, 4));
    check_pure(&[pred, target], &mut |tape, ps| loss_mse(tape, &ps[0], &ps[1]))
}

fn loss_cdl_case(rng: &mut SplitMix64) -> Result<f64> {
    let pred = rand_t(rng, Shape::new(1, 1, 4, 4));
    let target = rand_t(rng, Shape::new(1, 1, 4, 4));
    let bank = ContrastKernelBank::new();
    check_pure(&[pred, target], &mut |tape, ps| {
        loss_cdl(tape, &ps[0], &ps[1], &bank)
    })
}

fn loss_overall_case(rng: &mut SplitMix64) -> Result<f64> {
    let pred = rand_t(rng, Shape::new(1, 1, 4, 4));
    let target = rand_t(rng, Shape::new(1, 1, 4, 4));
    let bank = ContrastKernelBank::new();
    check_pure(&[pred, target], &mut |tape, ps| {
        loss_overall(tape, &ps[0], &ps[1], &bank)
    })
}

fn mafm_case(rng: &mut SplitMix64) -> Result<f64> {
    let template: Mafm<f64> = Mafm::new(rng);
    // The attention branch takes a channelwise max of each level, so the
    // levels need tie-free channel fibers just like the plain pooling cases.
    let low = channel_safe_t(rng, Shape::new(1, 2, 4, 4));
    let mid = channel_safe_t(rng, Shape::new(1, 2, 4, 4));
    let high = channel_safe_t(rng, Shape::new(1, 2, 4, 4));
    let w0 = template.branches[0].weight.clone();
    let w1 = template.branches[1].weight.clone();
    let w2 = template.branches[2].weight.clone();
    let weights = rand_t(rng, Shape::new(1, 6, 4, 4));
    check_pure(&[low, mid, high, w0, w1, w2], &mut |tape, ps| {
        let mut mafm = template.clone();
        for (branch, w) in mafm.branches.iter_mut().zip(&ps[3..6]) {
            branch.weight = w.clone();
        }
        let y = mafm_forward(tape, &mafm, &ps[0], &ps[1], &ps[2])?;
        weighted_mean(tape, &y, &weights)
    })
}

/// Gradient of a supernet cell with respect to its architecture logits: the
/// edge-mix and output-mix parameters sit behind two softmaxes, so this
/// exercises the full relaxation path.
fn supernet_arch_case(rng: &mut SplitMix64) -> Result<f64> {
    let catalog = OpCatalog::custom(vec![OpKind::None, OpKind::Skip, OpKind::CdcSingle])?;
    let config = SupernetConfig {
        input_size: 24,
        plan: SearchPlan::desk(),
        n_intermediate: 2,
        theta: ThetaCfg::Fixed(0.7),
        sharing: SharingMode::Varied,
        node_attention: false,
    };
    let mut net = build_supernet::<f64>(&config, &catalog, rng.next_below(1 << 30))?;
    {
        let mut arch = net.arch_tensors_mut();
        for nt in arch.iter_mut() {
            let sh = nt.tensor.shape();
            *nt.tensor = Tensor::uniform(sh, -0.8, 0.8, rng);
        }
    }
    let x0 = rand_t(rng, Shape::new(1, config.plan.cell, 4, 4));
    let weights = rand_t(rng, Shape::new(1, config.plan.cell, 4, 4));

    let mut tape = Tape::new();
    for nt in net.arch_tensors_mut().iter_mut() {
        tape.watch(nt.tensor);
    }
    let out = net.cell_forward(&mut tape, 0, &x0)?;
    let loss = weighted_mean(&mut tape, &out, &weights)?;
    let grads = tape.backward(&loss)?;
    let mut analytic = Vec::new();
    let mut flat = Vec::new();
    for nt in net.arch_tensors_mut().iter() {
        flat.extend(nt.tensor.data().iter().copied());
        match grads.wrt(nt.tensor) {
            Some(g) => analytic.extend(g.iter().copied()),
            None => analytic.extend(std::iter::repeat(0.0).take(nt.tensor.shape().numel())),
        }
    }

    let mut eval = |vals: &[f64]| -> Result<f64> {
        {
            let mut arch = net.arch_tensors_mut();
            let mut off = 0;
            for nt in arch.iter_mut() {
                let n = nt.tensor.shape().numel();
                nt.tensor.data_mut().copy_from_slice(&vals[off..off + n]);
                off += n;
            }
        }
        let mut tape = Tape::new();
        let out = net.cell_forward(&mut tape, 0, &x0)?;
        let loss = weighted_mean(&mut tape, &out, &weights)?;
        loss.scalar()
            .ok_or_else(|| Error::Tape("loss is not scalar".to_string()))
    };
    let numeric = fd_grad(&mut eval, &flat, FD_STEP)?;
    Ok(max_rel_error(&analytic, &numeric))
}

/// Result of repeating one operation's check over many randomized trials.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel: f64,
}

impl CheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel <= REL_TOL
    }
}

type CaseFn = fn(&mut SplitMix64) -> Result<f64>;

const CASES: &[(&str, CaseFn)] = &[
    ("conv2d", conv_case),
    ("conv2d_stride2", conv_stride2_case),
    ("cdc_fixed_theta", cdc_fixed_case),
    ("cdc_adaptive_theta", cdc_adaptive_case),
    ("batchnorm_train", batchnorm_case),
    ("relu", relu_case),
    ("sigmoid", sigmoid_case),
    ("maxpool2x2", maxpool_case),
    ("channel_avg", channel_avg_case),
    ("channel_max", channel_max_case),
    ("add_sub_hadamard_scale", arithmetic_case),
    ("scale_by", scale_by_case),
    ("mul_attn", mul_attn_case),
    ("mean_all", mean_all_case),
    ("softmax_last", softmax_case),
    ("weighted_sum", weighted_sum_case),
    ("concat_split_channels", concat_split_case),
    ("center_crop", center_crop_case),
    ("loss_mse", loss_mse_case),
    ("loss_cdl", loss_cdl_case),
    ("loss_overall", loss_overall_case),
    ("mafm", mafm_case),
    ("supernet_arch_logits", supernet_arch_case),
];

/// Runs every operation's check `trials` times with per-trial random inputs
/// and reports the worst relative error seen for each.
pub fn run_suite(trials: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::with_capacity(CASES.len());
    for (case_idx, (name, case)) in CASES.iter().enumerate() {
        let mut max_rel = 0.0f64;
        for trial in 0..trials {
            let mut rng = stream_for(seed, (case_idx * 100_000 + trial) as u64);
            let rel = case(&mut rng)?;
            max_rel = max_rel.max(rel);
        }
        reports.push(CheckReport { name, trials, max_rel });
    }
    Ok(reports)
}
