//! Central difference convolution. The layer aggregates gradient-like local
//! differences together with plain intensities:
//!
//!   y(p) = theta * sum_k w_k * (x(p + off_k) - x(p)) + (1 - theta) * sum_k w_k * x(p + off_k)
//!
//! `cdc_forward_direct` evaluates that sum literally and exists as the slow
//! reference route. `cdc_forward_decomposed` is the production path:
//!
//!   y = conv(x, w) - theta * center(x) * kernel_diff(w)
//!
//! where kernel_diff collapses each kernel spatially. Both routes treat padded
//! taps as zero, including the center tap, so they agree at every boundary.

use crate::ops::conv::{conv2d, ConvSpec};
use crate::ops::elementwise::{scale_by, scale_const, sigmoid, stable_sigmoid, sub};
use crate::ops::structure::center_crop;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

/// How theta is supplied: a fixed value in [0, 1], or a learnable pre-activation
/// squashed through a sigmoid so the effective theta stays in (0, 1).
#[derive(Clone)]
pub enum ThetaMode<S: Scalar> {
    Fixed(S),
    Adaptive { pre_theta: Tensor<S> },
}

impl<S: Scalar> ThetaMode<S> {
    /// Effective contribution factor of the difference term.
    pub fn effective(&self) -> f64 {
        match self {
            ThetaMode::Fixed(t) => t.as_f64(),
            ThetaMode::Adaptive { pre_theta } => {
                stable_sigmoid(pre_theta.data()[0]).as_f64()
            }
        }
    }
}

#[derive(Clone)]
pub struct CdcLayer<S: Scalar> {
    pub conv: ConvSpec<S>,
    pub theta: ThetaMode<S>,
}

impl<S: Scalar> CdcLayer<S> {
    pub fn new_fixed(
        weight: Tensor<S>,
        bias: Option<Tensor<S>>,
        stride: usize,
        padding: usize,
        theta: f64,
    ) -> Result<CdcLayer<S>> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Config(format!("theta must lie in [0,1], got {theta}")));
        }
        let conv = Self::checked_conv(weight, bias, stride, padding)?;
        Ok(CdcLayer { conv, theta: ThetaMode::Fixed(S::from_f64(theta)) })
    }

    /// Learnable theta initialized so that sigmoid(pre_theta) = init.
    pub fn new_adaptive(
        weight: Tensor<S>,
        bias: Option<Tensor<S>>,
        stride: usize,
        padding: usize,
        init: f64,
    ) -> Result<CdcLayer<S>> {
        if !(0.0 < init && init < 1.0) {
            return Err(Error::Config(format!(
                "adaptive theta init must lie strictly in (0,1), got {init}"
            )));
        }
        let conv = Self::checked_conv(weight, bias, stride, padding)?;
        let pre = (init / (1.0 - init)).ln();
        Ok(CdcLayer {
            conv,
            theta: ThetaMode::Adaptive { pre_theta: Tensor::scalar_tensor(S::from_f64(pre)) },
        })
    }

    fn checked_conv(
        weight: Tensor<S>,
        bias: Option<Tensor<S>>,
        stride: usize,
        padding: usize,
    ) -> Result<ConvSpec<S>> {
        if weight.shape().h % 2 == 0 {
            return Err(Error::Config(format!(
                "central difference needs an odd kernel so the center tap exists, got {}",
                weight.shape().h
            )));
        }
        ConvSpec::new(weight, bias, stride, padding)
    }

    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        self.conv.out_shape(input)
    }
}

/// Collapses each kernel spatially: [O,I,k,k] -> [O,I,1,1] with
/// kd[o,i] = sum over kh,kw of w[o,i,kh,kw].
pub fn kernel_diff<S: Scalar>(tape: &mut Tape<S>, w: &Tensor<S>) -> Tensor<S> {
    let ws = w.shape();
    let kk = ws.h * ws.w;
    let mut data = vec![S::zero(); ws.n * ws.c];
    for oi in 0..ws.n * ws.c {
        let mut s = S::zero();
        for &v in &w.data()[oi * kk..(oi + 1) * kk] {
            s += v;
        }
        data[oi] = s;
    }
    let mut out = Tensor::from_vec(Shape::new(ws.n, ws.c, 1, 1), data).expect("shape fits");
    if tape.tracks(w) {
        let slot = tape.slot_of(w).unwrap();
        tape.record(&mut out, move |g, acc| {
            acc.accumulate(slot, |dw| {
                for oi in 0..ws.n * ws.c {
                    let gv = g[oi];
                    for d in &mut dw[oi * kk..(oi + 1) * kk] {
                        *d += gv;
                    }
                }
            });
        });
    }
    out
}

/// Production path: vanilla convolution minus the theta-scaled center response,
/// built from tape primitives so gradients (including through an adaptive
/// theta) come from the tape. A fixed theta of exactly zero short-circuits to
/// the vanilla convolution.
pub fn cdc_forward_decomposed<S: Scalar>(
    tape: &mut Tape<S>,
    x: &Tensor<S>,
    layer: &CdcLayer<S>,
) -> Result<Tensor<S>> {
    let vanilla = conv2d(tape, x, &layer.conv)?;
    if let ThetaMode::Fixed(t) = &layer.theta {
        if *t == S::zero() {
            return Ok(vanilla);
        }
    }
    let kd = kernel_diff(tape, &layer.conv.weight);
    let centers = center_crop(tape, x, layer.conv.kernel(), layer.conv.stride, layer.conv.padding)?;
    let kd_spec = ConvSpec::new(kd, None, 1, 0)?;
    let center_response = conv2d(tape, &centers, &kd_spec)?;
    let scaled = match &layer.theta {
        ThetaMode::Fixed(t) => scale_const(tape, &center_response, *t),
        ThetaMode::Adaptive { pre_theta } => {
            let th = sigmoid(tape, pre_theta);
            scale_by(tape, &center_response, &th)?
        }
    };
    sub(tape, &vanilla, &scaled)
}

/// Reference route: evaluates the defining sums tap by tap. Forward only; kept
/// deliberately independent of the decomposed path.
pub fn cdc_forward_direct<S: Scalar>(x: &Tensor<S>, layer: &CdcLayer<S>) -> Result<Tensor<S>> {
    let os = layer.out_shape(x.shape())?;
    let xs = x.shape();
    let w = layer.conv.weight.data();
    let ws = layer.conv.weight.shape();
    let k = ws.h;
    let (stride, padding) = (layer.conv.stride, layer.conv.padding);
    let ctr = (k - 1) / 2;
    let theta = S::from_f64(layer.theta.effective());
    let one_minus = S::one() - theta;

    let sample = |n: usize, c: usize, iy: isize, ix: isize| -> S {
        if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
            S::zero()
        } else {
            x.data()[((n * xs.c + c) * xs.h + iy as usize) * xs.w + ix as usize]
        }
    };

    let mut out = vec![S::zero(); os.numel()];
    for n in 0..os.n {
        for oc in 0..os.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let base_y = (oy * stride) as isize - padding as isize;
                    let base_x = (ox * stride) as isize - padding as isize;
                    let mut acc_diff = S::zero();
                    let mut acc_int = S::zero();
                    for ic in 0..xs.c {
                        let center = sample(n, ic, base_y + ctr as isize, base_x + ctr as isize);
                        for kh in 0..k {
                            for kw in 0..k {
                                let wv = w[((oc * ws.c + ic) * k + kh) * k + kw];
                                let xv = sample(n, ic, base_y + kh as isize, base_x + kw as isize);
                                acc_diff += wv * (xv - center);
                                acc_int += wv * xv;
                            }
                        }
                    }
                    let mut v = theta * acc_diff + one_minus * acc_int;
                    if let Some(b) = &layer.conv.bias {
                        v += b.data()[oc];
                    }
                    out[os.idx(n, oc, oy, ox)] = v;
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}
