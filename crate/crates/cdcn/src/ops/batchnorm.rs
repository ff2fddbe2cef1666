//! Per-channel batch normalization. Training mode normalizes by batch
//! statistics and updates running estimates; inference mode is a fixed affine
//! map using the running estimates.

use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

#[derive(Clone)]
pub struct BatchNormSpec<S: Scalar> {
    pub scale: Tensor<S>,
    pub shift: Tensor<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
    pub eps: f64,
    pub momentum: f64,
    pub training: bool,
}

impl<S: Scalar> BatchNormSpec<S> {
    /// scale = 1, shift = 0, running stats (0, 1), eps 1e-5, momentum 0.1.
    pub fn new(channels: usize) -> BatchNormSpec<S> {
        let cs = Shape::new(1, channels, 1, 1);
        BatchNormSpec {
            scale: Tensor::full(cs, S::one()),
            shift: Tensor::zeros(cs),
            running_mean: Tensor::zeros(cs),
            running_var: Tensor::full(cs, S::one()),
            eps: 1e-5,
            momentum: 0.1,
            training: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.shape().c
    }
}

pub fn batchnorm<S: Scalar>(
    tape: &mut Tape<S>,
    x: &Tensor<S>,
    bn: &mut BatchNormSpec<S>,
) -> Result<Tensor<S>> {
    let xs = x.shape();
    let c = bn.channels();
    if xs.c != c {
        return Err(Error::Shape {
            op: "batchnorm",
            detail: format!("channel axis: input has {} channels, spec has {c}", xs.c),
        });
    }
    let m = xs.n * xs.h * xs.w;
    if bn.training && m < 2 {
        return Err(Error::Shape {
            op: "batchnorm",
            detail: format!("training mode needs batch*h*w >= 2 per channel, got {m}"),
        });
    }

    let plane = xs.h * xs.w;
    let mut out = vec![S::zero(); xs.numel()];
    // Normalized values are kept for the backward pass and for d/d(scale).
    let mut x_hat = vec![S::zero(); xs.numel()];
    let mut inv_std = vec![S::zero(); c];

    if bn.training {
        let mut means = vec![S::zero(); c];
        let mut vars = vec![S::zero(); c];
        let m_s = S::from_f64(m as f64);
        for ch in 0..c {
            let mut sum = S::zero();
            for n in 0..xs.n {
                let base = (n * c + ch) * plane;
                for &v in &x.data()[base..base + plane] {
                    sum += v;
                }
            }
            let mean = sum / m_s;
            let mut var_sum = S::zero();
            for n in 0..xs.n {
                let base = (n * c + ch) * plane;
                for &v in &x.data()[base..base + plane] {
                    let d = v - mean;
                    var_sum += d * d;
                }
            }
            let var = var_sum / m_s;
            means[ch] = mean;
            vars[ch] = var;
            inv_std[ch] = S::one() / (var + S::from_f64(bn.eps)).sqrt();
        }
        for n in 0..xs.n {
            for ch in 0..c {
                let base = (n * c + ch) * plane;
                let (mean, istd) = (means[ch], inv_std[ch]);
                let (gamma, delta) = (bn.scale.data()[ch], bn.shift.data()[ch]);
                for i in base..base + plane {
                    let xh = (x.data()[i] - mean) * istd;
                    x_hat[i] = xh;
                    out[i] = gamma * xh + delta;
                }
            }
        }
        // Running estimates: mean uses the biased batch mean, variance the
        // unbiased one (matching the convention of mainstream frameworks).
        let mom = S::from_f64(bn.momentum);
        let keep = S::one() - mom;
        let unbias = S::from_f64(m as f64 / (m as f64 - 1.0));
        let rm = bn.running_mean.data_mut();
        let rv = bn.running_var.data_mut();
        for ch in 0..c {
            rm[ch] = keep * rm[ch] + mom * means[ch];
            rv[ch] = keep * rv[ch] + mom * vars[ch] * unbias;
        }
    } else {
        for ch in 0..c {
            inv_std[ch] =
                S::one() / (bn.running_var.data()[ch] + S::from_f64(bn.eps)).sqrt();
        }
        for n in 0..xs.n {
            for ch in 0..c {
                let base = (n * c + ch) * plane;
                let (mean, istd) = (bn.running_mean.data()[ch], inv_std[ch]);
                let (gamma, delta) = (bn.scale.data()[ch], bn.shift.data()[ch]);
                for i in base..base + plane {
                    let xh = (x.data()[i] - mean) * istd;
                    x_hat[i] = xh;
                    out[i] = gamma * xh + delta;
                }
            }
        }
    }

    let mut out_t = Tensor::from_vec(xs, out)?;

    let x_slot = tape.slot_of(x).filter(|_| tape.tracks(x));
    let gamma_slot = tape.slot_of(&bn.scale).filter(|_| tape.tracks(&bn.scale));
    let delta_slot = tape.slot_of(&bn.shift).filter(|_| tape.tracks(&bn.shift));
    if x_slot.is_some() || gamma_slot.is_some() || delta_slot.is_some() {
        let gamma_cap = bn.scale.detached();
        let training = bn.training;
        tape.record(&mut out_t, move |g, acc| {
            if let Some(slot) = delta_slot {
                acc.accumulate(slot, |dd| {
                    for n in 0..xs.n {
                        for ch in 0..c {
                            let base = (n * c + ch) * plane;
                            let mut s = S::zero();
                            for &gv in &g[base..base + plane] {
                                s += gv;
                            }
                            dd[ch] += s;
                        }
                    }
                });
            }
            if let Some(slot) = gamma_slot {
                acc.accumulate(slot, |dg| {
                    for n in 0..xs.n {
                        for ch in 0..c {
                            let base = (n * c + ch) * plane;
                            let mut s = S::zero();
                            for i in base..base + plane {
                                s += g[i] * x_hat[i];
                            }
                            dg[ch] += s;
                        }
                    }
                });
            }
            if let Some(slot) = x_slot {
                acc.accumulate(slot, |dx| {
                    if training {
                        // dx = gamma*istd * (g - mean(g) - x_hat * mean(g*x_hat)),
                        // means over the channel's batch slice; accounts for the
                        // dependence of batch statistics on x.
                        let m_s = S::from_f64(m as f64);
                        for ch in 0..c {
                            let mut sum_g = S::zero();
                            let mut sum_gx = S::zero();
                            for n in 0..xs.n {
                                let base = (n * c + ch) * plane;
                                for i in base..base + plane {
                                    sum_g += g[i];
                                    sum_gx += g[i] * x_hat[i];
                                }
                            }
                            let mean_g = sum_g / m_s;
                            let mean_gx = sum_gx / m_s;
                            let coeff = gamma_cap.data()[ch] * inv_std[ch];
                            for n in 0..xs.n {
                                let base = (n * c + ch) * plane;
                                for i in base..base + plane {
                                    dx[i] += coeff * (g[i] - mean_g - x_hat[i] * mean_gx);
                                }
                            }
                        }
                    } else {
                        for n in 0..xs.n {
                            for ch in 0..c {
                                let coeff = gamma_cap.data()[ch] * inv_std[ch];
                                let base = (n * c + ch) * plane;
                                for i in base..base + plane {
                                    dx[i] += coeff * g[i];
                                }
                            }
                        }
                    }
                });
            }
        });
    }
    Ok(out_t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_collapses_to_shift() {
        let mut bn = BatchNormSpec::<f64>::new(2);
        bn.shift = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.3, -0.7]).unwrap();
        let x = Tensor::from_vec(
            Shape::new(2, 2, 1, 3),
            vec![0.1; 12],
        )
        .unwrap();
        let mut tape = Tape::inference();
        let y = batchnorm(&mut tape, &x, &mut bn).unwrap();
        for n in 0..2 {
            for w in 0..3 {
                assert!((y.at(n, 0, 0, w) - 0.3).abs() < 1e-6, "channel 0 -> shift");
                assert!((y.at(n, 1, 0, w) + 0.7).abs() < 1e-6, "channel 1 -> shift");
            }
        }
    }

    #[test]
    fn training_output_is_normalized() {
        let mut bn = BatchNormSpec::<f64>::new(1);
        let x = Tensor::from_fn(Shape::new(4, 1, 3, 3), |i| (i as f64) * 0.37 - 2.0);
        let mut tape = Tape::inference();
        let y = batchnorm(&mut tape, &x, &mut bn).unwrap();
        let m = y.data().len() as f64;
        let mean = y.data().iter().sum::<f64>() / m;
        let var = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        assert!(mean.abs() < 1e-9, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "var {var} (eps shifts it slightly)");
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNormSpec::<f64>::new(1);
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut tape = Tape::inference();
        batchnorm(&mut tape, &x, &mut bn).unwrap();
        let mean = 2.5;
        let var_biased = 1.25;
        let var_unbiased = var_biased * 4.0 / 3.0;
        assert!((bn.running_mean.data()[0] - 0.1 * mean).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * var_unbiased)).abs() < 1e-12);
    }

    #[test]
    fn inference_composes_as_affine() {
        let mut bn = BatchNormSpec::<f64>::new(1);
        bn.training = false;
        bn.running_mean = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0.4]).unwrap();
        bn.running_var = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![2.0]).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 1, 2, 2), |i| i as f64);
        let mut tape = Tape::inference();
        let once = batchnorm(&mut tape, &x, &mut bn).unwrap();
        let twice = batchnorm(&mut tape, &once, &mut bn).unwrap();
        // composed affine: a*(a*x + b) + b with a = 1/sqrt(rv+eps), b = -rm*a
        let a = 1.0 / (2.0f64 + 1e-5).sqrt();
        let b = -0.4 * a;
        for (i, &v) in twice.data().iter().enumerate() {
            let expect = a * (a * x.data()[i] + b) + b;
            assert!((v - expect).abs() < 1e-6, "at {i}: {v} vs {expect}");
        }
    }

    #[test]
    fn training_rejects_single_element_stats() {
        let mut bn = BatchNormSpec::<f64>::new(3);
        let x = Tensor::zeros(Shape::new(1, 3, 1, 1));
        let mut tape = Tape::inference();
        let err = batchnorm(&mut tape, &x, &mut bn).unwrap_err();
        assert!(err.to_string().contains(">= 2"), "got {err}");
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let mut bn = BatchNormSpec::<f64>::new(4);
        let x = Tensor::zeros(Shape::new(1, 3, 2, 2));
        let mut tape = Tape::inference();
        let err = batchnorm(&mut tape, &x, &mut bn).unwrap_err();
        assert!(err.to_string().contains("channel axis"), "got {err}");
    }
}
