//! Spatial max pooling and channel-axis reductions. Ties pick the first
//! element in scan order, so backward routing is deterministic.

use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

/// 2x2 max pooling with stride 2, no padding. Odd trailing rows/columns are
/// dropped (floor semantics).
pub fn maxpool2x2<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let xs = x.shape();
    if xs.h < 2 || xs.w < 2 {
        return Err(Error::Shape {
            op: "maxpool2x2",
            detail: format!("non-positive output extent for input {xs} with 2x2 window"),
        });
    }
    let os = Shape::new(xs.n, xs.c, xs.h / 2, xs.w / 2);
    let mut out = vec![S::zero(); os.numel()];
    let mut argmax: Vec<usize> = vec![0; os.numel()];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let x_base = (n * xs.c + c) * xs.h * xs.w;
            let o_base = (n * os.c + c) * os.h * os.w;
            for oh in 0..os.h {
                for ow in 0..os.w {
                    let mut best_idx = x_base + (2 * oh) * xs.w + 2 * ow;
                    let mut best = x.data()[best_idx];
                    for (dh, dw) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = x_base + (2 * oh + dh) * xs.w + 2 * ow + dw;
                        let v = x.data()[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                    out[o_base + oh * os.w + ow] = best;
                    argmax[o_base + oh * os.w + ow] = best_idx;
                }
            }
        }
    }
    let mut out_t = Tensor::from_vec(os, out)?;
    if tape.tracks(x) {
        let slot = tape.slot_of(x).unwrap();
        tape.record(&mut out_t, move |g, acc| {
            acc.accumulate(slot, |dx| {
                for (i, &gv) in g.iter().enumerate() {
                    dx[argmax[i]] += gv;
                }
            });
        });
    }
    Ok(out_t)
}

/// Mean over the channel axis: [N,C,H,W] -> [N,1,H,W].
pub fn channel_avg<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>) -> Tensor<S> {
    let xs = x.shape();
    let plane = xs.h * xs.w;
    let inv = S::one() / S::from_f64(xs.c as f64);
    let mut out = vec![S::zero(); xs.n * plane];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let base = (n * xs.c + c) * plane;
            for i in 0..plane {
                out[n * plane + i] += x.data()[base + i];
            }
        }
        for i in 0..plane {
            out[n * plane + i] *= inv;
        }
    }
    let mut out_t =
        Tensor::from_vec(Shape::new(xs.n, 1, xs.h, xs.w), out).expect("shape computed above");
    if tape.tracks(x) {
        let slot = tape.slot_of(x).unwrap();
        tape.record(&mut out_t, move |g, acc| {
            acc.accumulate(slot, |dx| {
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let base = (n * xs.c + c) * plane;
                        for i in 0..plane {
                            dx[base + i] += g[n * plane + i] * inv;
                        }
                    }
                }
            });
        });
    }
    out_t
}

/// Max over the channel axis: [N,C,H,W] -> [N,1,H,W]. Gradient goes to the
/// first channel attaining the max.
pub fn channel_max<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>) -> Tensor<S> {
    let xs = x.shape();
    let plane = xs.h * xs.w;
    let mut out = vec![S::zero(); xs.n * plane];
    let mut argmax: Vec<usize> = vec![0; xs.n * plane];
    for n in 0..xs.n {
        for i in 0..plane {
            let mut best_idx = n * xs.c * plane + i;
            let mut best = x.data()[best_idx];
            for c in 1..xs.c {
                let idx = (n * xs.c + c) * plane + i;
                let v = x.data()[idx];
                if v > best {
                    best = v;
                    best_idx = idx;
                }
            }
            out[n * plane + i] = best;
            argmax[n * plane + i] = best_idx;
        }
    }
    let mut out_t =
        Tensor::from_vec(Shape::new(xs.n, 1, xs.h, xs.w), out).expect("shape computed above");
    if tape.tracks(x) {
        let slot = tape.slot_of(x).unwrap();
        tape.record(&mut out_t, move |g, acc| {
            acc.accumulate(slot, |dx| {
                for (i, &gv) in g.iter().enumerate() {
                    dx[argmax[i]] += gv;
                }
            });
        });
    }
    out_t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::mean_all;

    #[test]
    fn maxpool_picks_window_maxima() {
        let x = Tensor::from_vec(
            Shape::new(1, 1, 4, 4),
            vec![
                1.0, 2.0, 5.0, 4.0, //
                3.0, 0.0, 1.0, 1.0, //
                0.0, 0.0, 2.0, 2.0, //
                9.0, 1.0, 2.0, 8.0,
            ],
        )
        .unwrap();
        let mut tape = Tape::inference();
        let y = maxpool2x2(&mut tape, &x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[3.0, 5.0, 9.0, 8.0]);
    }

    #[test]
    fn maxpool_floor_drops_odd_edge() {
        let x = Tensor::from_fn(Shape::new(1, 1, 5, 5), |i| i as f64);
        let mut tape = Tape::inference();
        let y = maxpool2x2(&mut tape, &x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        // windows over rows 0..4, cols 0..4; max of each 2x2 block
        assert_eq!(y.data(), &[6.0, 8.0, 16.0, 18.0]);
    }

    #[test]
    fn maxpool_gradient_routes_to_argmax_first_on_ties() {
        let mut tape = Tape::new();
        let mut x = Tensor::from_vec(
            Shape::new(1, 1, 2, 2),
            vec![7.0, 7.0, 7.0, 7.0],
        )
        .unwrap();
        tape.watch(&mut x);
        let y = maxpool2x2(&mut tape, &x).unwrap();
        let loss = mean_all(&mut tape, &y);
        let g = tape.backward(&loss).unwrap();
        assert_eq!(
            g.wrt(&x).unwrap(),
            &[1.0, 0.0, 0.0, 0.0],
            "tied max must send gradient to the first element in scan order"
        );
    }

    #[test]
    fn maxpool_rejects_tiny_input() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 1, 4));
        let mut tape = Tape::inference();
        assert!(maxpool2x2(&mut tape, &x).is_err());
    }

    #[test]
    fn channel_avg_and_max_reduce_correctly() {
        let x = Tensor::from_vec(
            Shape::new(1, 3, 1, 2),
            vec![1.0, 10.0, 5.0, 2.0, 3.0, 30.0],
        )
        .unwrap();
        let mut tape = Tape::inference();
        let avg = channel_avg(&mut tape, &x);
        let max = channel_max(&mut tape, &x);
        assert_eq!(avg.data(), &[3.0, 14.0]);
        assert_eq!(max.data(), &[5.0, 30.0]);
    }

    #[test]
    fn channel_reduction_gradients() {
        let mut tape = Tape::new();
        let mut x = Tensor::from_vec(
            Shape::new(1, 2, 1, 2),
            vec![1.0, 10.0, 5.0, 2.0],
        )
        .unwrap();
        tape.watch(&mut x);
        let avg = channel_avg(&mut tape, &x);
        let max = channel_max(&mut tape, &x);
        let both = crate::ops::add(&mut tape, &avg, &max).unwrap();
        let loss = mean_all(&mut tape, &both);
        let g = tape.backward(&loss).unwrap();
        // avg part: 0.5/2 everywhere; max part: 0.5 to argmax (c1 at i=0 -> 5.0, c0 at i=1 -> 10.0)
        assert_eq!(g.wrt(&x).unwrap(), &[0.25, 0.75, 0.75, 0.25]);
    }
}
