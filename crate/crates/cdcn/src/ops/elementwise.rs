//! Pointwise ops, broadcast multiplies, reductions to scalar, row softmax,
//! and the coefficient-weighted sum the relaxed cells mix with.

use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub fn relu<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>) -> Tensor<S> {
    let data: Vec<S> = x.data().iter().map(|&v| if v > S::zero() { v } else { S::zero() }).collect();
    let mut out = Tensor::from_vec(x.shape(), data).expect("same shape");
    if tape.tracks(x) {
        let slot = tape.slot_of(x).unwrap();
        let x_cap = x.detached();
        tape.record(&mut out, move |g, acc| {
            acc.accumulate(slot, |dx| {
                for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(x_cap.data()) {
                    if xv > S::zero() {
                        *d += gv;
                    }
                }
            });
        });
    }
    out
}

pub fn sigmoid<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>) -> Tensor<S> {
    let data: Vec<S> = x.data().iter().map(|&v| stable_sigmoid(v)).collect();
    let mut out = Tensor::from_vec(x.shape(), data).expect("same shape");
    if tape.tracks(x) {
        let slot = tape.slot_of(x).unwrap();
        let y_cap = out.detached();
        tape.record(&mut out, move |g, acc| {
            acc.accumulate(slot, |dx| {
                for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y_cap.data()) {
                    *d += gv * yv * (S::one() - yv);
                }
            });
        });
    }
    out
}

#[inline]
pub(crate) fn stable_sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

fn binary_shapes_must_match<S: Scalar>(
    op: &'static str,
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<()> {
    if a.shape() != b.shape() {
        let (sa, sb) = (a.shape(), b.shape());
        let axis = ["batch", "channel", "height", "width"]
            .iter()
            .zip(sa.dims().iter().zip(sb.dims().iter()))
            .find(|(_, (x, y))| x != y)
            .map(|(name, _)| *name)
            .unwrap_or("unknown");
        return Err(Error::Shape {
            op,
            detail: format!("{axis} axis differs: {sa} vs {sb}"),
        });
    }
    Ok(())
}

pub fn add<S: Scalar>(tape: &mut Tape<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    binary_shapes_must_match("add", a, b)?;
    let data: Vec<S> = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    let mut out = Tensor::from_vec(a.shape(), data)?;
    let a_slot = tape.slot_of(a).filter(|_| tape.tracks(a));
    let b_slot = tape.slot_of(b).filter(|_| tape.tracks(b));
    if a_slot.is_some() || b_slot.is_some() {
        tape.record(&mut out, move |g, acc| {
            for slot in [a_slot, b_slot].into_iter().flatten() {
                acc.accumulate(slot, |d| {
                    for (dv, &gv) in d.iter_mut().zip(g) {
                        *dv += gv;
                    }
                });
            }
        });
    }
    Ok(out)
}

pub fn sub<S: Scalar>(tape: &mut Tape<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    binary_shapes_must_match("sub", a, b)?;
    let data: Vec<S> = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
    let mut out = Tensor::from_vec(a.shape(), data)?;
    let a_slot = tape.slot_of(a).filter(|_| tape.tracks(a));
    let b_slot = tape.slot_of(b).filter(|_| tape.tracks(b));
    if a_slot.is_some() || b_slot.is_some() {
        tape.record(&mut out, move |g, acc| {
            if let Some(slot) = a_slot {
                acc.accumulate(slot, |d| {
                    for (dv, &gv) in d.iter_mut().zip(g) {
                        *dv += gv;
                    }
                });
            }
            if let Some(slot) = b_slot {
                acc.accumulate(slot, |d| {
                    for (dv, &gv) in d.iter_mut().zip(g) {
                        *dv -= gv;
                    }
                });
            }
        });
    }
    Ok(out)
}

/// Elementwise product of same-shape tensors.
pub fn hadamard<S: Scalar>(tape: &mut Tape<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    binary_shapes_must_match("hadamard", a, b)?;
    let data: Vec<S> = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    let mut out = Tensor::from_vec(a.shape(), data)?;
    let a_slot = tape.slot_of(a).filter(|_| tape.tracks(a));
    let b_slot = tape.slot_of(b).filter(|_| tape.tracks(b));
    if a_slot.is_some() || b_slot.is_some() {
        let a_cap = a.detached();
        let b_cap = b.detached();
        tape.record(&mut out, move |g, acc| {
            if let Some(slot) = a_slot {
                acc.accumulate(slot, |d| {
                    for ((dv, &gv), &bv) in d.iter_mut().zip(g).zip(b_cap.data()) {
                        *dv += gv * bv;
                    }
                });
            }
            if let Some(slot) = b_slot {
                acc.accumulate(slot, |d| {
                    for ((dv, &gv), &av) in d.iter_mut().zip(g).zip(a_cap.data()) {
                        *dv += gv * av;
                    }
                });
            }
        });
    }
    Ok(out)
}

/// x * k for a compile-time-known constant; the constant gets no gradient.
pub fn scale_const<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>, k: S) -> Tensor<S> {
    let data: Vec<S> = x.data().iter().map(|&v| v * k).collect();
    let mut out = Tensor::from_vec(x.shape(), data).expect("same shape");
    if tape.tracks(x) {
        let slot = tape.slot_of(x).unwrap();
        tape.record(&mut out, move |g, acc| {
            acc.accumulate(slot, |d| {
                for (dv, &gv) in d.iter_mut().zip(g) {
                    *dv += gv * k;
                }
            });
        });
    }
    out
}

/// x * s where s is a 1x1x1x1 tensor; both factors receive gradient.
pub fn scale_by<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>, s: &Tensor<S>) -> Result<Tensor<S>> {
    if s.shape().numel() != 1 {
        return Err(Error::Shape {
            op: "scale_by",
            detail: format!("scale must be 1x1x1x1, got {}", s.shape()),
        });
    }
    let sv = s.data()[0];
    let data: Vec<S> = x.data().iter().map(|&v| v * sv).collect();
    let mut out = Tensor::from_vec(x.shape(), data)?;
    let x_slot = tape.slot_of(x).filter(|_| tape.tracks(x));
    let s_slot = tape.slot_of(s).filter(|_| tape.tracks(s));
    if x_slot.is_some() || s_slot.is_some() {
        let x_cap = x.detached();
        tape.record(&mut out, move |g, acc| {
            if let Some(slot) = x_slot {
                acc.accumulate(slot, |d| {
                    for (dv, &gv) in d.iter_mut().zip(g) {
                        *dv += gv * sv;
                    }
                });
            }
            if let Some(slot) = s_slot {
                acc.accumulate(slot, |d| {
                    let mut dot = S::zero();
                    for (&gv, &xv) in g.iter().zip(x_cap.data()) {
                        dot += gv * xv;
                    }
                    d[0] += dot;
                });
            }
        });
    }
    Ok(out)
}

/// x[N,C,H,W] * attn[N,1,H,W], the attention map broadcast across channels.
pub fn mul_attn<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>, attn: &Tensor<S>) -> Result<Tensor<S>> {
    let (xs, ats) = (x.shape(), attn.shape());
    if ats.c != 1 || ats.n != xs.n || ats.h != xs.h || ats.w != xs.w {
        return Err(Error::Shape {
            op: "mul_attn",
            detail: format!("attention must be [{},1,{},{}], got {ats}", xs.n, xs.h, xs.w),
        });
    }
    let plane = xs.h * xs.w;
    let mut data = vec![S::zero(); xs.numel()];
    for n in 0..xs.n {
        let a_plane = &attn.data()[n * plane..(n + 1) * plane];
        for c in 0..xs.c {
            let base = (n * xs.c + c) * plane;
            for i in 0..plane {
                data[base + i] = x.data()[base + i] * a_plane[i];
            }
        }
    }
    let mut out = Tensor::from_vec(xs, data)?;
    let x_slot = tape.slot_of(x).filter(|_| tape.tracks(x));
    let a_slot = tape.slot_of(attn).filter(|_| tape.tracks(attn));
    if x_slot.is_some() || a_slot.is_some() {
        let x_cap = x.detached();
        let a_cap = attn.detached();
        tape.record(&mut out, move |g, acc| {
            if let Some(slot) = x_slot {
                acc.accumulate(slot, |d| {
                    for n in 0..xs.n {
                        let a_plane = &a_cap.data()[n * plane..(n + 1) * plane];
                        for c in 0..xs.c {
                            let base = (n * xs.c + c) * plane;
                            for i in 0..plane {
                                d[base + i] += g[base + i] * a_plane[i];
                            }
                        }
                    }
                });
            }
            if let Some(slot) = a_slot {
                acc.accumulate(slot, |d| {
                    for n in 0..xs.n {
                        for c in 0..xs.c {
                            let base = (n * xs.c + c) * plane;
                            for i in 0..plane {
                                d[n * plane + i] += g[base + i] * x_cap.data()[base + i];
                            }
                        }
                    }
                });
            }
        });
    }
    Ok(out)
}

/// Mean over every element, yielding a 1x1x1x1 tensor.
pub fn mean_all<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>) -> Tensor<S> {
    let n = x.shape().numel();
    let inv = S::one() / S::from_f64(n as f64);
    let mut sum = S::zero();
    for &v in x.data() {
        sum += v;
    }
    let mut out = Tensor::scalar_tensor(sum * inv);
    if tape.tracks(x) {
        let slot = tape.slot_of(x).unwrap();
        tape.record(&mut out, move |g, acc| {
            acc.accumulate(slot, |d| {
                let gv = g[0] * inv;
                for dv in d.iter_mut() {
                    *dv += gv;
                }
            });
        });
    }
    out
}

/// Softmax over the last axis of a [1,1,1,K] tensor.
pub fn softmax_last<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let xs = x.shape();
    if xs.n != 1 || xs.c != 1 || xs.h != 1 || xs.w == 0 {
        return Err(Error::Shape {
            op: "softmax_last",
            detail: format!("expect [1,1,1,K] with K >= 1, got {xs}"),
        });
    }
    let max = x.data().iter().cloned().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = x.data().iter().map(|&v| (v - max).exp()).collect();
    let mut total = S::zero();
    for &e in &exps {
        total += e;
    }
    let data: Vec<S> = exps.iter().map(|&e| e / total).collect();
    let mut out = Tensor::from_vec(xs, data)?;
    if tape.tracks(x) {
        let slot = tape.slot_of(x).unwrap();
        let y_cap = out.detached();
        tape.record(&mut out, move |g, acc| {
            acc.accumulate(slot, |d| {
                let y = y_cap.data();
                let mut dot = S::zero();
                for (&gv, &yv) in g.iter().zip(y) {
                    dot += gv * yv;
                }
                for ((dv, &gv), &yv) in d.iter_mut().zip(g).zip(y) {
                    *dv += yv * (gv - dot);
                }
            });
        });
    }
    Ok(out)
}

/// out = sum_k coeffs[k] * parts[k]. Parts must share one shape; coeffs is
/// [1,1,1,K]. Gradients flow to every tracked part and to the coefficients.
pub fn weighted_sum<S: Scalar>(
    tape: &mut Tape<S>,
    parts: &[&Tensor<S>],
    coeffs: &Tensor<S>,
) -> Result<Tensor<S>> {
    if parts.is_empty() {
        return Err(Error::Shape {
            op: "weighted_sum",
            detail: "needs at least one part".to_string(),
        });
    }
    let cs = coeffs.shape();
    if cs.n != 1 || cs.c != 1 || cs.h != 1 || cs.w != parts.len() {
        return Err(Error::Shape {
            op: "weighted_sum",
            detail: format!("coeffs must be [1,1,1,{}], got {cs}", parts.len()),
        });
    }
    let shape = parts[0].shape();
    for (i, p) in parts.iter().enumerate() {
        if p.shape() != shape {
            return Err(Error::Shape {
                op: "weighted_sum",
                detail: format!("part {i} has shape {}, expected {shape}", p.shape()),
            });
        }
    }
    let mut data = vec![S::zero(); shape.numel()];
    for (k, p) in parts.iter().enumerate() {
        let cv = coeffs.data()[k];
        for (o, &v) in data.iter_mut().zip(p.data()) {
            *o += cv * v;
        }
    }
    let mut out = Tensor::from_vec(shape, data)?;

    let part_slots: Vec<Option<usize>> = parts
        .iter()
        .map(|p| tape.slot_of(p).filter(|_| tape.tracks(p)))
        .collect();
    let c_slot = tape.slot_of(coeffs).filter(|_| tape.tracks(coeffs));
    if c_slot.is_some() || part_slots.iter().any(|s| s.is_some()) {
        let parts_cap: Vec<Tensor<S>> = parts.iter().map(|p| p.detached()).collect();
        let coeffs_cap = coeffs.detached();
        tape.record(&mut out, move |g, acc| {
            for (k, slot) in part_slots.iter().enumerate() {
                if let Some(slot) = slot {
                    let cv = coeffs_cap.data()[k];
                    acc.accumulate(*slot, |d| {
                        for (dv, &gv) in d.iter_mut().zip(g) {
                            *dv += cv * gv;
                        }
                    });
                }
            }
            if let Some(slot) = c_slot {
                acc.accumulate(slot, |d| {
                    for (k, p) in parts_cap.iter().enumerate() {
                        let mut dot = S::zero();
                        for (&gv, &pv) in g.iter().zip(p.data()) {
                            dot += gv * pv;
                        }
                        d[k] += dot;
                    }
                });
            }
        });
    }
    Ok(out)
}
