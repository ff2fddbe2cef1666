//! 2-D convolution over NCHW tensors with square kernels, zero padding, and
//! optional bias. Single-threaded with a fixed per-element accumulation order,
//! so results never depend on scheduling.

use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

#[derive(Clone)]
pub struct ConvSpec<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Option<Tensor<S>>,
    pub stride: usize,
    pub padding: usize,
}

impl<S: Scalar> ConvSpec<S> {
    pub fn new(
        weight: Tensor<S>,
        bias: Option<Tensor<S>>,
        stride: usize,
        padding: usize,
    ) -> Result<ConvSpec<S>> {
        let ws = weight.shape();
        if ws.h != ws.w {
            return Err(Error::Config(format!(
                "conv kernel must be square, got {}x{}",
                ws.h, ws.w
            )));
        }
        if ws.h == 0 || ws.n == 0 || ws.c == 0 {
            return Err(Error::Config(format!("degenerate conv weight shape {ws}")));
        }
        if stride == 0 {
            return Err(Error::Config("conv stride must be >= 1".to_string()));
        }
        if let Some(b) = &bias {
            let bs = b.shape();
            if bs != Shape::new(1, ws.n, 1, 1) {
                return Err(Error::Shape {
                    op: "conv2d",
                    detail: format!(
                        "bias must be [1,{},1,1] to match out_channels, got {bs}",
                        ws.n
                    ),
                });
            }
        }
        Ok(ConvSpec { weight, bias, stride, padding })
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape().h
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        if input.numel() == 0 {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!("empty input {input}"),
            });
        }
        if input.c != self.in_channels() {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!(
                    "channel axis: input has {} channels, weight expects {}",
                    input.c,
                    self.in_channels()
                ),
            });
        }
        let k = self.kernel();
        let (oh, ow) = (
            out_extent(input.h, k, self.stride, self.padding),
            out_extent(input.w, k, self.stride, self.padding),
        );
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(Shape::new(input.n, self.out_channels(), oh, ow)),
            _ => Err(Error::Shape {
                op: "conv2d",
                detail: format!(
                    "non-positive output extent for input {input}, kernel {k}, stride {}, padding {}",
                    self.stride, self.padding
                ),
            }),
        }
    }
}

pub(crate) fn out_extent(input: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// out[n,oc,oh,ow] = sum_{ic,kh,kw} w[oc,ic,kh,kw] * x[n,ic,oh*s-p+kh,ow*s-p+kw],
/// out-of-range taps read zero. Accumulation order per output element is fixed
/// (ic-major, then kh, kw).
pub fn conv2d<S: Scalar>(
    tape: &mut Tape<S>,
    x: &Tensor<S>,
    spec: &ConvSpec<S>,
) -> Result<Tensor<S>> {
    let os = spec.out_shape(x.shape())?;
    let mut out = vec![S::zero(); os.numel()];
    forward_kernel(
        x.data(),
        x.shape(),
        spec.weight.data(),
        spec.weight.shape(),
        spec.stride,
        spec.padding,
        &mut out,
        os,
    );
    if let Some(b) = &spec.bias {
        let plane = os.h * os.w;
        for n in 0..os.n {
            for oc in 0..os.c {
                let bv = b.data()[oc];
                let base = (n * os.c + oc) * plane;
                for v in &mut out[base..base + plane] {
                    *v += bv;
                }
            }
        }
    }
    let mut out_t = Tensor::from_vec(os, out)?;

    let x_slot = if tape.tracks(x) { tape.slot_of(x) } else { None };
    let w_slot = if tape.tracks(&spec.weight) { tape.slot_of(&spec.weight) } else { None };
    let b_slot = spec
        .bias
        .as_ref()
        .and_then(|b| if tape.tracks(b) { tape.slot_of(b) } else { None });
    if x_slot.is_some() || w_slot.is_some() || b_slot.is_some() {
        let x_cap = x.detached();
        let w_cap = spec.weight.detached();
        let (stride, padding) = (spec.stride, spec.padding);
        tape.record(&mut out_t, move |g, acc| {
            if let Some(slot) = w_slot {
                acc.accumulate(slot, |dw| {
                    backward_dw(g, os, x_cap.data(), x_cap.shape(), w_cap.shape(), stride, padding, dw);
                });
            }
            if let Some(slot) = x_slot {
                acc.accumulate(slot, |dx| {
                    backward_dx(g, os, w_cap.data(), w_cap.shape(), x_cap.shape(), stride, padding, dx);
                });
            }
            if let Some(slot) = b_slot {
                acc.accumulate(slot, |db| {
                    let plane = os.h * os.w;
                    for n in 0..os.n {
                        for oc in 0..os.c {
                            let base = (n * os.c + oc) * plane;
                            let mut s = S::zero();
                            for &gv in &g[base..base + plane] {
                                s += gv;
                            }
                            db[oc] += s;
                        }
                    }
                });
            }
        });
    }
    Ok(out_t)
}

/// Valid output range [lo, hi) for one kernel tap: positions where the tap
/// lands inside the input.
#[inline]
fn tap_range(extent_in: usize, extent_out: usize, k_off: usize, stride: usize, padding: usize) -> (usize, usize) {
    // in_pos = out_pos * stride + k_off - padding must lie in [0, extent_in)
    let lo = padding.saturating_sub(k_off).div_ceil(stride);
    let hi_excl = extent_in + padding;
    let hi = if hi_excl > k_off {
        (((hi_excl - k_off - 1) / stride) + 1).min(extent_out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn forward_kernel<S: Scalar>(
    x: &[S],
    xs: Shape,
    w: &[S],
    ws: Shape,
    stride: usize,
    padding: usize,
    out: &mut [S],
    os: Shape,
) {
    let k = ws.h;
    let (ih_stride, iw_stride) = (xs.w, 1);
    for n in 0..os.n {
        for oc in 0..os.c {
            let out_plane = &mut out[(n * os.c + oc) * os.h * os.w..][..os.h * os.w];
            for ic in 0..xs.c {
                let x_plane = &x[(n * xs.c + ic) * xs.h * xs.w..][..xs.h * xs.w];
                for kh in 0..k {
                    let (oh_lo, oh_hi) = tap_range(xs.h, os.h, kh, stride, padding);
                    for kw in 0..k {
                        let wv = w[((oc * ws.c + ic) * k + kh) * k + kw];
                        let (ow_lo, ow_hi) = tap_range(xs.w, os.w, kw, stride, padding);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ih = oh * stride + kh - padding;
                            let orow = &mut out_plane[oh * os.w + ow_lo..oh * os.w + ow_hi];
                            if stride == 1 {
                                let ibase = ih * ih_stride + (ow_lo + kw - padding);
                                let xrow = &x_plane[ibase..ibase + (ow_hi - ow_lo)];
                                for (o, &v) in orow.iter_mut().zip(xrow) {
                                    *o += wv * v;
                                }
                            } else {
                                for (j, o) in orow.iter_mut().enumerate() {
                                    let iw = (ow_lo + j) * stride + kw - padding;
                                    *o += wv * x_plane[ih * ih_stride + iw * iw_stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// dx[n,ic,ih,iw] += sum w[oc,ic,kh,kw] * g[n,oc,oh,ow] over taps that touch (ih,iw).
#[allow(clippy::too_many_arguments)]
fn backward_dx<S: Scalar>(
    g: &[S],
    os: Shape,
    w: &[S],
    ws: Shape,
    xs: Shape,
    stride: usize,
    padding: usize,
    dx: &mut [S],
) {
    let k = ws.h;
    for n in 0..os.n {
        for oc in 0..os.c {
            let g_plane = &g[(n * os.c + oc) * os.h * os.w..][..os.h * os.w];
            for ic in 0..xs.c {
                let dx_plane = &mut dx[(n * xs.c + ic) * xs.h * xs.w..][..xs.h * xs.w];
                for kh in 0..k {
                    let (oh_lo, oh_hi) = tap_range(xs.h, os.h, kh, stride, padding);
                    for kw in 0..k {
                        let wv = w[((oc * ws.c + ic) * k + kh) * k + kw];
                        let (ow_lo, ow_hi) = tap_range(xs.w, os.w, kw, stride, padding);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ih = oh * stride + kh - padding;
                            let grow = &g_plane[oh * os.w + ow_lo..oh * os.w + ow_hi];
                            if stride == 1 {
                                let ibase = ih * xs.w + (ow_lo + kw - padding);
                                let drow = &mut dx_plane[ibase..ibase + (ow_hi - ow_lo)];
                                for (d, &gv) in drow.iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            } else {
                                for (j, &gv) in grow.iter().enumerate() {
                                    let iw = (ow_lo + j) * stride + kw - padding;
                                    dx_plane[ih * xs.w + iw] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// dw[oc,ic,kh,kw] += sum over n, oh, ow of g[n,oc,oh,ow] * x[n,ic,ih,iw].
/// n is the outermost loop so each weight element accumulates in a fixed order.
#[allow(clippy::too_many_arguments)]
fn backward_dw<S: Scalar>(
    g: &[S],
    os: Shape,
    x: &[S],
    xs: Shape,
    ws: Shape,
    stride: usize,
    padding: usize,
    dw: &mut [S],
) {
    let k = ws.h;
    for n in 0..os.n {
        for oc in 0..os.c {
            let g_plane = &g[(n * os.c + oc) * os.h * os.w..][..os.h * os.w];
            for ic in 0..xs.c {
                let x_plane = &x[(n * xs.c + ic) * xs.h * xs.w..][..xs.h * xs.w];
                for kh in 0..k {
                    let (oh_lo, oh_hi) = tap_range(xs.h, os.h, kh, stride, padding);
                    for kw in 0..k {
                        let (ow_lo, ow_hi) = tap_range(xs.w, os.w, kw, stride, padding);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        let mut s = S::zero();
                        for oh in oh_lo..oh_hi {
                            let ih = oh * stride + kh - padding;
                            let grow = &g_plane[oh * os.w + ow_lo..oh * os.w + ow_hi];
                            if stride == 1 {
                                let ibase = ih * xs.w + (ow_lo + kw - padding);
                                let xrow = &x_plane[ibase..ibase + (ow_hi - ow_lo)];
                                let mut dot = S::zero();
                                for (&gv, &xv) in grow.iter().zip(xrow) {
                                    dot += gv * xv;
                                }
                                s += dot;
                            } else {
                                for (j, &gv) in grow.iter().enumerate() {
                                    let iw = (ow_lo + j) * stride + kw - padding;
                                    s += gv * x_plane[ih * xs.w + iw];
                                }
                            }
                        }
                        dw[((oc * ws.c + ic) * k + kh) * k + kw] += s;
                    }
                }
            }
        }
    }
}
