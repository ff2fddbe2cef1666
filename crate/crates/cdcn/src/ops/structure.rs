//! Channel concatenation / splitting and the center-tap sampler the
//! decomposed central difference path uses.

use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

use super::conv::out_extent;

/// Stacks tensors along the channel axis. All parts must agree on N, H, W.
pub fn concat_channels<S: Scalar>(tape: &mut Tape<S>, parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
    if parts.is_empty() {
        return Err(Error::Shape {
            op: "concat_channels",
            detail: "needs at least one part".to_string(),
        });
    }
    let first = parts[0].shape();
    let mut total_c = 0;
    for (i, p) in parts.iter().enumerate() {
        let s = p.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            let axis = if s.n != first.n {
                "batch"
            } else if s.h != first.h {
                "height"
            } else {
                "width"
            };
            return Err(Error::Shape {
                op: "concat_channels",
                detail: format!("{axis} axis of part {i} is {s}, expected to match {first}"),
            });
        }
        total_c += s.c;
    }
    let os = Shape::new(first.n, total_c, first.h, first.w);
    let plane = first.h * first.w;
    let mut out = vec![S::zero(); os.numel()];
    for n in 0..first.n {
        let mut c_off = 0;
        for p in parts {
            let pc = p.shape().c;
            let src = &p.data()[n * pc * plane..(n + 1) * pc * plane];
            let dst_base = (n * total_c + c_off) * plane;
            out[dst_base..dst_base + pc * plane].copy_from_slice(src);
            c_off += pc;
        }
    }
    let mut out_t = Tensor::from_vec(os, out)?;

    let slots: Vec<(Option<usize>, usize)> = parts
        .iter()
        .map(|p| (tape.slot_of(p).filter(|_| tape.tracks(p)), p.shape().c))
        .collect();
    if slots.iter().any(|(s, _)| s.is_some()) {
        tape.record(&mut out_t, move |g, acc| {
            for n in 0..os.n {
                let mut c_off = 0;
                for (slot, pc) in &slots {
                    let pc = *pc;
                    if let Some(slot) = slot {
                        let g_base = (n * total_c + c_off) * plane;
                        acc.accumulate(*slot, |d| {
                            let d_base = n * pc * plane;
                            for i in 0..pc * plane {
                                d[d_base + i] += g[g_base + i];
                            }
                        });
                    }
                    c_off += pc;
                }
            }
        });
    }
    Ok(out_t)
}

/// Inverse of `concat_channels`: cuts the channel axis into blocks of the
/// given sizes, which must sum to C.
pub fn split_channels<S: Scalar>(
    tape: &mut Tape<S>,
    x: &Tensor<S>,
    sizes: &[usize],
) -> Result<Vec<Tensor<S>>> {
    let xs = x.shape();
    let total: usize = sizes.iter().sum();
    if total != xs.c || sizes.iter().any(|&s| s == 0) {
        return Err(Error::Shape {
            op: "split_channels",
            detail: format!("channel axis: sizes {sizes:?} must be positive and sum to {}", xs.c),
        });
    }
    let plane = xs.h * xs.w;
    let x_slot = tape.slot_of(x).filter(|_| tape.tracks(x));
    let mut outs = Vec::with_capacity(sizes.len());
    let mut c_off = 0;
    for &sc in sizes {
        let os = Shape::new(xs.n, sc, xs.h, xs.w);
        let mut data = vec![S::zero(); os.numel()];
        for n in 0..xs.n {
            let src_base = (n * xs.c + c_off) * plane;
            let dst_base = n * sc * plane;
            data[dst_base..dst_base + sc * plane]
                .copy_from_slice(&x.data()[src_base..src_base + sc * plane]);
        }
        let mut out_t = Tensor::from_vec(os, data)?;
        if let Some(slot) = x_slot {
            let (xc, block_off) = (xs.c, c_off);
            tape.record(&mut out_t, move |g, acc| {
                acc.accumulate(slot, |dx| {
                    for n in 0..os.n {
                        let dst_base = (n * xc + block_off) * plane;
                        let g_base = n * sc * plane;
                        for i in 0..sc * plane {
                            dx[dst_base + i] += g[g_base + i];
                        }
                    }
                });
            });
        }
        outs.push(out_t);
        c_off += sc;
    }
    Ok(outs)
}

/// Samples the center tap of each convolution window: output position o maps
/// to input position o*stride - padding + (k-1)/2. Taps landing inside the
/// zero padding read zero. Kernel must be odd so the center exists.
pub fn center_crop<S: Scalar>(
    tape: &mut Tape<S>,
    x: &Tensor<S>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    if kernel % 2 == 0 || kernel == 0 {
        return Err(Error::Config(format!(
            "center_crop needs an odd kernel, got {kernel}"
        )));
    }
    if stride == 0 {
        return Err(Error::Config("center_crop stride must be >= 1".to_string()));
    }
    let xs = x.shape();
    let (oh, ow) = match (
        out_extent(xs.h, kernel, stride, padding),
        out_extent(xs.w, kernel, stride, padding),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Shape {
                op: "center_crop",
                detail: format!(
                    "non-positive output extent for input {xs}, kernel {kernel}, stride {stride}, padding {padding}"
                ),
            })
        }
    };
    let os = Shape::new(xs.n, xs.c, oh, ow);
    let ctr = (kernel - 1) / 2;
    let mut data = vec![S::zero(); os.numel()];
    // in_pos = out_pos*stride - padding + ctr
    for n in 0..xs.n {
        for c in 0..xs.c {
            let x_base = (n * xs.c + c) * xs.h * xs.w;
            let o_base = (n * os.c + c) * oh * ow;
            for oy in 0..oh {
                let iy = (oy * stride + ctr) as isize - padding as isize;
                if iy < 0 || iy >= xs.h as isize {
                    continue;
                }
                for ox in 0..ow {
                    let ix = (ox * stride + ctr) as isize - padding as isize;
                    if ix < 0 || ix >= xs.w as isize {
                        continue;
                    }
                    data[o_base + oy * ow + ox] =
                        x.data()[x_base + iy as usize * xs.w + ix as usize];
                }
            }
        }
    }
    let mut out_t = Tensor::from_vec(os, data)?;
    if tape.tracks(x) {
        let slot = tape.slot_of(x).unwrap();
        tape.record(&mut out_t, move |g, acc| {
            acc.accumulate(slot, |dx| {
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let x_base = (n * xs.c + c) * xs.h * xs.w;
                        let o_base = (n * os.c + c) * oh * ow;
                        for oy in 0..oh {
                            let iy = (oy * stride + ctr) as isize - padding as isize;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * stride + ctr) as isize - padding as isize;
                                if ix < 0 || ix >= xs.w as isize {
                                    continue;
                                }
                                dx[x_base + iy as usize * xs.w + ix as usize] +=
                                    g[o_base + oy * ow + ox];
                            }
                        }
                    }
                }
            });
        });
    }
    Ok(out_t)
}
