//! Multi-level feature fusion. The plain variant concatenates the low, mid and
//! high feature maps along channels; the attention variant first refines each
//! level with a spatial attention map (channel avg and max pooled, convolved
//! down to one channel, squashed through a sigmoid, multiplied back in).

use crate::layers::{NamedTensorMut, TensorRole};
use crate::ops::conv::{conv2d, ConvSpec};
use crate::ops::elementwise::{mul_attn, sigmoid};
use crate::ops::pool::{channel_avg, channel_max};
use crate::ops::structure::concat_channels;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Kernel sizes of the three attention branches, coarse level first.
pub const MAFM_KERNELS: [usize; 3] = [7, 5, 3];

/// Per-level spatial attention weights: one vanilla 2-to-1-channel convolution
/// per branch, no bias. Larger kernels watch the coarser levels.
#[derive(Clone)]
pub struct Mafm<S: Scalar> {
    pub branches: [ConvSpec<S>; 3],
}

impl<S: Scalar> Mafm<S> {
    pub fn new(rng: &mut SplitMix64) -> Mafm<S> {
        let branches = MAFM_KERNELS.map(|k| {
            let w = Tensor::kaiming_conv(1, 2, k, rng);
            ConvSpec::new(w, None, 1, k / 2).expect("odd attention kernel")
        });
        Mafm { branches }
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, S>>) {
        for (name, branch) in ["low", "mid", "high"].iter().zip(self.branches.iter_mut()) {
            out.push(NamedTensorMut::new(
                format!("{prefix}.{name}.weight"),
                TensorRole::Param,
                &mut branch.weight,
            ));
        }
    }
}

/// The spatial attention map for one level: sigmoid(conv([avg_c(x), max_c(x)])).
/// Values are strictly inside (0, 1).
pub fn attention_map<S: Scalar>(
    tape: &mut Tape<S>,
    x: &Tensor<S>,
    branch: &ConvSpec<S>,
) -> Result<Tensor<S>> {
    let avg = channel_avg(tape, x);
    let max = channel_max(tape, x);
    let stacked = concat_channels(tape, &[&avg, &max])?;
    let logits = conv2d(tape, &stacked, branch)?;
    Ok(sigmoid(tape, &logits))
}

fn check_equal_extents<S: Scalar>(
    op: &'static str,
    low: &Tensor<S>,
    mid: &Tensor<S>,
    high: &Tensor<S>,
) -> Result<()> {
    let (a, b, c) = (low.shape(), mid.shape(), high.shape());
    if a.n != b.n || a.n != c.n || a.h != b.h || a.h != c.h || a.w != b.w || a.w != c.w {
        return Err(Error::Shape {
            op,
            detail: format!("levels must share batch and spatial extents, got {a}, {b}, {c}"),
        });
    }
    Ok(())
}

/// Channel concatenation of the three levels (low block first).
pub fn multi_level_fuse<S: Scalar>(
    tape: &mut Tape<S>,
    low: &Tensor<S>,
    mid: &Tensor<S>,
    high: &Tensor<S>,
) -> Result<Tensor<S>> {
    check_equal_extents("multi_level_fuse", low, mid, high)?;
    concat_channels(tape, &[low, mid, high])
}

/// Attention-refined fusion: each level is multiplied by its own spatial
/// attention map before the concatenation.
pub fn mafm_forward<S: Scalar>(
    tape: &mut Tape<S>,
    mafm: &Mafm<S>,
    low: &Tensor<S>,
    mid: &Tensor<S>,
    high: &Tensor<S>,
) -> Result<Tensor<S>> {
    check_equal_extents("mafm_forward", low, mid, high)?;
    let mut refined = Vec::with_capacity(3);
    for (x, branch) in [low, mid, high].into_iter().zip(mafm.branches.iter()) {
        let attn = attention_map(tape, x, branch)?;
        refined.push(mul_attn(tape, x, &attn)?);
    }
    concat_channels(tape, &[&refined[0], &refined[1], &refined[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn levels(rng: &mut SplitMix64) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        (
            Tensor::uniform(Shape::new(2, 3, 4, 4), -1.0, 1.0, rng),
            Tensor::uniform(Shape::new(2, 5, 4, 4), -1.0, 1.0, rng),
            Tensor::uniform(Shape::new(2, 2, 4, 4), -1.0, 1.0, rng),
        )
    }

    #[test]
    fn fuse_concatenates_channels_in_order() {
        let mut rng = SplitMix64::new(11);
        let (low, mid, high) = levels(&mut rng);
        let mut tape = Tape::inference();
        let fused = multi_level_fuse(&mut tape, &low, &mid, &high).unwrap();
        assert_eq!(fused.shape(), Shape::new(2, 10, 4, 4));
        let swapped = multi_level_fuse(&mut tape, &mid, &low, &high).unwrap();
        // first block of the swapped result is mid's data
        assert_eq!(&swapped.data()[..5 * 16], &mid.data()[..5 * 16]);
        assert_eq!(&fused.data()[..3 * 16], &low.data()[..3 * 16]);
    }

    #[test]
    fn fuse_rejects_mismatched_extents() {
        let mut tape = Tape::inference();
        let a = Tensor::<f64>::zeros(Shape::new(1, 2, 4, 4));
        let b = Tensor::<f64>::zeros(Shape::new(1, 2, 2, 2));
        let err = multi_level_fuse(&mut tape, &a, &b, &a).unwrap_err();
        assert!(err.to_string().contains("spatial"), "got {err}");
    }

    #[test]
    fn attention_values_stay_inside_unit_interval() {
        let mut rng = SplitMix64::new(12);
        let (low, mid, high) = levels(&mut rng);
        let mafm = Mafm::new(&mut rng);
        let mut tape = Tape::inference();
        for (x, branch) in [&low, &mid, &high].iter().zip(mafm.branches.iter()) {
            let attn = attention_map(&mut tape, x, branch).unwrap();
            assert_eq!(attn.shape().c, 1);
            for &v in attn.data() {
                assert!(v > 0.0 && v < 1.0, "attention value {v} escaped (0,1)");
            }
        }
    }

    #[test]
    fn zero_weights_halve_the_plain_fusion() {
        let mut rng = SplitMix64::new(13);
        let (low, mid, high) = levels(&mut rng);
        let mut mafm = Mafm::new(&mut rng);
        for b in &mut mafm.branches {
            let k = b.weight.shape();
            b.weight = Tensor::zeros(k);
        }
        let mut tape = Tape::inference();
        let refined = mafm_forward(&mut tape, &mafm, &low, &mid, &high).unwrap();
        let plain = multi_level_fuse(&mut tape, &low, &mid, &high).unwrap();
        for (r, p) in refined.data().iter().zip(plain.data()) {
            assert!(
                (r - 0.5 * p).abs() < 1e-15,
                "zero logits give sigma(0) = 0.5 everywhere"
            );
        }
    }

    #[test]
    fn branch_kernels_follow_the_coarse_to_fine_plan() {
        let mut rng = SplitMix64::new(14);
        let mafm = Mafm::<f64>::new(&mut rng);
        let ks: Vec<usize> = mafm.branches.iter().map(|b| b.kernel()).collect();
        assert_eq!(ks, vec![7, 5, 3]);
        for b in &mafm.branches {
            assert_eq!(b.padding, b.kernel() / 2, "extent-preserving padding");
            assert!(b.bias.is_none());
        }
    }
}
