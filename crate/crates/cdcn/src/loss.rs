//! Depth-map losses. Overall loss is plain MSE plus a contrastive term that
//! compares local difference maps, so the regressor is penalized for getting
//! relative depth structure wrong even where absolute values are close.

use crate::ops::conv::{conv2d, ConvSpec};
use crate::ops::elementwise::{add, hadamard, mean_all, scale_const, sub};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

/// The eight 3x3 contrast kernels: -1 at the center, +1 at one neighbor, zero
/// elsewhere. Convolving with any of them annihilates constant maps.
pub struct ContrastKernelBank<S: Scalar> {
    specs: Vec<ConvSpec<S>>,
}

impl<S: Scalar> ContrastKernelBank<S> {
    pub fn new() -> ContrastKernelBank<S> {
        let mut specs = Vec::with_capacity(8);
        for pos in 0..9 {
            if pos == 4 {
                continue; // center
            }
            let mut k = vec![S::zero(); 9];
            k[4] = -S::one();
            k[pos] = S::one();
            let w = Tensor::from_vec(Shape::new(1, 1, 3, 3), k).expect("9 elements");
            specs.push(ConvSpec::new(w, None, 1, 0).expect("valid 3x3 kernel"));
        }
        ContrastKernelBank { specs }
    }

    pub fn kernels(&self) -> impl Iterator<Item = &Tensor<S>> {
        self.specs.iter().map(|s| &s.weight)
    }
}

impl<S: Scalar> Default for ContrastKernelBank<S> {
    fn default() -> Self {
        ContrastKernelBank::new()
    }
}

fn check_depth_pair<S: Scalar>(
    op: &'static str,
    pred: &Tensor<S>,
    target: &Tensor<S>,
) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op,
            detail: format!(
                "prediction {} and target {} must match",
                pred.shape(),
                target.shape()
            ),
        });
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn loss_mse<S: Scalar>(
    tape: &mut Tape<S>,
    pred: &Tensor<S>,
    target: &Tensor<S>,
) -> Result<Tensor<S>> {
    check_depth_pair("loss_mse", pred, target)?;
    let diff = sub(tape, pred, target)?;
    let sq = hadamard(tape, &diff, &diff)?;
    Ok(mean_all(tape, &sq))
}

/// Contrastive depth loss: (1/8) * sum_i mean((K_i * pred - K_i * target)^2)
/// with valid-region convolutions (padding 0). The difference is taken first;
/// the kernels are linear so the two forms agree.
pub fn loss_cdl<S: Scalar>(
    tape: &mut Tape<S>,
    pred: &Tensor<S>,
    target: &Tensor<S>,
    bank: &ContrastKernelBank<S>,
) -> Result<Tensor<S>> {
    check_depth_pair("loss_cdl", pred, target)?;
    let s = pred.shape();
    if s.c != 1 {
        return Err(Error::Shape {
            op: "loss_cdl",
            detail: format!("channel axis: depth maps must be single-channel, got {}", s.c),
        });
    }
    if s.h < 3 || s.w < 3 {
        return Err(Error::Shape {
            op: "loss_cdl",
            detail: format!("spatial extent must be >= 3 for 3x3 contrast kernels, got {s}"),
        });
    }
    let diff = sub(tape, pred, target)?;
    let mut total: Option<Tensor<S>> = None;
    for spec in &bank.specs {
        let contrast = conv2d(tape, &diff, spec)?;
        let sq = hadamard(tape, &contrast, &contrast)?;
        let m = mean_all(tape, &sq);
        total = Some(match total {
            None => m,
            Some(t) => add(tape, &t, &m)?,
        });
    }
    Ok(scale_const(tape, &total.expect("eight kernels"), S::from_f64(1.0 / 8.0)))
}

/// Training objective: MSE + contrastive depth loss.
pub fn loss_overall<S: Scalar>(
    tape: &mut Tape<S>,
    pred: &Tensor<S>,
    target: &Tensor<S>,
    bank: &ContrastKernelBank<S>,
) -> Result<Tensor<S>> {
    let mse = loss_mse(tape, pred, target)?;
    let cdl = loss_cdl(tape, pred, target, bank)?;
    add(tape, &mse, &cdl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn bank_has_eight_zero_sum_kernels() {
        let bank = ContrastKernelBank::<f64>::new();
        let kernels: Vec<_> = bank.kernels().collect();
        assert_eq!(kernels.len(), 8);
        for k in &kernels {
            let sum: f64 = k.data().iter().sum();
            assert_eq!(sum, 0.0, "each contrast kernel must annihilate constants");
            assert_eq!(k.data()[4], -1.0, "center tap is -1");
            let ones = k.data().iter().filter(|&&v| v == 1.0).count();
            assert_eq!(ones, 1, "exactly one neighbor tap is +1");
        }
    }

    #[test]
    fn mse_of_identical_maps_is_zero() {
        let mut tape = Tape::inference();
        let mut rng = SplitMix64::new(3);
        let a = Tensor::<f64>::uniform(Shape::new(2, 1, 4, 4), 0.0, 1.0, &mut rng);
        let l = loss_mse(&mut tape, &a, &a).unwrap();
        assert_eq!(l.scalar(), Some(0.0));
    }

    #[test]
    fn mse_hand_value() {
        let mut tape = Tape::inference();
        let p = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 3.0]).unwrap();
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 0.0]).unwrap();
        let l = loss_mse(&mut tape, &p, &t).unwrap();
        assert_eq!(l.scalar(), Some(5.0), "(1 + 9) / 2");
    }

    #[test]
    fn cdl_ignores_constant_offsets() {
        let mut tape = Tape::inference();
        let mut rng = SplitMix64::new(8);
        let bank = ContrastKernelBank::new();
        let t = Tensor::<f64>::uniform(Shape::new(1, 1, 5, 5), 0.0, 1.0, &mut rng);
        let shifted = Tensor::from_fn(t.shape(), |i| t.data()[i] + 0.37);
        let l = loss_cdl(&mut tape, &shifted, &t, &bank).unwrap();
        assert!(
            l.scalar().unwrap().abs() < 1e-25,
            "a constant offset has no depth contrast: {l:?}"
        );
        // but MSE sees it
        let m = loss_mse(&mut tape, &shifted, &t).unwrap();
        assert!((m.scalar().unwrap() - 0.37 * 0.37).abs() < 1e-12);
    }

    #[test]
    fn cdl_penalizes_structure_differences() {
        let mut tape = Tape::inference();
        let bank = ContrastKernelBank::new();
        let flat = Tensor::<f64>::zeros(Shape::new(1, 1, 3, 3));
        let mut bumpy = vec![0.0; 9];
        bumpy[4] = 1.0;
        let bumpy = Tensor::from_vec(Shape::new(1, 1, 3, 3), bumpy).unwrap();
        let l = loss_cdl(&mut tape, &bumpy, &flat, &bank).unwrap();
        // valid region is 1x1, centered at the bump: each kernel sees
        // (neighbor - center) = (0 - 1) = -1, squared = 1, mean = 1, avg over 8 = 1.
        assert!((l.scalar().unwrap() - 1.0).abs() < 1e-12, "got {:?}", l.scalar());
    }

    #[test]
    fn cdl_rejects_tiny_maps() {
        let mut tape = Tape::inference();
        let bank = ContrastKernelBank::<f64>::new();
        let a = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let err = loss_cdl(&mut tape, &a, &a, &bank).unwrap_err();
        assert!(err.to_string().contains(">= 3"), "got {err}");
    }

    #[test]
    fn overall_is_sum_of_parts() {
        let mut tape = Tape::inference();
        let mut rng = SplitMix64::new(19);
        let bank = ContrastKernelBank::new();
        let p = Tensor::<f64>::uniform(Shape::new(2, 1, 4, 4), 0.0, 1.0, &mut rng);
        let t = Tensor::<f64>::uniform(Shape::new(2, 1, 4, 4), 0.0, 1.0, &mut rng);
        let mse = loss_mse(&mut tape, &p, &t).unwrap().scalar().unwrap();
        let cdl = loss_cdl(&mut tape, &p, &t, &bank).unwrap().scalar().unwrap();
        let all = loss_overall(&mut tape, &p, &t, &bank).unwrap().scalar().unwrap();
        assert!((all - (mse + cdl)).abs() < 1e-12);
        assert!(mse > 0.0 && cdl > 0.0);
    }
}
