//! The standard building block shared by every network in the crate: a
//! central-difference convolution followed by batch norm and an optional ReLU.
//! Also home to the named-tensor traversal that checkpointing, watching and
//! optimizer code use to reach every persistent tensor in a model.

use serde::{Deserialize, Serialize};

use crate::cdc::{cdc_forward_decomposed, CdcLayer, ThetaMode};
use crate::ops::batchnorm::{batchnorm, BatchNormSpec};
use crate::ops::elementwise::relu;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{Shape, Tensor};
use crate::Result;

/// Serializable description of how a layer's theta is configured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ThetaCfg {
    /// Constant contribution factor in [0, 1].
    Fixed(f64),
    /// Learnable theta, value is the initial effective theta in (0, 1).
    Adaptive(f64),
}

impl ThetaCfg {
    pub fn initial_effective(&self) -> f64 {
        match self {
            ThetaCfg::Fixed(t) | ThetaCfg::Adaptive(t) => *t,
        }
    }
}

/// Whether a tensor is updated by the optimizer or only by forward passes
/// (batch-norm running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorRole {
    Param,
    State,
}

/// A named handle on one persistent tensor of a model.
pub struct NamedTensorMut<'a, S: Scalar> {
    pub name: String,
    pub role: TensorRole,
    pub tensor: &'a mut Tensor<S>,
}

impl<'a, S: Scalar> NamedTensorMut<'a, S> {
    pub fn new(name: String, role: TensorRole, tensor: &'a mut Tensor<S>) -> Self {
        NamedTensorMut { name, role, tensor }
    }
}

/// Names the tensors of a bare convolution layer (weight plus learnable theta
/// if present).
pub fn cdc_tensors_mut<'a, S: Scalar>(
    prefix: &str,
    layer: &'a mut CdcLayer<S>,
    out: &mut Vec<NamedTensorMut<'a, S>>,
) {
    out.push(NamedTensorMut::new(
        format!("{prefix}.weight"),
        TensorRole::Param,
        &mut layer.conv.weight,
    ));
    if let Some(b) = layer.conv.bias.as_mut() {
        out.push(NamedTensorMut::new(format!("{prefix}.bias"), TensorRole::Param, b));
    }
    if let ThetaMode::Adaptive { pre_theta } = &mut layer.theta {
        out.push(NamedTensorMut::new(
            format!("{prefix}.pre_theta"),
            TensorRole::Param,
            pre_theta,
        ));
    }
}

/// Central-difference conv + batch norm + optional ReLU, the repeating unit of
/// the depth networks. Convolutions carry no bias; the batch-norm shift plays
/// that role.
#[derive(Clone)]
pub struct CdcBnRelu<S: Scalar> {
    pub cdc: CdcLayer<S>,
    pub bn: BatchNormSpec<S>,
    pub relu: bool,
}

impl<S: Scalar> CdcBnRelu<S> {
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        padding: usize,
        theta: ThetaCfg,
        relu: bool,
        rng: &mut SplitMix64,
    ) -> Result<CdcBnRelu<S>> {
        let weight = Tensor::kaiming_conv(out_c, in_c, kernel, rng);
        let cdc = match theta {
            ThetaCfg::Fixed(t) => CdcLayer::new_fixed(weight, None, 1, padding, t)?,
            ThetaCfg::Adaptive(init) => CdcLayer::new_adaptive(weight, None, 1, padding, init)?,
        };
        Ok(CdcBnRelu { cdc, bn: BatchNormSpec::new(out_c), relu })
    }

    pub fn forward(&mut self, tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = cdc_forward_decomposed(tape, x, &self.cdc)?;
        let y = batchnorm(tape, &y, &mut self.bn)?;
        if self.relu {
            Ok(relu(tape, &y))
        } else {
            Ok(y)
        }
    }

    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        self.cdc.out_shape(input)
    }

    pub fn set_training(&mut self, training: bool) {
        self.bn.training = training;
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, S>>) {
        cdc_tensors_mut(prefix, &mut self.cdc, out);
        out.push(NamedTensorMut::new(
            format!("{prefix}.bn.scale"),
            TensorRole::Param,
            &mut self.bn.scale,
        ));
        out.push(NamedTensorMut::new(
            format!("{prefix}.bn.shift"),
            TensorRole::Param,
            &mut self.bn.shift,
        ));
        out.push(NamedTensorMut::new(
            format!("{prefix}.bn.running_mean"),
            TensorRole::State,
            &mut self.bn.running_mean,
        ));
        out.push(NamedTensorMut::new(
            format!("{prefix}.bn.running_var"),
            TensorRole::State,
            &mut self.bn.running_var,
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_shapes_and_roles() {
        let mut rng = SplitMix64::new(5);
        let mut block =
            CdcBnRelu::<f64>::new(3, 8, 3, 1, ThetaCfg::Fixed(0.7), true, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = Tensor::uniform(Shape::new(2, 3, 6, 6), -1.0, 1.0, &mut rng);
        let y = block.forward(&mut tape, &x).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 8, 6, 6), "3x3 pad 1 preserves extent");
        assert!(y.data().iter().all(|&v| v >= 0.0), "relu output is non-negative");

        let mut named = Vec::new();
        block.tensors_mut("stem", &mut named);
        let names: Vec<&str> = named.iter().map(|n| n.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "stem.weight",
                "stem.bn.scale",
                "stem.bn.shift",
                "stem.bn.running_mean",
                "stem.bn.running_var"
            ]
        );
        let params = named.iter().filter(|n| n.role == TensorRole::Param).count();
        assert_eq!(params, 3, "weight, bn scale, bn shift");
    }

    #[test]
    fn adaptive_theta_exposes_pre_theta_param() {
        let mut rng = SplitMix64::new(6);
        let mut block =
            CdcBnRelu::<f64>::new(2, 2, 3, 1, ThetaCfg::Adaptive(0.7), false, &mut rng).unwrap();
        let mut named = Vec::new();
        block.tensors_mut("b", &mut named);
        let pre = named.iter().find(|n| n.name == "b.pre_theta").expect("pre_theta listed");
        assert_eq!(pre.role, TensorRole::Param);
        assert!((block.cdc.theta.effective() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn training_flag_reaches_batch_norm() {
        let mut rng = SplitMix64::new(7);
        let mut block =
            CdcBnRelu::<f64>::new(2, 4, 3, 1, ThetaCfg::Fixed(0.0), true, &mut rng).unwrap();
        assert!(block.bn.training);
        block.set_training(false);
        assert!(!block.bn.training);
    }

    #[test]
    fn theta_cfg_serializes_round_trip() {
        for cfg in [ThetaCfg::Fixed(0.7), ThetaCfg::Adaptive(0.5)] {
            let text = serde_json::to_string(&cfg).unwrap();
            let back: ThetaCfg = serde_json::from_str(&text).unwrap();
            assert_eq!(back, cfg);
        }
    }
}
