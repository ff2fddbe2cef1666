//! Candidate operations for the cell search. Every operation maps a feature
//! map to one of the same shape, so any mixture of them is well defined. The
//! conv entries keep the block convention (conv + batch norm + ReLU).

use crate::layers::{CdcBnRelu, NamedTensorMut, ThetaCfg};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Identity of a candidate operation. `CdcDouble` stacks two convolutions,
/// moving the channel count to `round(C * ratio)` and back to C.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    None,
    Skip,
    CdcSingle,
    CdcDouble { ratio: f64 },
}

impl OpKind {
    pub fn name(&self) -> String {
        match self {
            OpKind::None => "none".to_string(),
            OpKind::Skip => "skip_connect".to_string(),
            OpKind::CdcSingle => "cdc_single".to_string(),
            OpKind::CdcDouble { ratio } => format!("cdc_2_{ratio}"),
        }
    }

    pub fn parse(name: &str) -> Result<OpKind> {
        match name {
            "none" => Ok(OpKind::None),
            "skip_connect" => Ok(OpKind::Skip),
            "cdc_single" => Ok(OpKind::CdcSingle),
            other => {
                if let Some(tail) = other.strip_prefix("cdc_2_") {
                    let ratio: f64 = tail
                        .parse()
                        .map_err(|_| Error::Config(format!("bad channel ratio in operation name {other:?}")))?;
                    if !ratio.is_finite() || ratio <= 0.0 {
                        return Err(Error::Config(format!(
                            "channel ratio must be positive and finite, got {ratio}"
                        )));
                    }
                    return Ok(OpKind::CdcDouble { ratio });
                }
                Err(Error::Config(format!("unknown operation name {other:?}")))
            }
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, OpKind::None)
    }
}

/// Ordered list of candidate operations shared by all edges.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCatalog {
    ops: Vec<OpKind>,
}

impl OpCatalog {
    /// The default eight-way catalog: the two structural ops, a single conv,
    /// and the two-conv family over channel ratios 0.5 to 8.
    pub fn standard() -> OpCatalog {
        OpCatalog {
            ops: vec![
                OpKind::None,
                OpKind::Skip,
                OpKind::CdcSingle,
                OpKind::CdcDouble { ratio: 0.5 },
                OpKind::CdcDouble { ratio: 1.0 },
                OpKind::CdcDouble { ratio: 2.0 },
                OpKind::CdcDouble { ratio: 4.0 },
                OpKind::CdcDouble { ratio: 8.0 },
            ],
        }
    }

    /// A caller-chosen catalog. `none` must be present alongside at least
    /// one real op so relaxation and genotype derivation keep their
    /// semantics.
    pub fn custom(ops: Vec<OpKind>) -> Result<OpCatalog> {
        if ops.len() < 2 {
            return Err(Error::Config(format!(
                "catalog needs none plus at least one real op, got {} ops",
                ops.len()
            )));
        }
        if !ops.contains(&OpKind::None) {
            return Err(Error::Config("catalog must contain the none op".to_string()));
        }
        for (i, a) in ops.iter().enumerate() {
            if ops[..i].contains(a) {
                return Err(Error::Config(format!("duplicate catalog entry {}", a.name())));
            }
        }
        Ok(OpCatalog { ops })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn ops(&self) -> &[OpKind] {
        &self.ops
    }

    pub fn op(&self, i: usize) -> &OpKind {
        &self.ops[i]
    }

    pub fn index_of(&self, kind: &OpKind) -> Option<usize> {
        self.ops.iter().position(|o| o == kind)
    }

    pub fn none_index(&self) -> usize {
        self.index_of(&OpKind::None).expect("catalog always holds none")
    }
}

/// One concrete, weight-carrying instance of a catalog operation for a
/// specific channel width.
#[derive(Clone)]
pub enum OpInstance<S: Scalar> {
    None,
    Skip,
    Cdc(Vec<CdcBnRelu<S>>),
}

impl<S: Scalar> OpInstance<S> {
    pub fn build(
        kind: &OpKind,
        channels: usize,
        theta: ThetaCfg,
        rng: &mut SplitMix64,
    ) -> Result<OpInstance<S>> {
        match kind {
            OpKind::None => Ok(OpInstance::None),
            OpKind::Skip => Ok(OpInstance::Skip),
            OpKind::CdcSingle => Ok(OpInstance::Cdc(vec![CdcBnRelu::new(
                channels, channels, 3, 1, theta, true, rng,
            )?])),
            OpKind::CdcDouble { ratio } => {
                let mid = ((channels as f64 * ratio).round() as usize).max(1);
                Ok(OpInstance::Cdc(vec![
                    CdcBnRelu::new(channels, mid, 3, 1, theta, true, rng)?,
                    CdcBnRelu::new(mid, channels, 3, 1, theta, true, rng)?,
                ]))
            }
        }
    }

    /// `none` contributes an all-zero map; `skip_connect` passes its input
    /// through; conv ops run their stack. All preserve the input shape.
    pub fn forward(&mut self, tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            OpInstance::None => Ok(Tensor::zeros(x.shape())),
            OpInstance::Skip => Ok(x.clone()),
            OpInstance::Cdc(stack) => {
                let mut f = x.clone();
                for layer in stack {
                    f = layer.forward(tape, &f)?;
                }
                Ok(f)
            }
        }
    }

    pub fn set_training(&mut self, training: bool) {
        if let OpInstance::Cdc(stack) = self {
            for layer in stack {
                layer.set_training(training);
            }
        }
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, S>>) {
        if let OpInstance::Cdc(stack) = self {
            for (i, layer) in stack.iter_mut().enumerate() {
                layer.tensors_mut(&format!("{prefix}.cdc{i}"), out);
            }
        }
    }
}
