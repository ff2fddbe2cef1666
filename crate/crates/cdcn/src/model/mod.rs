//! Depth regression models. `cdcn` is the fixed backbone, `cdcnpp` the
//! searched variant instantiated from a genotype, `mafm` the attention-based
//! multi-level fusion both can use. `Model` wraps the two networks behind one
//! train/infer surface so checkpoints and the command line need a single code
//! path.

pub mod cdcn;
pub mod cdcnpp;
pub mod mafm;

pub use cdcn::{build_cdcn, Cdcn, CdcnConfig, ChannelScale, ParamCounts};
pub use cdcnpp::{build_cdcnpp, CdcnPlusPlus, Fusion};
pub use mafm::Mafm;

use crate::layers::NamedTensorMut;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub enum Model<S: Scalar> {
    Cdcn(Cdcn<S>),
    CdcnPp(CdcnPlusPlus<S>),
}

impl<S: Scalar> Model<S> {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Cdcn(_) => "cdcn",
            Model::CdcnPp(_) => "cdcnpp",
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            Model::Cdcn(m) => m.config.input_size,
            Model::CdcnPp(m) => m.input_size,
        }
    }

    /// Edge length of the predicted depth map (input size over 8).
    pub fn depth_extent(&self) -> usize {
        self.input_size() / 8
    }

    pub fn forward(&mut self, tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            Model::Cdcn(m) => m.forward(tape, x),
            Model::CdcnPp(m) => m.forward(tape, x),
        }
    }

    pub fn set_training(&mut self, training: bool) {
        match self {
            Model::Cdcn(m) => m.set_training(training),
            Model::CdcnPp(m) => m.set_training(training),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_, S>> {
        match self {
            Model::Cdcn(m) => m.tensors_mut(),
            Model::CdcnPp(m) => m.tensors_mut(),
        }
    }

    pub fn param_counts(&mut self) -> ParamCounts {
        ParamCounts::tally(self.tensors_mut())
    }
}

/// Collapses a predicted depth batch [N, 1, H, W] to one liveness score per
/// sample, the mean of its depth map. Live faces regress toward real depth,
/// presented attacks toward zero, so a higher mean reads as more live.
pub fn depth_to_scores<S: Scalar>(pred: &Tensor<S>) -> Result<Vec<f64>> {
    let s = pred.shape();
    if s.c != 1 {
        return Err(Error::Shape {
            op: "depth_to_scores",
            detail: format!("expected a single-channel depth map, got {s}"),
        });
    }
    let plane = s.h * s.w;
    if plane == 0 {
        return Err(Error::Shape {
            op: "depth_to_scores",
            detail: format!("empty depth map {s}"),
        });
    }
    let data = pred.data();
    let mut scores = Vec::with_capacity(s.n);
    for n in 0..s.n {
        let mut acc = 0.0f64;
        for v in &data[n * plane..(n + 1) * plane] {
            acc += v.as_f64();
        }
        scores.push(acc / plane as f64);
    }
    Ok(scores)
}

/// Runs the model in inference mode over one image batch and returns the
/// per-sample mean-depth scores.
pub fn score_batch<S: Scalar>(model: &mut Model<S>, x: &Tensor<S>) -> Result<Vec<f64>> {
    model.set_training(false);
    let mut tape = Tape::inference();
    let pred = model.forward(&mut tape, x)?;
    depth_to_scores(&pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ThetaCfg;
    use crate::nas::catalog::OpKind;
    use crate::nas::genotype::{CellGenotype, Genotype, NodeChoice, SharingMode};
    use crate::nas::SearchPlan;
    use crate::rng::SplitMix64;
    use crate::tensor::Shape;

    #[test]
    fn mean_depth_scoring_matches_hand_sums() {
        let pred = Tensor::<f64>::from_vec(
            Shape::new(2, 1, 2, 2),
            vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        let scores = depth_to_scores(&pred).unwrap();
        assert_eq!(scores, vec![2.5, 0.25]);
    }

    #[test]
    fn multi_channel_maps_are_rejected() {
        let pred = Tensor::<f64>::zeros(Shape::new(1, 2, 2, 2));
        assert!(depth_to_scores(&pred).is_err());
    }

    #[test]
    fn wrapped_models_share_one_surface() {
        let cfg = CdcnConfig { input_size: 8, ..CdcnConfig::desk() };
        let mut model = Model::Cdcn(build_cdcn::<f64>(&cfg, 3).unwrap());
        assert_eq!(model.kind(), "cdcn");
        assert_eq!(model.depth_extent(), 1);
        let mut rng = SplitMix64::new(4);
        let x = Tensor::uniform(Shape::new(3, 3, 8, 8), 0.0, 1.0, &mut rng);
        let scores = score_batch(&mut model, &x).unwrap();
        assert_eq!(scores.len(), 3);
        assert!(scores.iter().all(|s| s.is_finite()));

        let cell = || CellGenotype {
            nodes: vec![NodeChoice { source: 0, op: OpKind::CdcSingle }],
            output: 1,
        };
        let g = Genotype {
            cells: vec![cell(), cell(), cell()],
            sharing: SharingMode::Shared,
            node_attention: false,
        };
        let plan = SearchPlan { stem: 2, pre: 2, entry: 3, cell: 3, head: 2 };
        let pp = CdcnPlusPlus::from_plan(&g, 8, plan, ThetaCfg::Fixed(0.7), Fusion::Chain, 5)
            .unwrap();
        let mut model = Model::CdcnPp(pp);
        assert_eq!(model.kind(), "cdcnpp");
        let scores = score_batch(&mut model, &x).unwrap();
        assert_eq!(scores.len(), 3);
        assert!(scores.iter().all(|s| s.is_finite()));
    }
}
