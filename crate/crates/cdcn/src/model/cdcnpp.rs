//! The searched depth network: a stem/pre/entry conv chain, three discrete
//! cells instantiated from a genotype with a max pool after each, and a head
//! down to one depth channel. The three pooled cell outputs can be fused by
//! attention, by plain concatenation, or ignored in favor of the last cell
//! (the chain layout the supernet itself uses).

use serde::{Deserialize, Serialize};

use crate::cdc::{cdc_forward_decomposed, CdcLayer};
use crate::layers::{cdc_tensors_mut, CdcBnRelu, NamedTensorMut, ThetaCfg};
use crate::model::cdcn::{CdcnConfig, ParamCounts};
use crate::model::mafm::{mafm_forward, multi_level_fuse, Mafm};
use crate::nas::catalog::OpInstance;
use crate::nas::genotype::Genotype;
use crate::nas::SearchPlan;
use crate::ops::pool::maxpool2x2;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// How the three cell outputs reach the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Head reads the last cell only; this is the supernet's own layout.
    Chain,
    /// Downsample all three taps to the depth resolution and concatenate.
    Concat,
    /// Like Concat, but each tap is refined by spatial attention first.
    Mafm,
}

impl Fusion {
    pub fn as_str(&self) -> &'static str {
        match self {
            Fusion::Chain => "chain",
            Fusion::Concat => "concat",
            Fusion::Mafm => "mafm",
        }
    }

    pub fn parse(text: &str) -> Result<Fusion> {
        match text {
            "chain" => Ok(Fusion::Chain),
            "concat" => Ok(Fusion::Concat),
            "mafm" => Ok(Fusion::Mafm),
            other => Err(Error::Config(format!(
                "fusion must be chain, concat or mafm, got {other:?}"
            ))),
        }
    }
}

/// One instantiated cell: per intermediate node its source index and the op
/// that runs on it, plus which node is wired to the cell output.
pub struct DiscreteCell<S: Scalar> {
    pub(crate) nodes: Vec<(usize, OpInstance<S>)>,
    pub(crate) output: usize,
}

impl<S: Scalar> DiscreteCell<S> {
    pub fn forward(&mut self, tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut feats: Vec<Tensor<S>> = vec![x.clone()];
        for (source, op) in &mut self.nodes {
            let y = op.forward(tape, &feats[*source])?;
            feats.push(y);
        }
        Ok(feats.swap_remove(self.output))
    }

    fn set_training(&mut self, training: bool) {
        for (_, op) in &mut self.nodes {
            op.set_training(training);
        }
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, S>>) {
        for (i, (_, op)) in self.nodes.iter_mut().enumerate() {
            op.tensors_mut(&format!("{prefix}.B{}", i + 1), out);
        }
    }
}

pub struct CdcnPlusPlus<S: Scalar> {
    pub input_size: usize,
    pub plan: SearchPlan,
    pub theta: ThetaCfg,
    pub fusion: Fusion,
    pub genotype: Genotype,
    pub(crate) stem: CdcBnRelu<S>,
    pub(crate) pre: CdcBnRelu<S>,
    pub(crate) entry: CdcBnRelu<S>,
    pub(crate) cells: Vec<DiscreteCell<S>>,
    pub(crate) mafm: Option<Mafm<S>>,
    pub(crate) head1: CdcBnRelu<S>,
    pub(crate) head_out: CdcLayer<S>,
}

/// Builds the deployment network from a genotype: the search-time channel
/// plan doubled, scaled by the config's channel scale, with attention fusion
/// when `use_mafm` is set and plain concatenation otherwise.
pub fn build_cdcnpp<S: Scalar>(
    genotype: &Genotype,
    config: &CdcnConfig,
    seed: u64,
) -> Result<CdcnPlusPlus<S>> {
    let plan = SearchPlan::search_default().doubled().scaled(config.channel_scale);
    let fusion = if config.use_mafm { Fusion::Mafm } else { Fusion::Concat };
    CdcnPlusPlus::from_plan(genotype, config.input_size, plan, config.theta, fusion, seed)
}

impl<S: Scalar> CdcnPlusPlus<S> {
    /// Builds a network with fresh weights at an explicit channel plan.
    pub fn from_plan(
        genotype: &Genotype,
        input_size: usize,
        plan: SearchPlan,
        theta: ThetaCfg,
        fusion: Fusion,
        seed: u64,
    ) -> Result<CdcnPlusPlus<S>> {
        genotype.validate()?;
        plan.validate()?;
        if genotype.cells.len() != 3 {
            return Err(Error::Config(format!(
                "the backbone runs three cells, genotype describes {}",
                genotype.cells.len()
            )));
        }
        if input_size == 0 || input_size % 8 != 0 {
            return Err(Error::Config(format!(
                "input_size must be a positive multiple of 8, got {input_size}"
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let stem = CdcBnRelu::new(3, plan.stem, 3, 1, theta, true, &mut rng)?;
        let pre = CdcBnRelu::new(plan.stem, plan.pre, 3, 1, theta, true, &mut rng)?;
        let entry = CdcBnRelu::new(plan.pre, plan.entry, 3, 1, theta, true, &mut rng)?;
        if plan.entry != plan.cell {
            return Err(Error::Config(format!(
                "entry width {} must equal the cell width {}",
                plan.entry, plan.cell
            )));
        }
        let mut cells = Vec::with_capacity(3);
        for cell_geno in &genotype.cells {
            let mut nodes = Vec::with_capacity(cell_geno.nodes.len());
            for choice in &cell_geno.nodes {
                let op = OpInstance::build(&choice.op, plan.cell, theta, &mut rng)?;
                nodes.push((choice.source, op));
            }
            cells.push(DiscreteCell { nodes, output: cell_geno.output });
        }
        let mafm = matches!(fusion, Fusion::Mafm).then(|| Mafm::new(&mut rng));
        let head_in = match fusion {
            Fusion::Chain => plan.cell,
            Fusion::Concat | Fusion::Mafm => 3 * plan.cell,
        };
        let head1 = CdcBnRelu::new(head_in, plan.head, 3, 1, theta, true, &mut rng)?;
        let w_out = Tensor::kaiming_conv(1, plan.head, 3, &mut rng);
        let head_out = match theta {
            ThetaCfg::Fixed(t) => CdcLayer::new_fixed(w_out, None, 1, 1, t)?,
            ThetaCfg::Adaptive(init) => CdcLayer::new_adaptive(w_out, None, 1, 1, init)?,
        };
        Ok(CdcnPlusPlus {
            input_size,
            plan,
            theta,
            fusion,
            genotype: genotype.clone(),
            stem,
            pre,
            entry,
            cells,
            mafm,
            head1,
            head_out,
        })
    }

    /// Assembles a network from already-built layers; the supernet uses this
    /// to hand its trained weights to the discrete architecture.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        genotype: Genotype,
        input_size: usize,
        plan: SearchPlan,
        theta: ThetaCfg,
        stem: CdcBnRelu<S>,
        pre: CdcBnRelu<S>,
        entry: CdcBnRelu<S>,
        cells: Vec<DiscreteCell<S>>,
        head1: CdcBnRelu<S>,
        head_out: CdcLayer<S>,
    ) -> CdcnPlusPlus<S> {
        CdcnPlusPlus {
            input_size,
            plan,
            theta,
            fusion: Fusion::Chain,
            genotype,
            stem,
            pre,
            entry,
            cells,
            mafm: None,
            head1,
            head_out,
        }
    }

    /// Maps [N, 3, S, S] to a depth map [N, 1, S/8, S/8].
    pub fn forward(&mut self, tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let s = x.shape();
        if s.c != 3 || s.h != self.input_size || s.w != self.input_size {
            return Err(Error::Shape {
                op: "cdcnpp_forward",
                detail: format!("expected [N,3,{0},{0}] input, got {s}", self.input_size),
            });
        }
        let mut f = self.stem.forward(tape, x)?;
        f = self.pre.forward(tape, &f)?;
        f = self.entry.forward(tape, &f)?;
        let mut taps = Vec::with_capacity(3);
        for cell in &mut self.cells {
            f = cell.forward(tape, &f)?;
            f = maxpool2x2(tape, &f)?;
            taps.push(f.clone());
        }
        let fused = match self.fusion {
            Fusion::Chain => taps[2].clone(),
            Fusion::Concat | Fusion::Mafm => {
                let low_half = maxpool2x2(tape, &taps[0])?;
                let low = maxpool2x2(tape, &low_half)?;
                let mid = maxpool2x2(tape, &taps[1])?;
                match &self.mafm {
                    Some(m) => mafm_forward(tape, m, &low, &mid, &taps[2])?,
                    None => multi_level_fuse(tape, &low, &mid, &taps[2])?,
                }
            }
        };
        let h = self.head1.forward(tape, &fused)?;
        cdc_forward_decomposed(tape, &h, &self.head_out)
    }

    pub fn set_training(&mut self, training: bool) {
        self.stem.set_training(training);
        self.pre.set_training(training);
        self.entry.set_training(training);
        for cell in &mut self.cells {
            cell.set_training(training);
        }
        self.head1.set_training(training);
    }

    pub fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_, S>> {
        let mut out = Vec::new();
        self.stem.tensors_mut("stem", &mut out);
        self.pre.tensors_mut("pre", &mut out);
        self.entry.tensors_mut("entry", &mut out);
        for (c, cell) in self.cells.iter_mut().enumerate() {
            cell.tensors_mut(&format!("cell{}", c + 1), &mut out);
        }
        if let Some(m) = &mut self.mafm {
            m.tensors_mut("mafm", &mut out);
        }
        self.head1.tensors_mut("head1", &mut out);
        cdc_tensors_mut("head_out", &mut self.head_out, &mut out);
        out
    }

    pub fn param_counts(&mut self) -> ParamCounts {
        ParamCounts::tally(self.tensors_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use crate::nas::catalog::OpKind;
    use crate::nas::genotype::{CellGenotype, NodeChoice, SharingMode};

    fn all_skip_genotype() -> Genotype {
        let cell = || CellGenotype {
            nodes: (1..=4)
                .map(|i| NodeChoice { source: i - 1, op: OpKind::Skip })
                .collect(),
            output: 4,
        };
        Genotype {
            cells: vec![cell(), cell(), cell()],
            sharing: SharingMode::Shared,
            node_attention: false,
        }
    }

    fn mixed_genotype() -> Genotype {
        let cell = |o| CellGenotype {
            nodes: vec![
                NodeChoice { source: 0, op: OpKind::CdcSingle },
                NodeChoice { source: 1, op: OpKind::CdcDouble { ratio: 0.5 } },
                NodeChoice { source: 0, op: OpKind::Skip },
                NodeChoice { source: 2, op: OpKind::CdcDouble { ratio: 2.0 } },
            ],
            output: o,
        };
        Genotype {
            cells: vec![cell(4), cell(2), cell(3)],
            sharing: SharingMode::Varied,
            node_attention: true,
        }
    }

    #[test]
    fn skip_cells_reduce_to_the_plain_chain() {
        let plan = SearchPlan { stem: 2, pre: 3, entry: 4, cell: 4, head: 3 };
        let mut model = CdcnPlusPlus::<f64>::from_plan(
            &all_skip_genotype(),
            16,
            plan,
            ThetaCfg::Fixed(0.7),
            Fusion::Chain,
            5,
        )
        .unwrap();
        model.set_training(false);
        let mut rng = SplitMix64::new(9);
        let x = Tensor::uniform(Shape::new(2, 3, 16, 16), 0.0, 1.0, &mut rng);
        let mut tape = Tape::inference();
        let y = model.forward(&mut tape, &x).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 1, 2, 2));
        assert!(y.all_finite());
        // identity cells: the same layers composed by hand give the same bits
        let mut f = model.stem.forward(&mut tape, &x).unwrap();
        f = model.pre.forward(&mut tape, &f).unwrap();
        f = model.entry.forward(&mut tape, &f).unwrap();
        for _ in 0..3 {
            f = maxpool2x2(&mut tape, &f).unwrap();
        }
        f = model.head1.forward(&mut tape, &f).unwrap();
        let by_hand = cdc_forward_decomposed(&mut tape, &f, &model.head_out).unwrap();
        assert_eq!(y.data(), by_hand.data(), "skip cells are exact identities");
    }

    #[test]
    fn fusion_mode_sets_head_width() {
        let plan = SearchPlan { stem: 2, pre: 3, entry: 4, cell: 4, head: 3 };
        let g = mixed_genotype();
        let chain =
            CdcnPlusPlus::<f64>::from_plan(&g, 16, plan, ThetaCfg::Fixed(0.7), Fusion::Chain, 1)
                .unwrap();
        assert_eq!(chain.head1.cdc.conv.in_channels(), 4);
        assert!(chain.mafm.is_none());
        let mafm =
            CdcnPlusPlus::<f64>::from_plan(&g, 16, plan, ThetaCfg::Fixed(0.7), Fusion::Mafm, 1)
                .unwrap();
        assert_eq!(mafm.head1.cdc.conv.in_channels(), 12);
        assert!(mafm.mafm.is_some());
    }

    #[test]
    fn concat_and_mafm_variants_run_to_depth_resolution() {
        let plan = SearchPlan { stem: 2, pre: 3, entry: 4, cell: 4, head: 3 };
        let g = mixed_genotype();
        let mut rng = SplitMix64::new(2);
        let x = Tensor::<f64>::uniform(Shape::new(1, 3, 24, 24), 0.0, 1.0, &mut rng);
        for fusion in [Fusion::Concat, Fusion::Mafm] {
            let mut model =
                CdcnPlusPlus::<f64>::from_plan(&g, 24, plan, ThetaCfg::Fixed(0.7), fusion, 3)
                    .unwrap();
            model.set_training(false);
            let mut tape = Tape::inference();
            let y = model.forward(&mut tape, &x).unwrap();
            assert_eq!(y.shape(), Shape::new(1, 1, 3, 3), "{:?}", fusion);
            assert!(y.all_finite());
        }
    }

    #[test]
    fn deployment_build_uses_the_doubled_plan() {
        let g = mixed_genotype();
        let mut cfg = CdcnConfig::desk();
        cfg.input_size = 16;
        let model = build_cdcnpp::<f32>(&g, &cfg, 11).unwrap();
        assert_eq!(model.plan, SearchPlan { stem: 16, pre: 32, entry: 64, cell: 64, head: 32 });
        assert_eq!(model.fusion, Fusion::Concat);
        cfg.use_mafm = true;
        let model = build_cdcnpp::<f32>(&g, &cfg, 11).unwrap();
        assert_eq!(model.fusion, Fusion::Mafm);
    }

    #[test]
    fn wrong_cell_count_is_rejected() {
        let mut g = mixed_genotype();
        g.cells.pop();
        let cfg = CdcnConfig::desk();
        let err = match build_cdcnpp::<f32>(&g, &cfg, 1) {
            Ok(_) => panic!("a two-cell genotype must be rejected"),
            Err(e) => e,
        };
        assert!(err.to_string().contains("three cells"), "got {err}");
    }
}
