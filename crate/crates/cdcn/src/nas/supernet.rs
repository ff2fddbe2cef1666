//! The over-parameterised search network. Every cell edge carries one live
//! instance of every catalog op; a forward pass blends each edge's op outputs
//! with the softmax of that edge's logits and blends the intermediate nodes
//! with the softmax of the output logits, so the whole relaxation stays
//! differentiable end to end. Once logits have been learned, the chosen
//! discrete network is read off and its weights lifted out unchanged.

use serde::{Deserialize, Serialize};

use crate::cdc::{cdc_forward_decomposed, CdcLayer};
use crate::layers::{cdc_tensors_mut, CdcBnRelu, NamedTensorMut, ThetaCfg};
use crate::model::cdcnpp::{CdcnPlusPlus, DiscreteCell};
use crate::nas::arch::{edge_count, edge_index, ArchParams};
use crate::nas::catalog::{OpCatalog, OpInstance};
use crate::nas::genotype::{Genotype, SharingMode};
use crate::nas::SearchPlan;
use crate::ops::elementwise::{add, softmax_last, weighted_sum};
use crate::ops::pool::maxpool2x2;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// The backbone always stacks three searchable cells with a pool after each.
pub const SUPERNET_CELLS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupernetConfig {
    pub input_size: usize,
    pub plan: SearchPlan,
    pub n_intermediate: usize,
    pub theta: ThetaCfg,
    pub sharing: SharingMode,
    pub node_attention: bool,
}

impl SupernetConfig {
    /// Small configuration sized for interactive runs: 24 pixel faces and a
    /// few channels, four intermediate nodes per cell.
    pub fn desk() -> SupernetConfig {
        SupernetConfig {
            input_size: 24,
            plan: SearchPlan::desk(),
            n_intermediate: 4,
            theta: ThetaCfg::Fixed(0.7),
            sharing: SharingMode::Varied,
            node_attention: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        if self.input_size == 0 || self.input_size % 8 != 0 {
            return Err(Error::Config(format!(
                "input_size must be a positive multiple of 8, got {}",
                self.input_size
            )));
        }
        if self.n_intermediate == 0 {
            return Err(Error::Config("cells need at least one intermediate node".into()));
        }
        if self.plan.entry != self.plan.cell {
            return Err(Error::Config(format!(
                "entry width {} must equal the cell width {}",
                self.plan.entry, self.plan.cell
            )));
        }
        Ok(())
    }
}

/// One searchable cell: for every edge, one built instance per catalog op,
/// indexed `edges[edge][op]`.
pub struct SuperCell<S: Scalar> {
    edges: Vec<Vec<OpInstance<S>>>,
}

pub struct Supernet<S: Scalar> {
    config: SupernetConfig,
    catalog: OpCatalog,
    pub(crate) arch: ArchParams<S>,
    stem: CdcBnRelu<S>,
    pre: CdcBnRelu<S>,
    entry: CdcBnRelu<S>,
    cells: Vec<SuperCell<S>>,
    head1: CdcBnRelu<S>,
    head_out: CdcLayer<S>,
}

pub fn build_supernet<S: Scalar>(
    config: &SupernetConfig,
    catalog: &OpCatalog,
    seed: u64,
) -> Result<Supernet<S>> {
    config.validate()?;
    let plan = config.plan;
    let mut rng = SplitMix64::new(seed);
    let stem = CdcBnRelu::new(3, plan.stem, 3, 1, config.theta, true, &mut rng)?;
    let pre = CdcBnRelu::new(plan.stem, plan.pre, 3, 1, config.theta, true, &mut rng)?;
    let entry = CdcBnRelu::new(plan.pre, plan.entry, 3, 1, config.theta, true, &mut rng)?;
    let n_edges = edge_count(config.n_intermediate);
    let mut cells = Vec::with_capacity(SUPERNET_CELLS);
    for _ in 0..SUPERNET_CELLS {
        let mut edges = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            let mut ops = Vec::with_capacity(catalog.len());
            for kind in catalog.ops() {
                ops.push(OpInstance::build(kind, plan.cell, config.theta, &mut rng)?);
            }
            edges.push(ops);
        }
        cells.push(SuperCell { edges });
    }
    let head1 = CdcBnRelu::new(plan.cell, plan.head, 3, 1, config.theta, true, &mut rng)?;
    let w_out = Tensor::kaiming_conv(1, plan.head, 3, &mut rng);
    let head_out = match config.theta {
        ThetaCfg::Fixed(t) => CdcLayer::new_fixed(w_out, None, 1, 1, t)?,
        ThetaCfg::Adaptive(init) => CdcLayer::new_adaptive(w_out, None, 1, 1, init)?,
    };
    let arch = ArchParams::new(SUPERNET_CELLS, config.n_intermediate, catalog.len(), config.sharing)?;
    Ok(Supernet { config: *config, catalog: catalog.clone(), arch, stem, pre, entry, cells, head1, head_out })
}

impl<S: Scalar> Supernet<S> {
    pub fn config(&self) -> &SupernetConfig {
        &self.config
    }

    pub fn catalog(&self) -> &OpCatalog {
        &self.catalog
    }

    pub fn arch(&self) -> &ArchParams<S> {
        &self.arch
    }

    /// Replaces the architecture logits, for example with a concentrated set.
    pub fn set_arch(&mut self, arch: ArchParams<S>) -> Result<()> {
        let ok = arch.group_count() == self.arch.group_count()
            && arch.n_intermediate == self.config.n_intermediate
            && arch.n_ops == self.catalog.len()
            && arch.sharing == self.config.sharing;
        if !ok {
            return Err(Error::Config(
                "replacement architecture logits do not match this supernet's layout".into(),
            ));
        }
        self.arch = arch;
        Ok(())
    }

    /// Runs one cell over its input feature map with the current relaxation.
    /// Node j sums, over every earlier node i, the softmax(alpha) blend of
    /// all op outputs on edge (i, j); the cell output blends the intermediate
    /// nodes with softmax(beta).
    pub fn cell_forward(
        &mut self,
        tape: &mut Tape<S>,
        cell_idx: usize,
        x0: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        let n_int = self.config.n_intermediate;
        let cell = &mut self.cells[cell_idx];
        let mut feats: Vec<Tensor<S>> = Vec::with_capacity(n_int + 1);
        feats.push(x0.clone());
        for node in 1..=n_int {
            let mut acc: Option<Tensor<S>> = None;
            for source in 0..node {
                let e = edge_index(node, source);
                let eta = softmax_last(tape, self.arch.alpha(cell_idx, e))?;
                let mut outs = Vec::with_capacity(cell.edges[e].len());
                for op in &mut cell.edges[e] {
                    outs.push(op.forward(tape, &feats[source])?);
                }
                let refs: Vec<&Tensor<S>> = outs.iter().collect();
                let mix = weighted_sum(tape, &refs, &eta)?;
                acc = Some(match acc {
                    None => mix,
                    Some(prev) => add(tape, &prev, &mix)?,
                });
            }
            feats.push(acc.expect("every node has at least one incoming edge"));
        }
        let coeffs = softmax_last(tape, self.arch.beta(cell_idx))?;
        let refs: Vec<&Tensor<S>> = feats[1..].iter().collect();
        weighted_sum(tape, &refs, &coeffs)
    }

    /// Maps [N, 3, S, S] to a depth map [N, 1, S/8, S/8] through the full
    /// relaxed network.
    pub fn forward(&mut self, tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        if !self.arch.all_finite() {
            return Err(Error::Numeric(
                "architecture logits are non-finite, refusing to run".into(),
            ));
        }
        let s = x.shape();
        if s.c != 3 || s.h != self.config.input_size || s.w != self.config.input_size {
            return Err(Error::Shape {
                op: "supernet_forward",
                detail: format!("expected [N,3,{0},{0}] input, got {s}", self.config.input_size),
            });
        }
        let mut f = self.stem.forward(tape, x)?;
        f = self.pre.forward(tape, &f)?;
        f = self.entry.forward(tape, &f)?;
        for c in 0..SUPERNET_CELLS {
            f = self.cell_forward(tape, c, &f)?;
            f = maxpool2x2(tape, &f)?;
        }
        let h = self.head1.forward(tape, &f)?;
        cdc_forward_decomposed(tape, &h, &self.head_out)
    }

    pub fn set_training(&mut self, training: bool) {
        self.stem.set_training(training);
        self.pre.set_training(training);
        self.entry.set_training(training);
        for cell in &mut self.cells {
            for edge in &mut cell.edges {
                for op in edge {
                    op.set_training(training);
                }
            }
        }
        self.head1.set_training(training);
    }

    /// Network weights and running statistics, without architecture logits.
    pub fn weight_tensors_mut(&mut self) -> Vec<NamedTensorMut<'_, S>> {
        let mut out = Vec::new();
        self.stem.tensors_mut("stem", &mut out);
        self.pre.tensors_mut("pre", &mut out);
        self.entry.tensors_mut("entry", &mut out);
        for (c, cell) in self.cells.iter_mut().enumerate() {
            for (e, edge) in cell.edges.iter_mut().enumerate() {
                for (k, op) in edge.iter_mut().enumerate() {
                    op.tensors_mut(&format!("cell{}.e{e}.op{k}", c + 1), &mut out);
                }
            }
        }
        self.head1.tensors_mut("head1", &mut out);
        cdc_tensors_mut("head_out", &mut self.head_out, &mut out);
        out
    }

    /// Architecture logits only.
    pub fn arch_tensors_mut(&mut self) -> Vec<NamedTensorMut<'_, S>> {
        self.arch.tensors_mut()
    }

    /// Weights, running statistics and architecture logits together.
    pub fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_, S>> {
        let mut out = Vec::new();
        self.stem.tensors_mut("stem", &mut out);
        self.pre.tensors_mut("pre", &mut out);
        self.entry.tensors_mut("entry", &mut out);
        for (c, cell) in self.cells.iter_mut().enumerate() {
            for (e, edge) in cell.edges.iter_mut().enumerate() {
                for (k, op) in edge.iter_mut().enumerate() {
                    op.tensors_mut(&format!("cell{}.e{e}.op{k}", c + 1), &mut out);
                }
            }
        }
        self.head1.tensors_mut("head1", &mut out);
        cdc_tensors_mut("head_out", &mut self.head_out, &mut out);
        out.extend(self.arch.tensors_mut());
        out
    }

    /// Builds the discrete network a genotype describes, lifting the chosen
    /// op instances and the shared stem, entry and head weights out of the
    /// supernet by cloning them. The result uses the chain layout, exactly
    /// the path the supernet itself evaluates.
    pub fn extract_discrete(&self, genotype: &Genotype) -> Result<CdcnPlusPlus<S>> {
        genotype.validate()?;
        if genotype.cells.len() != SUPERNET_CELLS {
            return Err(Error::Config(format!(
                "genotype describes {} cells, this supernet has {}",
                genotype.cells.len(),
                SUPERNET_CELLS
            )));
        }
        let mut cells = Vec::with_capacity(SUPERNET_CELLS);
        for (c, cell_geno) in genotype.cells.iter().enumerate() {
            if cell_geno.nodes.len() != self.config.n_intermediate {
                return Err(Error::Config(format!(
                    "genotype cell {} has {} nodes, this supernet has {}",
                    c + 1,
                    cell_geno.nodes.len(),
                    self.config.n_intermediate
                )));
            }
            let mut nodes = Vec::with_capacity(cell_geno.nodes.len());
            for (j, choice) in cell_geno.nodes.iter().enumerate() {
                let op_idx = self.catalog.index_of(&choice.op).ok_or_else(|| {
                    Error::Config(format!(
                        "genotype op {} is not in this supernet's catalog",
                        choice.op.name()
                    ))
                })?;
                let e = edge_index(j + 1, choice.source);
                nodes.push((choice.source, self.cells[c].edges[e][op_idx].clone()));
            }
            cells.push(DiscreteCell { nodes, output: cell_geno.output });
        }
        Ok(CdcnPlusPlus::from_parts(
            genotype.clone(),
            self.config.input_size,
            self.config.plan,
            self.config.theta,
            self.stem.clone(),
            self.pre.clone(),
            self.entry.clone(),
            cells,
            self.head1.clone(),
            self.head_out.clone(),
        ))
    }
}
