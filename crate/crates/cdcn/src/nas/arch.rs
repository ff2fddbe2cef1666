//! Continuous architecture parameters and their discretization. Each cell
//! edge carries a logit vector alpha over the op catalog (softmaxed to the
//! mixture eta), and each cell carries a logit vector beta' over its
//! intermediate nodes (softmaxed to the output attention beta).

use crate::layers::{NamedTensorMut, TensorRole};
use crate::nas::catalog::OpCatalog;
use crate::nas::genotype::{CellGenotype, Genotype, NodeChoice, SharingMode};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

/// Flat edge index for the incoming edge of intermediate node `node` (1-based)
/// reading from `source` (0 = cell input). Edges are ordered node by node,
/// sources ascending: B1's edges first, then B2's, and so on.
pub fn edge_index(node: usize, source: usize) -> usize {
    node * (node - 1) / 2 + source
}

/// Total number of edges for a cell with `n_intermediate` intermediate nodes.
pub fn edge_count(n_intermediate: usize) -> usize {
    n_intermediate * (n_intermediate + 1) / 2
}

pub struct ArchParams<S: Scalar> {
    pub n_cells: usize,
    pub n_intermediate: usize,
    pub n_ops: usize,
    pub sharing: SharingMode,
    /// One group per cell in varied mode, a single aliased group in shared
    /// mode. alphas[g][e] has shape [1,1,1,n_ops].
    alphas: Vec<Vec<Tensor<S>>>,
    /// betas[g] has shape [1,1,1,n_intermediate].
    betas: Vec<Tensor<S>>,
}

impl<S: Scalar> ArchParams<S> {
    /// Zero logits everywhere: every mixture starts uniform.
    pub fn new(
        n_cells: usize,
        n_intermediate: usize,
        n_ops: usize,
        sharing: SharingMode,
    ) -> Result<ArchParams<S>> {
        if n_cells == 0 || n_intermediate == 0 || n_ops < 2 {
            return Err(Error::Config(format!(
                "architecture needs cells >= 1, intermediate nodes >= 1 and ops >= 2, \
                 got {n_cells}, {n_intermediate}, {n_ops}"
            )));
        }
        let groups = match sharing {
            SharingMode::Shared => 1,
            SharingMode::Varied => n_cells,
        };
        let alphas = (0..groups)
            .map(|_| {
                (0..edge_count(n_intermediate))
                    .map(|_| Tensor::zeros(Shape::new(1, 1, 1, n_ops)))
                    .collect()
            })
            .collect();
        let betas = (0..groups)
            .map(|_| Tensor::zeros(Shape::new(1, 1, 1, n_intermediate)))
            .collect();
        Ok(ArchParams { n_cells, n_intermediate, n_ops, sharing, alphas, betas })
    }

    /// Logits drawn uniformly from [-spread, spread], for tests and studies.
    pub fn randomized(
        n_cells: usize,
        n_intermediate: usize,
        n_ops: usize,
        sharing: SharingMode,
        spread: f64,
        rng: &mut SplitMix64,
    ) -> Result<ArchParams<S>> {
        let mut arch = ArchParams::new(n_cells, n_intermediate, n_ops, sharing)?;
        for group in &mut arch.alphas {
            for a in group {
                *a = Tensor::uniform(a.shape(), -spread, spread, rng);
            }
        }
        for b in &mut arch.betas {
            *b = Tensor::uniform(b.shape(), -spread, spread, rng);
        }
        Ok(arch)
    }

    pub fn group_count(&self) -> usize {
        self.alphas.len()
    }

    pub fn group_for_cell(&self, cell: usize) -> usize {
        match self.sharing {
            SharingMode::Shared => 0,
            SharingMode::Varied => cell,
        }
    }

    pub fn alpha(&self, cell: usize, edge: usize) -> &Tensor<S> {
        &self.alphas[self.group_for_cell(cell)][edge]
    }

    pub fn beta(&self, cell: usize) -> &Tensor<S> {
        &self.betas[self.group_for_cell(cell)]
    }

    pub fn set_alpha(&mut self, group: usize, edge: usize, logits: Tensor<S>) {
        assert_eq!(logits.shape(), Shape::new(1, 1, 1, self.n_ops), "alpha shape");
        self.alphas[group][edge] = logits;
    }

    pub fn set_beta(&mut self, group: usize, logits: Tensor<S>) {
        assert_eq!(logits.shape(), Shape::new(1, 1, 1, self.n_intermediate), "beta shape");
        self.betas[group] = logits;
    }

    pub fn all_finite(&self) -> bool {
        self.alphas.iter().flatten().all(|t| t.all_finite())
            && self.betas.iter().all(|t| t.all_finite())
    }

    pub fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_, S>> {
        let mut out = Vec::new();
        for (g, group) in self.alphas.iter_mut().enumerate() {
            for (e, a) in group.iter_mut().enumerate() {
                out.push(NamedTensorMut::new(
                    format!("arch.g{g}.alpha{e}"),
                    TensorRole::Param,
                    a,
                ));
            }
        }
        for (g, b) in self.betas.iter_mut().enumerate() {
            out.push(NamedTensorMut::new(format!("arch.g{g}.beta"), TensorRole::Param, b));
        }
        out
    }

    /// Logits that pin the mixtures onto a genotype: on each kept edge the
    /// chosen op gets +magnitude and everything else -magnitude; every other
    /// edge pins the `none` op the same way; beta' pins the output source.
    pub fn concentrated(
        genotype: &Genotype,
        catalog: &OpCatalog,
        magnitude: f64,
    ) -> Result<ArchParams<S>> {
        genotype.validate()?;
        let n_cells = genotype.cells.len();
        let n_int = genotype.cells[0].nodes.len();
        let mut arch: ArchParams<S> =
            ArchParams::new(n_cells, n_int, catalog.len(), genotype.sharing)?;
        let hi = S::from_f64(magnitude);
        let lo = S::from_f64(-magnitude);
        for g in 0..arch.group_count() {
            let cell = &genotype.cells[g];
            for edge in &mut arch.alphas[g] {
                let d = edge.data_mut();
                for v in d.iter_mut() {
                    *v = lo;
                }
                d[catalog.none_index()] = hi;
            }
            for (ni, choice) in cell.nodes.iter().enumerate() {
                let op_idx = catalog.index_of(&choice.op).ok_or_else(|| {
                    Error::Config(format!("genotype op {} is not in the catalog", choice.op.name()))
                })?;
                let e = edge_index(ni + 1, choice.source);
                let d = arch.alphas[g][e].data_mut();
                for v in d.iter_mut() {
                    *v = lo;
                }
                d[op_idx] = hi;
            }
            let b = arch.betas[g].data_mut();
            for v in b.iter_mut() {
                *v = lo;
            }
            b[cell.output - 1] = hi;
        }
        Ok(arch)
    }
}

/// Numerically safe softmax of a logit slice, in f64.
pub fn softmax_f64<S: Scalar>(logits: &[S]) -> Vec<f64> {
    let vals: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = vals.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Discretizes architecture parameters. Per intermediate node, every incoming
/// edge is scored by its strongest non-`none` mixture weight; the best edge
/// and that op are kept. The output source is the beta argmax when node
/// attention is on, otherwise the last intermediate node. All ties break to
/// the lowest index.
pub fn derive_genotype<S: Scalar>(
    arch: &ArchParams<S>,
    catalog: &OpCatalog,
    node_attention: bool,
) -> Result<Genotype> {
    if catalog.len() != arch.n_ops {
        return Err(Error::Config(format!(
            "catalog has {} ops but architecture logits cover {}",
            catalog.len(),
            arch.n_ops
        )));
    }
    if !arch.all_finite() {
        return Err(Error::Numeric(
            "architecture parameters contain non-finite values".to_string(),
        ));
    }
    let none_idx = catalog.none_index();
    let mut cells = Vec::with_capacity(arch.n_cells);
    for c in 0..arch.n_cells {
        let mut nodes = Vec::with_capacity(arch.n_intermediate);
        for node in 1..=arch.n_intermediate {
            let mut best: Option<(f64, usize, usize)> = None; // (weight, source, op)
            for source in 0..node {
                let eta = softmax_f64(arch.alpha(c, edge_index(node, source)).data());
                let (mut op_best, mut op_w) = (usize::MAX, f64::NEG_INFINITY);
                for (o, &w) in eta.iter().enumerate() {
                    if o != none_idx && w > op_w {
                        op_w = w;
                        op_best = o;
                    }
                }
                let better = match &best {
                    None => true,
                    Some((w, _, _)) => op_w > *w,
                };
                if better {
                    best = Some((op_w, source, op_best));
                }
            }
            let (_, source, op) = best.expect("node has at least one incoming edge");
            nodes.push(NodeChoice { source, op: catalog.op(op).clone() });
        }
        let output = if node_attention {
            let beta = arch.beta(c).data();
            let mut best = 0;
            for (i, v) in beta.iter().enumerate() {
                if *v > beta[best] {
                    best = i;
                }
            }
            best + 1
        } else {
            arch.n_intermediate
        };
        cells.push(CellGenotype { nodes, output });
    }
    let genotype = Genotype { cells, sharing: arch.sharing, node_attention };
    genotype.validate()?;
    Ok(genotype)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nas::catalog::OpKind;

    #[test]
    fn edge_indexing_is_dense_and_ordered() {
        assert_eq!(edge_index(1, 0), 0);
        assert_eq!(edge_index(2, 0), 1);
        assert_eq!(edge_index(2, 1), 2);
        assert_eq!(edge_index(4, 3), 9);
        assert_eq!(edge_count(4), 10);
        assert_eq!(edge_count(2), 3);
    }

    #[test]
    fn all_equal_logits_tie_break_to_lowest_indices() {
        let catalog = OpCatalog::standard();
        let arch: ArchParams<f64> = ArchParams::new(3, 4, 8, SharingMode::Varied).unwrap();
        let g = derive_genotype(&arch, &catalog, true).unwrap();
        for cell in &g.cells {
            for choice in &cell.nodes {
                assert_eq!(choice.source, 0, "lowest source is the cell input");
                assert_eq!(choice.op, OpKind::Skip, "lowest non-none op");
            }
            assert_eq!(cell.output, 1, "beta tie goes to B1");
        }
        let g = derive_genotype(&arch, &catalog, false).unwrap();
        assert_eq!(g.cells[0].output, 4, "without node attention B4 is wired out");
    }

    #[test]
    fn strict_maxima_are_read_off() {
        let catalog = OpCatalog::standard();
        let mut arch: ArchParams<f64> = ArchParams::new(1, 2, 8, SharingMode::Varied).unwrap();
        // B1 <- input with op 4; B2: edge from B1 stronger than from input, op 2
        let mut a = vec![0.0; 8];
        a[4] = 3.0;
        arch.set_alpha(0, edge_index(1, 0), Tensor::from_vec(Shape::new(1, 1, 1, 8), a).unwrap());
        let mut weak = vec![0.0; 8];
        weak[2] = 1.0;
        arch.set_alpha(0, edge_index(2, 0), Tensor::from_vec(Shape::new(1, 1, 1, 8), weak).unwrap());
        let mut strong = vec![0.0; 8];
        strong[2] = 2.5;
        arch.set_alpha(0, edge_index(2, 1), Tensor::from_vec(Shape::new(1, 1, 1, 8), strong).unwrap());
        arch.set_beta(0, Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap());
        let g = derive_genotype(&arch, &catalog, true).unwrap();
        assert_eq!(g.cells[0].nodes[0], NodeChoice { source: 0, op: catalog.op(4).clone() });
        assert_eq!(g.cells[0].nodes[1], NodeChoice { source: 1, op: catalog.op(2).clone() });
        assert_eq!(g.cells[0].output, 2);
    }

    #[test]
    fn derivation_ignores_constant_logit_shifts() {
        let catalog = OpCatalog::standard();
        let mut rng = SplitMix64::new(33);
        let arch: ArchParams<f64> =
            ArchParams::randomized(3, 4, 8, SharingMode::Varied, 2.0, &mut rng).unwrap();
        let base = derive_genotype(&arch, &catalog, true).unwrap();
        let mut shifted = ArchParams::<f64>::new(3, 4, 8, SharingMode::Varied).unwrap();
        for g in 0..3 {
            for e in 0..edge_count(4) {
                let src = arch.alpha(g, e);
                let moved = Tensor::from_fn(src.shape(), |i| src.data()[i] + 7.25);
                shifted.set_alpha(g, e, moved);
            }
            let src = arch.beta(g);
            shifted.set_beta(g, Tensor::from_fn(src.shape(), |i| src.data()[i] - 3.5));
        }
        assert_eq!(derive_genotype(&shifted, &catalog, true).unwrap(), base);
    }

    #[test]
    fn shared_mode_derives_identical_cells() {
        let catalog = OpCatalog::standard();
        let mut rng = SplitMix64::new(34);
        let arch: ArchParams<f64> =
            ArchParams::randomized(3, 4, 8, SharingMode::Shared, 2.0, &mut rng).unwrap();
        assert_eq!(arch.group_count(), 1);
        let g = derive_genotype(&arch, &catalog, true).unwrap();
        assert_eq!(g.cells.len(), 3);
        assert_eq!(g.cells[0], g.cells[1]);
        assert_eq!(g.cells[0], g.cells[2]);
        g.validate().unwrap();
    }

    #[test]
    fn concentration_round_trips_through_derivation() {
        let catalog = OpCatalog::standard();
        let mut rng = SplitMix64::new(35);
        for seed in 0..20 {
            let arch: ArchParams<f64> = ArchParams::randomized(
                3,
                4,
                8,
                SharingMode::Varied,
                1.5,
                &mut SplitMix64::new(seed),
            )
            .unwrap();
            let node_attention = rng.next_below(2) == 0;
            let g = derive_genotype(&arch, &catalog, node_attention).unwrap();
            let pinned: ArchParams<f64> = ArchParams::concentrated(&g, &catalog, 30.0).unwrap();
            let back = derive_genotype(&pinned, &catalog, node_attention).unwrap();
            assert_eq!(back, g, "derive(concentrated(g)) must reproduce g");
        }
    }

    #[test]
    fn random_derivations_always_validate() {
        let catalog = OpCatalog::standard();
        for seed in 0..200 {
            let mut rng = SplitMix64::new(seed);
            let arch: ArchParams<f64> =
                ArchParams::randomized(3, 4, 8, SharingMode::Varied, 3.0, &mut rng).unwrap();
            let g = derive_genotype(&arch, &catalog, seed % 2 == 0).unwrap();
            g.validate().expect("derived genotypes are structurally sound");
        }
    }

    #[test]
    fn non_finite_logits_are_rejected() {
        let catalog = OpCatalog::standard();
        let mut arch: ArchParams<f64> = ArchParams::new(1, 2, 8, SharingMode::Varied).unwrap();
        let mut bad = vec![0.0; 8];
        bad[3] = f64::NAN;
        arch.set_alpha(0, 0, Tensor::from_vec(Shape::new(1, 1, 1, 8), bad).unwrap());
        let err = derive_genotype(&arch, &catalog, true).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "got {err}");
    }
}
