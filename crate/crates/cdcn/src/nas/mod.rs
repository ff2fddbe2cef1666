//! Differentiable architecture search: candidate op catalog, continuous
//! architecture parameters, the three-cell supernet, bi-level optimization and
//! genotype derivation.

pub mod arch;
pub mod catalog;
pub mod genotype;
pub mod search;
pub mod supernet;

pub use arch::{derive_genotype, edge_count, edge_index, ArchParams};
pub use catalog::{OpCatalog, OpInstance, OpKind};
pub use genotype::{CellGenotype, Genotype, NodeChoice, SharingMode};
pub use search::{bilevel_step, default_warmup, run_search, SearchConfig, SearchRun, TraceRow};
pub use supernet::{build_supernet, Supernet, SupernetConfig};

use serde::{Deserialize, Serialize};

use crate::model::cdcn::ChannelScale;
use crate::{Error, Result};

/// Channel widths of the searched backbone's chain: stem conv, a pre-cell
/// conv, the entry conv into cell width, the shared cell width, and the hidden
/// head width. The depth output is always one channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchPlan {
    pub stem: usize,
    pub pre: usize,
    pub entry: usize,
    pub cell: usize,
    pub head: usize,
}

impl SearchPlan {
    /// The plan used while searching.
    pub fn search_default() -> SearchPlan {
        SearchPlan { stem: 32, pre: 64, entry: 128, cell: 128, head: 64 }
    }

    /// CPU-sized plan for desk runs.
    pub fn desk() -> SearchPlan {
        SearchPlan { stem: 4, pre: 8, entry: 16, cell: 16, head: 8 }
    }

    /// The deployed network doubles every hidden width of the searched plan.
    pub fn doubled(&self) -> SearchPlan {
        SearchPlan {
            stem: self.stem * 2,
            pre: self.pre * 2,
            entry: self.entry * 2,
            cell: self.cell * 2,
            head: self.head * 2,
        }
    }

    pub fn scaled(&self, scale: ChannelScale) -> SearchPlan {
        SearchPlan {
            stem: scale.apply(self.stem),
            pre: scale.apply(self.pre),
            entry: scale.apply(self.entry),
            cell: scale.apply(self.cell),
            head: scale.apply(self.head),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem == 0 || self.pre == 0 || self.entry == 0 || self.cell == 0 || self.head == 0 {
            return Err(Error::Config(format!("channel plan must be positive everywhere: {self:?}")));
        }
        Ok(())
    }
}
