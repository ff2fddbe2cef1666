//! Discrete architecture descriptions and their textual file format. A
//! genotype fixes, per cell, one (source node, operation) pair for every
//! intermediate node and which intermediate node feeds the cell output.
//!
//! The file format is line oriented and round-trips exactly:
//!
//! ```text
//! sharing varied
//! node_attention true
//! cell 1
//! node B1 <- input skip_connect
//! node B2 <- B1 cdc_2_0.5
//! output <- B2
//! cell 2
//! ...
//! ```

use serde::{Deserialize, Serialize};

use crate::nas::catalog::OpKind;
use crate::{Error, Result};

/// Whether the three cells were searched with one shared set of architecture
/// parameters or three independent sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingMode {
    Varied,
    Shared,
}

impl SharingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SharingMode::Varied => "varied",
            SharingMode::Shared => "shared",
        }
    }

    pub fn parse(text: &str) -> Result<SharingMode> {
        match text {
            "varied" => Ok(SharingMode::Varied),
            "shared" => Ok(SharingMode::Shared),
            other => Err(Error::Data(format!(
                "sharing mode must be varied or shared, got {other:?}"
            ))),
        }
    }
}

/// The single kept incoming edge of one intermediate node: where it reads from
/// (0 = cell input, k = intermediate node Bk) and which operation runs on it.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeChoice {
    pub source: usize,
    pub op: OpKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellGenotype {
    /// Entry i describes intermediate node B(i+1).
    pub nodes: Vec<NodeChoice>,
    /// 1-based index of the intermediate node wired to the cell output.
    pub output: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Genotype {
    pub cells: Vec<CellGenotype>,
    pub sharing: SharingMode,
    pub node_attention: bool,
}

fn node_name(idx: usize) -> String {
    if idx == 0 {
        "input".to_string()
    } else {
        format!("B{idx}")
    }
}

fn parse_node_name(text: &str) -> Result<usize> {
    if text == "input" {
        return Ok(0);
    }
    if let Some(num) = text.strip_prefix('B') {
        if let Ok(k) = num.parse::<usize>() {
            if k >= 1 {
                return Ok(k);
            }
        }
    }
    Err(Error::Data(format!("bad node name {text:?}, expected input or B<k>")))
}

impl Genotype {
    /// Structural soundness: at least one cell, each intermediate node fed
    /// from a strictly earlier node by a non-`none` op, output source in
    /// range, and identical cells when the sharing flag says shared.
    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Data("genotype has no cells".to_string()));
        }
        for (ci, cell) in self.cells.iter().enumerate() {
            let n = cell.nodes.len();
            if n == 0 {
                return Err(Error::Data(format!("cell {} has no intermediate nodes", ci + 1)));
            }
            for (ni, choice) in cell.nodes.iter().enumerate() {
                let this = ni + 1;
                if choice.source >= this {
                    return Err(Error::Data(format!(
                        "cell {}: node B{this} reads from {}, which is not an earlier node",
                        ci + 1,
                        node_name(choice.source)
                    )));
                }
                if choice.op.is_none() {
                    return Err(Error::Data(format!(
                        "cell {}: node B{this} kept the none op",
                        ci + 1
                    )));
                }
            }
            if cell.output == 0 || cell.output > n {
                return Err(Error::Data(format!(
                    "cell {}: output source B{} is out of range 1..={n}",
                    ci + 1,
                    cell.output
                )));
            }
        }
        if self.sharing == SharingMode::Shared {
            for (ci, cell) in self.cells.iter().enumerate().skip(1) {
                if cell != &self.cells[0] {
                    return Err(Error::Data(format!(
                        "sharing is marked shared but cell {} differs from cell 1",
                        ci + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn emit(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("sharing {}\n", self.sharing.as_str()));
        out.push_str(&format!("node_attention {}\n", self.node_attention));
        for (ci, cell) in self.cells.iter().enumerate() {
            out.push_str(&format!("cell {}\n", ci + 1));
            for (ni, choice) in cell.nodes.iter().enumerate() {
                out.push_str(&format!(
                    "node B{} <- {} {}\n",
                    ni + 1,
                    node_name(choice.source),
                    choice.op.name()
                ));
            }
            out.push_str(&format!("output <- B{}\n", cell.output));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Genotype> {
        let bad = |line_no: usize, what: String| {
            Error::Data(format!("genotype line {line_no}: {what}"))
        };
        let mut sharing: Option<SharingMode> = None;
        let mut node_attention: Option<bool> = None;
        let mut cells: Vec<CellGenotype> = Vec::new();
        let mut current: Option<CellGenotype> = None;

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            match words[0] {
                "sharing" => {
                    if words.len() != 2 || sharing.is_some() {
                        return Err(bad(line_no, format!("malformed sharing line {line:?}")));
                    }
                    sharing = Some(SharingMode::parse(words[1])?);
                }
                "node_attention" => {
                    if words.len() != 2 || node_attention.is_some() {
                        return Err(bad(line_no, format!("malformed node_attention line {line:?}")));
                    }
                    node_attention = Some(match words[1] {
                        "true" => true,
                        "false" => false,
                        other => {
                            return Err(bad(line_no, format!("expected true or false, got {other:?}")))
                        }
                    });
                }
                "cell" => {
                    if words.len() != 2 {
                        return Err(bad(line_no, format!("malformed cell line {line:?}")));
                    }
                    if current.is_some() {
                        return Err(bad(
                            line_no,
                            format!("cell {} is missing its output line", cells.len() + 1),
                        ));
                    }
                    let k: usize = words[1]
                        .parse()
                        .map_err(|_| bad(line_no, format!("bad cell index {:?}", words[1])))?;
                    if k != cells.len() + 1 {
                        return Err(bad(line_no, format!("cell {k} out of order")));
                    }
                    current = Some(CellGenotype { nodes: Vec::new(), output: 0 });
                }
                "node" => {
                    // node B<i> <- <source> <op_name>
                    if words.len() != 5 || words[2] != "<-" {
                        return Err(bad(line_no, format!("malformed node line {line:?}")));
                    }
                    let cell = current
                        .as_mut()
                        .ok_or_else(|| bad(line_no, "node line outside any cell".to_string()))?;
                    let this = parse_node_name(words[1])?;
                    if this != cell.nodes.len() + 1 {
                        return Err(bad(
                            line_no,
                            format!("expected node B{}, got {}", cell.nodes.len() + 1, words[1]),
                        ));
                    }
                    let source = parse_node_name(words[3])?;
                    let op = OpKind::parse(words[4]).map_err(|e| bad(line_no, e.to_string()))?;
                    cell.nodes.push(NodeChoice { source, op });
                }
                "output" => {
                    if words.len() != 3 || words[1] != "<-" {
                        return Err(bad(line_no, format!("malformed output line {line:?}")));
                    }
                    let mut cell = current
                        .take()
                        .ok_or_else(|| bad(line_no, "output line outside any cell".to_string()))?;
                    let source = parse_node_name(words[2])?;
                    cell.output = source;
                    cells.push(cell);
                }
                other => return Err(bad(line_no, format!("unknown directive {other:?}"))),
            }
        }
        if current.is_some() {
            return Err(Error::Data("genotype ends inside a cell without an output line".to_string()));
        }
        let genotype = Genotype {
            cells,
            sharing: sharing.ok_or_else(|| Error::Data("genotype missing the sharing header".to_string()))?,
            node_attention: node_attention
                .ok_or_else(|| Error::Data("genotype missing the node_attention header".to_string()))?,
        };
        genotype.validate()?;
        Ok(genotype)
    }
}
