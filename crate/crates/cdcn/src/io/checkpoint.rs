//! Flat binary container for model state. Layout, all integers little-endian:
//!
//! ```text
//! magic            4 bytes  "CDCK"
//! version          u32      currently 1
//! meta length      u32      followed by that many UTF-8 bytes of JSON metadata
//! entry count      u32
//! per entry:
//!   name length    u32      followed by that many UTF-8 bytes
//!   shape          4 x u32  tensor dimensions [n, c, h, w]
//!   element kind   u8       0 = f32, 1 = f64
//!   data           numel x element width, raw little-endian scalars
//! ```
//!
//! The metadata block describes how to rebuild the network the entries belong
//! to; `ModelMeta` is its schema. Round-trips are bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::layers::NamedTensorMut;
use crate::model::{build_cdcn, CdcnConfig, CdcnPlusPlus, Model};
use crate::nas::{Genotype, SearchPlan, SupernetConfig};
use crate::scalar::{ElemKind, Scalar};
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CDCK";
const VERSION: u32 = 1;

/// Rebuild recipe for a searched network: the explicit channel plan plus the
/// genotype in its textual form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlusPlusMeta {
    pub input_size: usize,
    pub plan: SearchPlan,
    pub theta: crate::layers::ThetaCfg,
    pub fusion: crate::model::Fusion,
    pub genotype: String,
}

/// Rebuild recipe for a supernet whose architecture logits are stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupernetMeta {
    pub config: SupernetConfig,
    /// Catalog operation names in edge order.
    pub ops: Vec<String>,
}

/// JSON metadata stored in the container header. Exactly one of the variant
/// fields matches `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cdcn: Option<CdcnConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cdcnpp: Option<PlusPlusMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supernet: Option<SupernetMeta>,
}

impl ModelMeta {
    pub fn describe<S: Scalar>(model: &Model<S>) -> ModelMeta {
        match model {
            Model::Cdcn(net) => ModelMeta {
                kind: "cdcn".into(),
                cdcn: Some(net.config.clone()),
                cdcnpp: None,
                supernet: None,
            },
            Model::CdcnPp(net) => ModelMeta {
                kind: "cdcnpp".into(),
                cdcn: None,
                cdcnpp: Some(PlusPlusMeta {
                    input_size: net.input_size,
                    plan: net.plan,
                    theta: net.theta,
                    fusion: net.fusion,
                    genotype: net.genotype.emit(),
                }),
                supernet: None,
            },
        }
    }

    /// Rebuilds the described network with fresh weights; checkpoint entries
    /// are applied on top afterwards.
    pub fn build<S: Scalar>(&self, seed: u64) -> Result<Model<S>> {
        match self.kind.as_str() {
            "cdcn" => {
                let config = self.cdcn.as_ref().ok_or_else(|| {
                    Error::Data("metadata kind is cdcn but the cdcn block is missing".into())
                })?;
                Ok(Model::Cdcn(build_cdcn(config, seed)?))
            }
            "cdcnpp" => {
                let meta = self.cdcnpp.as_ref().ok_or_else(|| {
                    Error::Data("metadata kind is cdcnpp but the cdcnpp block is missing".into())
                })?;
                let genotype = Genotype::parse(&meta.genotype)?;
                Ok(Model::CdcnPp(CdcnPlusPlus::from_plan(
                    &genotype,
                    meta.input_size,
                    meta.plan,
                    meta.theta,
                    meta.fusion,
                    seed,
                )?))
            }
            other => Err(Error::Data(format!(
                "metadata kind {other:?} does not name a deployable model"
            ))),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metadata serializes")
    }

    pub fn parse(text: &str) -> Result<ModelMeta> {
        serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("checkpoint metadata does not parse: {e}")))
    }
}

/// In-memory form of a loaded container.
#[derive(Clone, Debug)]
pub struct Checkpoint<S: Scalar> {
    pub meta: String,
    pub entries: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> Checkpoint<S> {
    /// Copies entries into a model's tensors, matched by name. Every model
    /// tensor must be present and every entry must be used, so architecture
    /// drift between save and load is caught loudly.
    pub fn apply_to(&self, tensors: &mut Vec<NamedTensorMut<'_, S>>) -> Result<()> {
        let mut used = vec![false; self.entries.len()];
        for target in tensors.iter_mut() {
            let idx = self
                .entries
                .iter()
                .position(|(name, _)| *name == target.name)
                .ok_or_else(|| {
                    Error::Data(format!("checkpoint has no entry named {:?}", target.name))
                })?;
            let (_, source) = &self.entries[idx];
            if source.shape() != target.tensor.shape() {
                return Err(Error::Data(format!(
                    "entry {:?} has shape {}, the model expects {}",
                    target.name,
                    source.shape(),
                    target.tensor.shape()
                )));
            }
            target.tensor.data_mut().copy_from_slice(source.data());
            used[idx] = true;
        }
        if let Some(idx) = used.iter().position(|u| !u) {
            return Err(Error::Data(format!(
                "checkpoint entry {:?} matches no model tensor",
                self.entries[idx].0
            )));
        }
        Ok(())
    }
}

/// Clones named tensors into owned (name, tensor) pairs for saving.
pub fn snapshot<S: Scalar>(tensors: &[NamedTensorMut<'_, S>]) -> Vec<(String, Tensor<S>)> {
    tensors
        .iter()
        .map(|t| (t.name.clone(), t.tensor.clone()))
        .collect()
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn save_checkpoint<S: Scalar>(
    path: impl AsRef<Path>,
    meta: &str,
    entries: &[(String, Tensor<S>)],
) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, VERSION);
    let meta_bytes = meta.as_bytes();
    push_u32(&mut out, meta_bytes.len() as u32);
    out.extend_from_slice(meta_bytes);
    push_u32(&mut out, entries.len() as u32);
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        push_u32(&mut out, name_bytes.len() as u32);
        out.extend_from_slice(name_bytes);
        for dim in tensor.shape().dims() {
            push_u32(&mut out, dim as u32);
        }
        out.push(S::KIND.tag());
        for v in tensor.data() {
            v.write_le(&mut out);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> ByteCursor<'a> {
    fn bad(&self, at: usize, what: String) -> Error {
        Error::Format {
            path: self.path.to_string(),
            offset: Some(at as u64),
            what,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.bad(self.bytes.len(), format!("file ends inside {what}")));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn utf8(&mut self, len: usize, what: &str) -> Result<&'a str> {
        let at = self.pos;
        let slice = self.take(len, what)?;
        std::str::from_utf8(slice).map_err(|_| self.bad(at, format!("{what} is not valid UTF-8")))
    }
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<S>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
    let mut cur = ByteCursor { bytes: &bytes, pos: 0, path: &name };
    if cur.take(4, "the magic")? != MAGIC {
        return Err(cur.bad(0, "expected CDCK magic".to_string()));
    }
    let version = cur.u32("the version")?;
    if version != VERSION {
        return Err(cur.bad(4, format!("unsupported container version {version}")));
    }
    let meta_len = cur.u32("the metadata length")? as usize;
    let meta = cur.utf8(meta_len, "the metadata")?.to_string();
    let count = cur.u32("the entry count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let label = format!("entry {i}");
        let name_len = cur.u32(&label)? as usize;
        let entry_name = cur.utf8(name_len, &format!("the name of {label}"))?.to_string();
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = cur.u32(&format!("the shape of {entry_name:?}"))? as usize;
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| {
                cur.bad(cur.pos, format!("the shape of {entry_name:?} overflows"))
            })?;
        let kind_at = cur.pos;
        let tag = cur.take(1, &format!("the element kind of {entry_name:?}"))?[0];
        let kind = ElemKind::from_tag(tag)
            .ok_or_else(|| cur.bad(kind_at, format!("unknown element kind tag {tag}")))?;
        if kind != S::KIND {
            return Err(cur.bad(
                kind_at,
                format!(
                    "entry {entry_name:?} holds {kind:?} scalars but {:?} was requested",
                    S::KIND
                ),
            ));
        }
        let raw = cur.take(numel * kind.byte_width(), &format!("the data of {entry_name:?}"))?;
        let mut data = Vec::with_capacity(numel);
        for k in 0..numel {
            data.push(S::read_le(&raw[k * kind.byte_width()..]));
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        entries.push((entry_name, Tensor::from_vec(shape, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(cur.bad(
            cur.pos,
            format!("{} trailing bytes after the last entry", bytes.len() - cur.pos),
        ));
    }
    Ok(Checkpoint { meta, entries })
}
