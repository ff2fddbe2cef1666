//! One module per subcommand. Each declares its config key universe and a
//! `run(&CliArgs)` entry point.

pub mod derive;
pub mod eval;
pub mod gen;
pub mod gradcheck;
pub mod infer;
pub mod search;
pub mod train;

use std::path::PathBuf;

use cdcn::io::checkpoint::{load_checkpoint, Checkpoint, ModelMeta};
use cdcn::model::Model;
use cdcn::{Error, Result};

use crate::config::RunConfig;

/// Creates the run's output directory and returns its path.
pub fn prepare_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out_dir = PathBuf::from(cfg.required("out_dir")?);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io_at(&out_dir, e))?;
    Ok(out_dir)
}

/// Loads a model checkpoint: rebuilds the architecture from the metadata,
/// then restores every stored tensor.
pub fn load_model(path: &std::path::Path) -> Result<Model<f32>> {
    let ck: Checkpoint<f32> = load_checkpoint(path)?;
    let meta = ModelMeta::parse(&ck.meta)?;
    let mut model = meta.build::<f32>(0)?;
    ck.apply_to(&mut model.tensors_mut())?;
    Ok(model)
}
