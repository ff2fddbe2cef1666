//! File formats the toolchain speaks: binary netpbm images for datasets,
//! a flat binary container for model state, and CSV forms for scores,
//! manifests, and training curves. Every format round-trips exactly.

pub mod checkpoint;
pub mod csvio;
pub mod netpbm;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelMeta};
pub use csvio::{
    read_manifest, read_scores, write_loss_curve, write_manifest, write_scores, write_trace,
    ManifestRow,
};
pub use netpbm::{load_pgm, load_ppm, save_pgm, save_ppm};
