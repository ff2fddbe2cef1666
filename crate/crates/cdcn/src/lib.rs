//! Depth-regression anti-spoofing networks built on central difference convolution,
//! with a reverse-mode tape, a cell-based architecture search, synthetic data
//! generation, and the file formats the CLI speaks.
//!
//! Everything is deterministic: the same config and seed produce bit-identical
//! artifacts. Training runs in f32; gradient verification runs the same code in f64.

pub mod cdc;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nas;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use scalar::{ElemKind, Scalar};
pub use tape::{Gradients, Tape};
pub use tensor::{Shape, Tensor};

use std::fmt;

/// Crate-wide error type. `Display` renders a single line suitable for CLI output.
#[derive(Debug)]
pub enum Error {
    /// Tensor shapes incompatible with an operation; names the offending axis.
    Shape { op: &'static str, detail: String },
    /// Invalid configuration or layer construction.
    Config(String),
    /// Tape misuse: backward on a tensor not on the tape, non-scalar loss.
    Tape(String),
    /// NaN or infinite values where finite ones are required.
    Numeric(String),
    /// Dataset or score-set problems (missing classes, label mismatches).
    Data(String),
    /// Malformed file contents; carries byte offset when known.
    Format { path: String, offset: Option<u64>, what: String },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape mismatch in {op}: {detail}"),
            Error::Config(msg) => write!(f, "config: {msg}"),
            Error::Tape(msg) => write!(f, "tape: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric: {msg}"),
            Error::Data(msg) => write!(f, "data: {msg}"),
            Error::Format { path, offset, what } => match offset {
                Some(off) => write!(f, "malformed file {path} at byte {off}: {what}"),
                None => write!(f, "malformed file {path}: {what}"),
            },
            Error::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl Error {
    /// Wraps an I/O error with the path it happened on.
    pub fn io_at(path: impl AsRef<std::path::Path>, e: std::io::Error) -> Error {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.as_ref().display()),
        ))
    }

    /// The message body without the class prefix that `Display` adds.
    pub fn message(&self) -> String {
        match self {
            Error::Shape { op, detail } => format!("shape mismatch in {op}: {detail}"),
            Error::Config(msg) | Error::Tape(msg) | Error::Numeric(msg) | Error::Data(msg) => {
                msg.clone()
            }
            Error::Format { path, offset, what } => match offset {
                Some(off) => format!("malformed file {path} at byte {off}: {what}"),
                None => format!("malformed file {path}: {what}"),
            },
            Error::Io(e) => e.to_string(),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
