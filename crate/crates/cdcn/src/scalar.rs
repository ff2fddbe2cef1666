//! Element-type abstraction. Training runs in f32; gradient checks run in f64.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// On-disk element tag used by the checkpoint container.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ElemKind {
    F32,
    F64,
}

impl ElemKind {
    pub fn tag(self) -> u8 {
        match self {
            ElemKind::F32 => 0,
            ElemKind::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<ElemKind> {
        match tag {
            0 => Some(ElemKind::F32),
            1 => Some(ElemKind::F64),
            _ => None,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            ElemKind::F32 => 4,
            ElemKind::F64 => 8,
        }
    }
}

/// Floating-point element of every tensor in the crate.
pub trait Scalar:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    const KIND: ElemKind;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one scalar from `bytes`, which must hold at least `KIND.byte_width()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const KIND: ElemKind = ElemKind::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Scalar for f64 {
    const KIND: ElemKind = ElemKind::F64;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}
