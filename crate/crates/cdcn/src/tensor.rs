//! Dense rank-4 tensors in NCHW layout. Data is contiguous, row-major, and
//! shared copy-on-write so tape nodes can capture inputs cheaply.

use std::fmt;
use std::sync::Arc;

use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape { n, c, h, w }
    }

    pub fn numel(self) -> usize {
        self.n * self.c * self.h * self.w
    }

    #[inline]
    pub fn idx(self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn dims(self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.n, self.c, self.h, self.w)
    }
}

/// Reference into a tape: which tape (by nonce) and which value slot.
#[derive(Clone, Copy, Debug)]
pub(crate) struct TapeRef {
    pub tape: u64,
    pub slot: usize,
}

/// Value-semantic tensor. Cloning shares the underlying buffer; mutation
/// through `data_mut` copies only when the buffer is shared.
#[derive(Clone)]
pub struct Tensor<S: Scalar> {
    shape: Shape,
    data: Arc<Vec<S>>,
    pub(crate) node: Option<TapeRef>,
    requires_grad: bool,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: Shape) -> Tensor<S> {
        Tensor::full(shape, S::zero())
    }

    pub fn full(shape: Shape, value: S) -> Tensor<S> {
        Tensor {
            shape,
            data: Arc::new(vec![value; shape.numel()]),
            node: None,
            requires_grad: false,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<S>) -> Result<Tensor<S>> {
        if data.len() != shape.numel() {
            return Err(Error::Shape {
                op: "from_vec",
                detail: format!("shape {shape} wants {} elements, got {}", shape.numel(), data.len()),
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            node: None,
            requires_grad: false,
        })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> S) -> Tensor<S> {
        let data = (0..shape.numel()).map(&mut f).collect();
        Tensor {
            shape,
            data: Arc::new(data),
            node: None,
            requires_grad: false,
        }
    }

    /// A 1x1x1x1 tensor holding one value.
    pub fn scalar_tensor(value: S) -> Tensor<S> {
        Tensor::full(Shape::new(1, 1, 1, 1), value)
    }

    pub fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut SplitMix64) -> Tensor<S> {
        Tensor::from_fn(shape, |_| S::from_f64(rng.uniform(lo, hi)))
    }

    /// Kaiming-uniform fan-in init for a conv weight [out_c, in_c, k, k]:
    /// U(-b, b) with b = sqrt(6 / fan_in), fan_in = in_c * k * k.
    pub fn kaiming_conv(out_c: usize, in_c: usize, k: usize, rng: &mut SplitMix64) -> Tensor<S> {
        let fan_in = (in_c * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        Tensor::uniform(Shape::new(out_c, in_c, k, k), -bound, bound, rng)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Mutable access; copies the buffer if shared. Mutating a tensor that an
    /// un-consumed tape recorded leaves the tape's captured value unchanged.
    pub fn data_mut(&mut self) -> &mut [S] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub(crate) fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    /// The single value of a 1x1x1x1 tensor.
    pub fn scalar(&self) -> Option<S> {
        if self.shape.numel() == 1 {
            Some(self.data[0])
        } else {
            None
        }
    }

    /// Copy without tape membership or grad flag.
    pub fn detached(&self) -> Tensor<S> {
        Tensor {
            shape: self.shape,
            data: Arc::clone(&self.data),
            node: None,
            requires_grad: false,
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, S> {
        self.data.iter()
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> S {
        self.data[self.shape.idx(n, c, h, w)]
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor<S>) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Mean of all elements, in f64.
    pub fn mean_f64(&self) -> f64 {
        let n = self.shape.numel();
        if n == 0 {
            return 0.0;
        }
        self.data.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{} requires_grad={}", self.shape, self.requires_grad)?;
        if self.shape.numel() <= 8 {
            write!(f, " data={:?}", &self.data[..])?;
        }
        Ok(())
    }
}
