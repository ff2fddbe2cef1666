//! Differentiable tensor operations. Every op computes its forward value and,
//! when an input is tracked on the tape, appends one backward node.

pub mod batchnorm;
pub mod conv;
pub mod elementwise;
pub mod pool;
pub mod structure;

pub use batchnorm::{batchnorm, BatchNormSpec};
pub use conv::{conv2d, ConvSpec};
pub use elementwise::{
    add, hadamard, mean_all, mul_attn, relu, scale_by, scale_const, sigmoid, softmax_last, sub,
    weighted_sum,
};
pub use pool::{channel_avg, channel_max, maxpool2x2};
pub use structure::{center_crop, concat_channels, split_channels};
