//! Differentiable tensor operations.
//!
//! Every op computes its forward result eagerly and, when any input is
//! attached to a [`crate::tensor::Tape`], records a backward closure on that
//! tape. Kernels may parallelize over disjoint output partitions; per-element
//! accumulation order is fixed, so results are bit-identical regardless of
//! thread count.

mod conv;
mod norm;
mod pointwise;
mod pool;
mod resize;
mod shape_ops;


pub use conv::conv2d;
pub use norm::{batch_norm, BnMode};
pub use pointwise::{
    add, mean_rows, mul, mul_channel, mul_item, relu, scale, select_col, sigmoid, softmax_rows,
    softmax_vec, stop_gradient,
};
pub use pool::{pool2d, PoolMode};
pub use resize::resize_bilinear;
pub use shape_ops::{affine, concat_channels, quad_cat, quad_split, split_channels};
