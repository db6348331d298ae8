//! Differentiable operations on [`Tensor`](crate::tensor::Tensor)s.
//!
//! Conventions shared by every op here:
//!
//! * Shapes are validated up front and errors name the offending op.
//! * Outputs are checked for NaN/inf (the tensor constructor does this).
//! * Backward closures are exact gradients, verified against central
//!   finite differences in `tests/gradcheck.rs`.
//! * 1-D signals are `[L]`, channel-major maps are `[C×L]` row-major,
//!   sequence-major matrices are `[L×D]`.

mod attention;
mod conv;
mod elementwise;
mod gru;
mod linalg;
mod norm;
mod reduce;

pub use attention::multihead_attention;
pub use conv::{conv1d, depthwise_conv1d, strided_conv1d, transposed_conv1d, Pad};
pub use elementwise::{
    add, add_scalar, div, ln, log10, maximum, mul, neg, prelu, relu, scale, sigmoid, sub, tanh,
};
pub use gru::{gru, Direction};
pub use linalg::{
    add_col_vector, add_row_vector, broadcast_scalar, concat_cols, concat_rows, fit_length,
    matmul, reshape, slice3_first, slice_cols, slice_rows, softmax_rows, stack3_first, transpose2,
    transpose3,
};
pub use norm::{frame_layer_norm, global_layer_norm, row_layer_norm};
pub use reduce::{dot, mean, sum};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn expect_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ))
    }
}

pub(crate) fn expect_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

pub(crate) fn expect_rank3(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(Error::shape(op, format!("expected rank 3, got shape {s:?}"))),
    }
}

pub(crate) fn expect_vector(op: &'static str, t: &Tensor, len: usize) -> Result<()> {
    if t.shape() == [len] {
        Ok(())
    } else {
        Err(Error::shape(
            op,
            format!("expected a vector of length {len}, got shape {:?}", t.shape()),
        ))
    }
}
