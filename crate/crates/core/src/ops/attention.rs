//! Multi-head scaled dot-product self-attention, composed from the
//! primitive ops so the backward pass comes for free.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{
    add_row_vector, concat_cols, expect_rank2, expect_vector, matmul, scale, slice_cols,
    softmax_rows, transpose2,
};

/// Self-attention over a sequence-major input `x: [L×D]`. Projections are
/// applied as `x · W + b` with `W: [D×D]`, `b: [D]`. `D` must divide
/// evenly into `heads`; each head attends with scores scaled by
/// `1/sqrt(D/heads)`.
#[allow(clippy::too_many_arguments)]
pub fn multihead_attention(
    x: &Tensor,
    w_q: &Tensor,
    b_q: &Tensor,
    w_k: &Tensor,
    b_k: &Tensor,
    w_v: &Tensor,
    b_v: &Tensor,
    w_o: &Tensor,
    b_o: &Tensor,
    heads: usize,
) -> Result<Tensor> {
    let (_, d) = expect_rank2("multihead_attention", x)?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::invalid(
            "multihead_attention",
            format!("model dim {d} not divisible into {heads} heads"),
        ));
    }
    for w in [w_q, w_k, w_v, w_o] {
        let (r, c) = expect_rank2("multihead_attention", w)?;
        if r != d || c != d {
            return Err(Error::shape(
                "multihead_attention",
                format!("projection must be [{d}×{d}], got {:?}", w.shape()),
            ));
        }
    }
    for b in [b_q, b_k, b_v, b_o] {
        expect_vector("multihead_attention", b, d)?;
    }

    let q = add_row_vector(&matmul(x, w_q)?, b_q)?;
    let k = add_row_vector(&matmul(x, w_k)?, b_k)?;
    let v = add_row_vector(&matmul(x, w_v)?, b_v)?;

    let dh = d / heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut head_outs = Vec::with_capacity(heads);
    for hh in 0..heads {
        let lo = hh * dh;
        let hi = lo + dh;
        let qh = slice_cols(&q, lo, hi)?;
        let kh = slice_cols(&k, lo, hi)?;
        let vh = slice_cols(&v, lo, hi)?;
        let scores = scale(&matmul(&qh, &transpose2(&kh)?)?, inv_sqrt)?;
        let attn = softmax_rows(&scores)?;
        head_outs.push(matmul(&attn, &vh)?);
    }
    let merged = concat_cols(&head_outs)?;
    add_row_vector(&matmul(&merged, w_o)?, b_o)
}
