//! Reductions to scalars.

use crate::error::Result;
use crate::tensor::Tensor;

use super::expect_same_shape;

pub fn sum(x: &Tensor) -> Result<Tensor> {
    let s: f64 = x.data().iter().sum();
    let n = x.numel();
    Tensor::interior(
        "sum",
        vec![1],
        vec![s],
        vec![x.clone()],
        Box::new(move |g| vec![vec![g[0]; n]]),
    )
}

pub fn mean(x: &Tensor) -> Result<Tensor> {
    let n = x.numel();
    let s: f64 = x.data().iter().sum();
    Tensor::interior(
        "mean",
        vec![1],
        vec![s / n as f64],
        vec![x.clone()],
        Box::new(move |g| vec![vec![g[0] / n as f64; n]]),
    )
}

/// Inner product of two same-shaped tensors, flattened.
pub fn dot(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_same_shape("dot", a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let ad = a.data_arc();
    let bd = b.data_arc();
    Tensor::interior(
        "dot",
        vec![1],
        vec![s],
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let ga = bd.iter().map(|v| v * g[0]).collect();
            let gb = ad.iter().map(|v| v * g[0]).collect();
            vec![ga, gb]
        }),
    )
}
