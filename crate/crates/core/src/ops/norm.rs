//! Layer normalizations over channel maps `[C×L]`.
//!
//! Global layer norm shares one mean/variance across all channels and
//! frames; frame layer norm normalizes each frame over its channels
//! independently, which keeps the op causal-free and local in time (the
//! receptive-field probe relies on that locality).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{expect_rank2, expect_vector};

/// Backward of `y = gain * xhat + bias` where `xhat = (x - mu) * inv` was
/// normalized over a set of `n` elements. Standard layer-norm gradient:
/// `dx = inv * (gxh - mean(gxh) - xhat * mean(gxh * xhat))` with means
/// over the normalization set.
struct NormSaved {
    xhat: Vec<f64>,
    inv: Vec<f64>, // one entry per normalization set
}

fn check_norm_args(op: &'static str, x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<(usize, usize)> {
    let (c, l) = expect_rank2(op, x)?;
    expect_vector(op, gain, c)?;
    expect_vector(op, bias, c)?;
    if !(eps > 0.0) {
        return Err(Error::invalid(op, format!("eps must be positive, got {eps}")));
    }
    Ok((c, l))
}

/// Global layer norm: one mean and variance over the whole `[C×L]` map,
/// then a per-channel affine `gain[c] * xhat + bias[c]`.
pub fn global_layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let (c, l) = check_norm_args("global_layer_norm", x, gain, bias, eps)?;
    let n = (c * l) as f64;
    let xd = x.data();
    let mu = xd.iter().sum::<f64>() / n;
    let var = xd.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();

    let gd = gain.data();
    let bd = bias.data();
    let mut xhat = Vec::with_capacity(c * l);
    let mut out = Vec::with_capacity(c * l);
    for ch in 0..c {
        for t in 0..l {
            let h = (xd[ch * l + t] - mu) * inv;
            xhat.push(h);
            out.push(gd[ch] * h + bd[ch]);
        }
    }

    let saved = NormSaved { xhat, inv: vec![inv] };
    let gd = gain.data_arc();
    Tensor::interior(
        "global_layer_norm",
        vec![c, l],
        out,
        vec![x.clone(), gain.clone(), bias.clone()],
        Box::new(move |g| {
            let inv = saved.inv[0];
            let mut ggain = vec![0.0; c];
            let mut gbias = vec![0.0; c];
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for ch in 0..c {
                for t in 0..l {
                    let i = ch * l + t;
                    let gxh = g[i] * gd[ch];
                    ggain[ch] += g[i] * saved.xhat[i];
                    gbias[ch] += g[i];
                    s1 += gxh;
                    s2 += gxh * saved.xhat[i];
                }
            }
            s1 /= n;
            s2 /= n;
            let mut gx = vec![0.0; c * l];
            for ch in 0..c {
                for t in 0..l {
                    let i = ch * l + t;
                    let gxh = g[i] * gd[ch];
                    gx[i] = inv * (gxh - s1 - saved.xhat[i] * s2);
                }
            }
            vec![gx, ggain, gbias]
        }),
    )
}

/// Frame layer norm: every frame (column) is normalized over its channels
/// on its own, then the shared per-channel affine is applied.
pub fn frame_layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let (c, l) = check_norm_args("frame_layer_norm", x, gain, bias, eps)?;
    let n = c as f64;
    let xd = x.data();
    let gd = gain.data();
    let bd = bias.data();

    let mut xhat = vec![0.0; c * l];
    let mut out = vec![0.0; c * l];
    let mut invs = vec![0.0; l];
    for t in 0..l {
        let mut mu = 0.0;
        for ch in 0..c {
            mu += xd[ch * l + t];
        }
        mu /= n;
        let mut var = 0.0;
        for ch in 0..c {
            let d = xd[ch * l + t] - mu;
            var += d * d;
        }
        var /= n;
        let inv = 1.0 / (var + eps).sqrt();
        invs[t] = inv;
        for ch in 0..c {
            let i = ch * l + t;
            let h = (xd[i] - mu) * inv;
            xhat[i] = h;
            out[i] = gd[ch] * h + bd[ch];
        }
    }

    let saved = NormSaved { xhat, inv: invs };
    let gd = gain.data_arc();
    Tensor::interior(
        "frame_layer_norm",
        vec![c, l],
        out,
        vec![x.clone(), gain.clone(), bias.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; c * l];
            let mut ggain = vec![0.0; c];
            let mut gbias = vec![0.0; c];
            for t in 0..l {
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for ch in 0..c {
                    let i = ch * l + t;
                    let gxh = g[i] * gd[ch];
                    ggain[ch] += g[i] * saved.xhat[i];
                    gbias[ch] += g[i];
                    s1 += gxh;
                    s2 += gxh * saved.xhat[i];
                }
                s1 /= n;
                s2 /= n;
                let inv = saved.inv[t];
                for ch in 0..c {
                    let i = ch * l + t;
                    let gxh = g[i] * gd[ch];
                    gx[i] = inv * (gxh - s1 - saved.xhat[i] * s2);
                }
            }
            vec![gx, ggain, gbias]
        }),
    )
}

/// Row layer norm for sequence-major maps `[L×D]`: each row (time step)
/// is normalized over its `D` features, with the affine indexed by the
/// feature. Equivalent to frame layer norm on the transposed layout, kept
/// separate so sequence-major attention stacks skip two transposes.
pub fn row_layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let op = "row_layer_norm";
    let (l, d) = expect_rank2(op, x)?;
    expect_vector(op, gain, d)?;
    expect_vector(op, bias, d)?;
    if !(eps > 0.0) {
        return Err(Error::invalid(op, format!("eps must be positive, got {eps}")));
    }
    let n = d as f64;
    let xd = x.data();
    let gd = gain.data();
    let bd = bias.data();

    let mut xhat = vec![0.0; l * d];
    let mut out = vec![0.0; l * d];
    let mut invs = vec![0.0; l];
    for r in 0..l {
        let row = &xd[r * d..(r + 1) * d];
        let mu = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        invs[r] = inv;
        for c in 0..d {
            let i = r * d + c;
            let h = (xd[i] - mu) * inv;
            xhat[i] = h;
            out[i] = gd[c] * h + bd[c];
        }
    }

    let saved = NormSaved { xhat, inv: invs };
    let gd = gain.data_arc();
    Tensor::interior(
        op,
        vec![l, d],
        out,
        vec![x.clone(), gain.clone(), bias.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; l * d];
            let mut ggain = vec![0.0; d];
            let mut gbias = vec![0.0; d];
            for r in 0..l {
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for c in 0..d {
                    let i = r * d + c;
                    let gxh = g[i] * gd[c];
                    ggain[c] += g[i] * saved.xhat[i];
                    gbias[c] += g[i];
                    s1 += gxh;
                    s2 += gxh * saved.xhat[i];
                }
                s1 /= n;
                s2 /= n;
                let inv = saved.inv[r];
                for c in 0..d {
                    let i = r * d + c;
                    let gxh = g[i] * gd[c];
                    gx[i] = inv * (gxh - s1 - saved.xhat[i] * s2);
                }
            }
            vec![gx, ggain, gbias]
        }),
    )
}
