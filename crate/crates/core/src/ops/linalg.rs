//! Matrix ops, movement ops, and row-wise softmax.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{expect_rank2, expect_rank3, expect_vector};

/// `[M×K] · [K×N] -> [M×N]`. The inner loops are ordered so the hot loop
/// runs over contiguous rows of both operands; this routine carries most
/// of the pointwise-conv work in the separation models, so it matters.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = expect_rank2("matmul", a)?;
    let (k2, n) = expect_rank2("matmul", b)?;
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner dims differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &bd[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    let ad = a.data_arc();
    let bd = b.data_arc();
    Tensor::interior(
        "matmul",
        vec![m, n],
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            // da = g · b^T : row dots over contiguous rows of g and b.
            let mut ga = vec![0.0; m * k];
            for i in 0..m {
                let grow = &g[i * n..(i + 1) * n];
                let garow = &mut ga[i * k..(i + 1) * k];
                for (kk, gav) in garow.iter_mut().enumerate() {
                    let brow = &bd[kk * n..(kk + 1) * n];
                    *gav = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                }
            }
            // db = a^T · g : axpy into contiguous rows of db.
            let mut gb = vec![0.0; k * n];
            for i in 0..m {
                let grow = &g[i * n..(i + 1) * n];
                let arow = &ad[i * k..(i + 1) * k];
                for (kk, &av) in arow.iter().enumerate() {
                    let gbrow = &mut gb[kk * n..(kk + 1) * n];
                    for (o, &gv) in gbrow.iter_mut().zip(grow) {
                        *o += av * gv;
                    }
                }
            }
            vec![ga, gb]
        }),
    )
}

pub fn transpose2(x: &Tensor) -> Result<Tensor> {
    let (r, c) = expect_rank2("transpose2", x)?;
    let xd = x.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = xd[i * c + j];
        }
    }
    Tensor::interior(
        "transpose2",
        vec![c, r],
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; r * c];
            for j in 0..c {
                for i in 0..r {
                    gx[i * c + j] = g[j * r + i];
                }
            }
            vec![gx]
        }),
    )
}

/// Softmax independently over each row of `[R×C]`, with the usual
/// max-subtraction so large scores cannot overflow.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (r, c) = expect_rank2("softmax_rows", x)?;
    if c == 0 {
        return Err(Error::shape("softmax_rows", "rows are empty"));
    }
    let xd = x.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &xd[i * c..(i + 1) * c];
        let hi = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let orow = &mut out[i * c..(i + 1) * c];
        let mut z = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - hi).exp();
            z += *o;
        }
        for o in orow.iter_mut() {
            *o /= z;
        }
    }
    let saved = out.clone();
    Tensor::interior(
        "softmax_rows",
        vec![r, c],
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                let s = &saved[i * c..(i + 1) * c];
                let grow = &g[i * c..(i + 1) * c];
                let inner: f64 = grow.iter().zip(s).map(|(gv, sv)| gv * sv).sum();
                for ((o, &sv), &gv) in gx[i * c..(i + 1) * c].iter_mut().zip(s).zip(grow) {
                    *o = sv * (gv - inner);
                }
            }
            vec![gx]
        }),
    )
}

/// Columns `[lo, hi)` of a matrix.
pub fn slice_cols(x: &Tensor, lo: usize, hi: usize) -> Result<Tensor> {
    let (r, c) = expect_rank2("slice_cols", x)?;
    if lo >= hi || hi > c {
        return Err(Error::invalid(
            "slice_cols",
            format!("range {lo}..{hi} out of bounds for {c} columns"),
        ));
    }
    let w = hi - lo;
    let xd = x.data();
    let mut out = Vec::with_capacity(r * w);
    for i in 0..r {
        out.extend_from_slice(&xd[i * c + lo..i * c + hi]);
    }
    Tensor::interior(
        "slice_cols",
        vec![r, w],
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                gx[i * c + lo..i * c + hi].copy_from_slice(&g[i * w..(i + 1) * w]);
            }
            vec![gx]
        }),
    )
}

pub fn slice_rows(x: &Tensor, lo: usize, hi: usize) -> Result<Tensor> {
    let (r, c) = expect_rank2("slice_rows", x)?;
    if lo >= hi || hi > r {
        return Err(Error::invalid(
            "slice_rows",
            format!("range {lo}..{hi} out of bounds for {r} rows"),
        ));
    }
    let out = x.data()[lo * c..hi * c].to_vec();
    let h = hi - lo;
    Tensor::interior(
        "slice_rows",
        vec![h, c],
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; r * c];
            gx[lo * c..hi * c].copy_from_slice(g);
            vec![gx]
        }),
    )
}

/// Horizontal concatenation of matrices with equal row counts.
pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::invalid("concat_cols", "no tensors given"));
    }
    let (r, _) = expect_rank2("concat_cols", &parts[0])?;
    let mut widths = Vec::with_capacity(parts.len());
    let mut total = 0usize;
    for p in parts {
        let (pr, pc) = expect_rank2("concat_cols", p)?;
        if pr != r {
            return Err(Error::shape(
                "concat_cols",
                format!("row counts differ: {r} vs {pr}"),
            ));
        }
        widths.push(pc);
        total += pc;
    }
    let mut out = Vec::with_capacity(r * total);
    for i in 0..r {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
        }
    }
    let widths_b = widths.clone();
    Tensor::interior(
        "concat_cols",
        vec![r, total],
        out,
        parts.to_vec(),
        Box::new(move |g| {
            let mut gs: Vec<Vec<f64>> = widths_b.iter().map(|&w| vec![0.0; r * w]).collect();
            for i in 0..r {
                let mut off = 0;
                for (gpart, &w) in gs.iter_mut().zip(&widths_b) {
                    gpart[i * w..(i + 1) * w]
                        .copy_from_slice(&g[i * total + off..i * total + off + w]);
                    off += w;
                }
            }
            gs
        }),
    )
}

/// Vertical concatenation of matrices with equal column counts.
pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::invalid("concat_rows", "no tensors given"));
    }
    let (_, c) = expect_rank2("concat_rows", &parts[0])?;
    let mut heights = Vec::with_capacity(parts.len());
    let mut out = Vec::new();
    for p in parts {
        let (pr, pc) = expect_rank2("concat_rows", p)?;
        if pc != c {
            return Err(Error::shape(
                "concat_rows",
                format!("column counts differ: {c} vs {pc}"),
            ));
        }
        heights.push(pr);
        out.extend_from_slice(p.data());
    }
    let total: usize = heights.iter().sum();
    let heights_b = heights.clone();
    Tensor::interior(
        "concat_rows",
        vec![total, c],
        out,
        parts.to_vec(),
        Box::new(move |g| {
            let mut gs = Vec::with_capacity(heights_b.len());
            let mut off = 0;
            for &h in &heights_b {
                gs.push(g[off * c..(off + h) * c].to_vec());
                off += h;
            }
            gs
        }),
    )
}

/// `x[r,c] + v[c]` broadcast down the rows (bias over the feature dim of
/// a sequence-major matrix).
pub fn add_row_vector(x: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (r, c) = expect_rank2("add_row_vector", x)?;
    expect_vector("add_row_vector", v, c)?;
    let xd = x.data();
    let vd = v.data();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(xd[i * c + j] + vd[j]);
        }
    }
    Tensor::interior(
        "add_row_vector",
        vec![r, c],
        out,
        vec![x.clone(), v.clone()],
        Box::new(move |g| {
            let mut gv = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    gv[j] += g[i * c + j];
                }
            }
            vec![g.to_vec(), gv]
        }),
    )
}

/// `x[c,l] + v[c]` broadcast along each row (bias over the channel dim of
/// a channel-major map).
pub fn add_col_vector(x: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (c, l) = expect_rank2("add_col_vector", x)?;
    expect_vector("add_col_vector", v, c)?;
    let xd = x.data();
    let vd = v.data();
    let mut out = Vec::with_capacity(c * l);
    for i in 0..c {
        for j in 0..l {
            out.push(xd[i * l + j] + vd[i]);
        }
    }
    Tensor::interior(
        "add_col_vector",
        vec![c, l],
        out,
        vec![x.clone(), v.clone()],
        Box::new(move |g| {
            let gv = (0..c).map(|i| g[i * l..(i + 1) * l].iter().sum()).collect();
            vec![g.to_vec(), gv]
        }),
    )
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if n != x.numel() {
        return Err(Error::shape(
            "reshape",
            format!("cannot view {:?} as {:?}", x.shape(), shape),
        ));
    }
    Tensor::interior(
        "reshape",
        shape.to_vec(),
        x.to_vec(),
        vec![x.clone()],
        Box::new(move |g| vec![g.to_vec()]),
    )
}

/// Repeats a one-element tensor into a `[n]` vector; the gradient sums
/// back. Lets graph-valued scalars (a mean, say) be subtracted from a
/// whole signal.
pub fn broadcast_scalar(s: &Tensor, n: usize) -> Result<Tensor> {
    if s.numel() != 1 {
        return Err(Error::shape(
            "broadcast_scalar",
            format!("expected one element, got shape {:?}", s.shape()),
        ));
    }
    if n == 0 {
        return Err(Error::invalid("broadcast_scalar", "target length is zero"));
    }
    let v = s.data()[0];
    Tensor::interior(
        "broadcast_scalar",
        vec![n],
        vec![v; n],
        vec![s.clone()],
        Box::new(move |g| vec![vec![g.iter().sum()]]),
    )
}

/// Crops or zero-pads the last axis of `[C×L]` to exactly `len`. Used to
/// pin decoder output back to the mixture length.
pub fn fit_length(x: &Tensor, len: usize) -> Result<Tensor> {
    let (c, l) = expect_rank2("fit_length", x)?;
    if len == 0 {
        return Err(Error::invalid("fit_length", "target length is zero"));
    }
    let keep = l.min(len);
    let xd = x.data();
    let mut out = vec![0.0; c * len];
    for i in 0..c {
        out[i * len..i * len + keep].copy_from_slice(&xd[i * l..i * l + keep]);
    }
    Tensor::interior(
        "fit_length",
        vec![c, len],
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; c * l];
            for i in 0..c {
                gx[i * l..i * l + keep].copy_from_slice(&g[i * len..i * len + keep]);
            }
            vec![gx]
        }),
    )
}

fn permute3(data: &[f64], dims: [usize; 3], perm: [usize; 3]) -> Vec<f64> {
    let out_dims = [dims[perm[0]], dims[perm[1]], dims[perm[2]]];
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut out = vec![0.0; data.len()];
    let mut idx = [0usize; 3];
    let mut o = 0;
    for a in 0..out_dims[0] {
        idx[perm[0]] = a;
        for b in 0..out_dims[1] {
            idx[perm[1]] = b;
            for c in 0..out_dims[2] {
                idx[perm[2]] = c;
                out[o] = data[idx[0] * strides[0] + idx[1] * strides[1] + idx[2] * strides[2]];
                o += 1;
            }
        }
    }
    out
}

/// Axis permutation of a rank-3 tensor; `perm[i]` names the source axis
/// that becomes output axis `i`.
pub fn transpose3(x: &Tensor, perm: [usize; 3]) -> Result<Tensor> {
    let (a, b, c) = expect_rank3("transpose3", x)?;
    let mut seen = [false; 3];
    for &p in &perm {
        if p > 2 || seen[p] {
            return Err(Error::invalid("transpose3", format!("bad permutation {perm:?}")));
        }
        seen[p] = true;
    }
    let dims = [a, b, c];
    let out = permute3(x.data(), dims, perm);
    let out_dims = vec![dims[perm[0]], dims[perm[1]], dims[perm[2]]];
    // Inverse permutation for the backward pass.
    let mut inv = [0usize; 3];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    let od = [out_dims[0], out_dims[1], out_dims[2]];
    Tensor::interior(
        "transpose3",
        out_dims,
        out,
        vec![x.clone()],
        Box::new(move |g| vec![permute3(g, od, inv)]),
    )
}

/// Slice `x[i, :, :]` of `[A×B×C]`.
pub fn slice3_first(x: &Tensor, i: usize) -> Result<Tensor> {
    let (a, b, c) = expect_rank3("slice3_first", x)?;
    if i >= a {
        return Err(Error::invalid(
            "slice3_first",
            format!("index {i} out of bounds for first dim {a}"),
        ));
    }
    let out = x.data()[i * b * c..(i + 1) * b * c].to_vec();
    Tensor::interior(
        "slice3_first",
        vec![b, c],
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; a * b * c];
            gx[i * b * c..(i + 1) * b * c].copy_from_slice(g);
            vec![gx]
        }),
    )
}

/// Stacks equal-shaped matrices into `[N×B×C]`.
pub fn stack3_first(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::invalid("stack3_first", "no tensors given"));
    }
    let (b, c) = expect_rank2("stack3_first", &parts[0])?;
    let mut out = Vec::with_capacity(parts.len() * b * c);
    for p in parts {
        let (pb, pc) = expect_rank2("stack3_first", p)?;
        if (pb, pc) != (b, c) {
            return Err(Error::shape(
                "stack3_first",
                format!("expected all parts [{b}×{c}], got {:?}", p.shape()),
            ));
        }
        out.extend_from_slice(p.data());
    }
    let n = parts.len();
    Tensor::interior(
        "stack3_first",
        vec![n, b, c],
        out,
        parts.to_vec(),
        Box::new(move |g| {
            (0..n).map(|i| g[i * b * c..(i + 1) * b * c].to_vec()).collect()
        }),
    )
}
