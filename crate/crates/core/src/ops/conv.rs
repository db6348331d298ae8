//! 1-D convolutions: dense (with dilation), depthwise, strided, and
//! transposed. Layouts are channel-major: signals `[C×L]`, dense weights
//! `[C_out×C_in×P]`, depthwise weights `[C×P]`.
//!
//! The inner loops are all written as contiguous axpy/dot over the time
//! axis so the compiler can vectorize them; the training loop spends most
//! of its time here and in `matmul`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{expect_rank2, expect_rank3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pad {
    /// No padding; output shrinks by `(P-1)*dilation`.
    None,
    /// Zero padding split evenly between the ends (left gets the smaller
    /// half when the total is odd); output keeps the input length.
    Same,
}

/// Valid output range for one filter tap: `out[t] += w * x[t + off]`
/// requires `0 <= t + off < l` and `0 <= t < lout`.
fn tap_range(off: isize, lout: usize, l: usize) -> (usize, usize) {
    let lo = if off < 0 { (-off) as usize } else { 0 };
    let hi_signed = (l as isize - off).min(lout as isize);
    let hi = if hi_signed < lo as isize { lo } else { hi_signed as usize };
    (lo, hi)
}

fn conv_geometry(op: &'static str, l: usize, p: usize, dilation: usize, pad: Pad) -> Result<(usize, usize)> {
    if p == 0 || dilation == 0 {
        return Err(Error::invalid(op, "kernel length and dilation must be positive"));
    }
    let span = (p - 1) * dilation;
    match pad {
        Pad::None => {
            if l <= span {
                return Err(Error::shape(
                    op,
                    format!("input length {l} too short for span {} without padding", span + 1),
                ));
            }
            Ok((l - span, 0))
        }
        Pad::Same => Ok((l, span / 2)),
    }
}

/// Dense 1-D convolution `[C_in×L] * [C_out×C_in×P] -> [C_out×L']` with
/// dilation. `[[1,2,3]] * [[[1,1]]]` gives `[[3,5]]`; with dilation 2,
/// `[[1,2,3,4,5]]` gives `[[4,6,8]]`.
pub fn conv1d(x: &Tensor, w: &Tensor, dilation: usize, pad: Pad) -> Result<Tensor> {
    let (cin, l) = expect_rank2("conv1d", x)?;
    let (cout, wcin, p) = expect_rank3("conv1d", w)?;
    if wcin != cin {
        return Err(Error::shape(
            "conv1d",
            format!("input has {cin} channels, weight expects {wcin}"),
        ));
    }
    let (lout, left) = conv_geometry("conv1d", l, p, dilation, pad)?;

    let xd = x.data();
    let wd = w.data();
    let mut out = vec![0.0; cout * lout];
    for o in 0..cout {
        let orow = &mut out[o * lout..(o + 1) * lout];
        for c in 0..cin {
            let xrow = &xd[c * l..(c + 1) * l];
            let wrow = &wd[(o * cin + c) * p..(o * cin + c + 1) * p];
            for (pi, &wv) in wrow.iter().enumerate() {
                let off = (pi * dilation) as isize - left as isize;
                let (lo, hi) = tap_range(off, lout, l);
                let src = &xrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
                for (dst, &s) in orow[lo..hi].iter_mut().zip(src) {
                    *dst += wv * s;
                }
            }
        }
    }

    let xd = x.data_arc();
    let wd = w.data_arc();
    Tensor::interior(
        "conv1d",
        vec![cout, lout],
        out,
        vec![x.clone(), w.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; cin * l];
            let mut gw = vec![0.0; cout * cin * p];
            for o in 0..cout {
                let grow = &g[o * lout..(o + 1) * lout];
                for c in 0..cin {
                    let xrow = &xd[c * l..(c + 1) * l];
                    let gxrow = &mut gx[c * l..(c + 1) * l];
                    for pi in 0..p {
                        let off = (pi * dilation) as isize - left as isize;
                        let (lo, hi) = tap_range(off, lout, l);
                        let a = (lo as isize + off) as usize;
                        let b = (hi as isize + off) as usize;
                        let wv = wd[(o * cin + c) * p + pi];
                        let mut acc = 0.0;
                        for ((gxv, &gv), &xv) in gxrow[a..b]
                            .iter_mut()
                            .zip(&grow[lo..hi])
                            .zip(&xrow[a..b])
                        {
                            *gxv += wv * gv;
                            acc += gv * xv;
                        }
                        gw[(o * cin + c) * p + pi] += acc;
                    }
                }
            }
            vec![gx, gw]
        }),
    )
}

/// Depthwise 1-D convolution: channel `c` of `[C×L]` is filtered by row
/// `c` of `[C×P]` independently.
pub fn depthwise_conv1d(x: &Tensor, w: &Tensor, dilation: usize, pad: Pad) -> Result<Tensor> {
    let (c, l) = expect_rank2("depthwise_conv1d", x)?;
    let (wc, p) = expect_rank2("depthwise_conv1d", w)?;
    if wc != c {
        return Err(Error::shape(
            "depthwise_conv1d",
            format!("input has {c} channels, weight has {wc} rows"),
        ));
    }
    let (lout, left) = conv_geometry("depthwise_conv1d", l, p, dilation, pad)?;

    let xd = x.data();
    let wd = w.data();
    let mut out = vec![0.0; c * lout];
    for ch in 0..c {
        let xrow = &xd[ch * l..(ch + 1) * l];
        let orow = &mut out[ch * lout..(ch + 1) * lout];
        for (pi, &wv) in wd[ch * p..(ch + 1) * p].iter().enumerate() {
            let off = (pi * dilation) as isize - left as isize;
            let (lo, hi) = tap_range(off, lout, l);
            let src = &xrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
            for (dst, &s) in orow[lo..hi].iter_mut().zip(src) {
                *dst += wv * s;
            }
        }
    }

    let xd = x.data_arc();
    let wd = w.data_arc();
    Tensor::interior(
        "depthwise_conv1d",
        vec![c, lout],
        out,
        vec![x.clone(), w.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; c * l];
            let mut gw = vec![0.0; c * p];
            for ch in 0..c {
                let grow = &g[ch * lout..(ch + 1) * lout];
                let xrow = &xd[ch * l..(ch + 1) * l];
                let gxrow = &mut gx[ch * l..(ch + 1) * l];
                for pi in 0..p {
                    let off = (pi * dilation) as isize - left as isize;
                    let (lo, hi) = tap_range(off, lout, l);
                    let a = (lo as isize + off) as usize;
                    let b = (hi as isize + off) as usize;
                    let wv = wd[ch * p + pi];
                    let mut acc = 0.0;
                    for ((gxv, &gv), &xv) in
                        gxrow[a..b].iter_mut().zip(&grow[lo..hi]).zip(&xrow[a..b])
                    {
                        *gxv += wv * gv;
                        acc += gv * xv;
                    }
                    gw[ch * p + pi] += acc;
                }
            }
            vec![gx, gw]
        }),
    )
}

/// Strided valid convolution `[C_in×L] * [C_out×C_in×P] -> [C_out×L']`,
/// `L' = (L - P) / stride + 1`. This is the analysis front end (the
/// encoder); trailing samples that do not fill a full window are ignored.
pub fn strided_conv1d(x: &Tensor, w: &Tensor, stride: usize) -> Result<Tensor> {
    let (cin, l) = expect_rank2("strided_conv1d", x)?;
    let (cout, wcin, p) = expect_rank3("strided_conv1d", w)?;
    if wcin != cin {
        return Err(Error::shape(
            "strided_conv1d",
            format!("input has {cin} channels, weight expects {wcin}"),
        ));
    }
    if stride == 0 {
        return Err(Error::invalid("strided_conv1d", "stride must be positive"));
    }
    if l < p {
        return Err(Error::shape(
            "strided_conv1d",
            format!("input length {l} shorter than window {p}"),
        ));
    }
    let lout = (l - p) / stride + 1;

    let xd = x.data();
    let wd = w.data();
    let mut out = vec![0.0; cout * lout];
    for o in 0..cout {
        let orow = &mut out[o * lout..(o + 1) * lout];
        for c in 0..cin {
            let xrow = &xd[c * l..(c + 1) * l];
            let wrow = &wd[(o * cin + c) * p..(o * cin + c + 1) * p];
            for (t, dst) in orow.iter_mut().enumerate() {
                let seg = &xrow[t * stride..t * stride + p];
                *dst += wrow.iter().zip(seg).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }

    let xd = x.data_arc();
    let wd = w.data_arc();
    Tensor::interior(
        "strided_conv1d",
        vec![cout, lout],
        out,
        vec![x.clone(), w.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; cin * l];
            let mut gw = vec![0.0; cout * cin * p];
            for o in 0..cout {
                let grow = &g[o * lout..(o + 1) * lout];
                for c in 0..cin {
                    let xrow = &xd[c * l..(c + 1) * l];
                    let gxrow = &mut gx[c * l..(c + 1) * l];
                    let wrow = &wd[(o * cin + c) * p..(o * cin + c + 1) * p];
                    let gwrow = &mut gw[(o * cin + c) * p..(o * cin + c + 1) * p];
                    for (t, &gv) in grow.iter().enumerate() {
                        let a = t * stride;
                        for pi in 0..p {
                            gxrow[a + pi] += wrow[pi] * gv;
                            gwrow[pi] += xrow[a + pi] * gv;
                        }
                    }
                }
            }
            vec![gx, gw]
        }),
    )
}

/// Transposed (fractionally strided) convolution
/// `[C_0×L] * [C_0×C_1×P] -> [C_1×(L-1)*stride + P]`.
///
/// With the same weight tensor, this is the exact adjoint of
/// [`strided_conv1d`] in the first argument whenever `(L - P)` is a
/// multiple of the stride: `<sconv(x, w), y> == <x, tconv(y, w)>`. This is
/// the synthesis back end (the decoder).
pub fn transposed_conv1d(x: &Tensor, w: &Tensor, stride: usize) -> Result<Tensor> {
    let (c0, l) = expect_rank2("transposed_conv1d", x)?;
    let (wc0, c1, p) = expect_rank3("transposed_conv1d", w)?;
    if wc0 != c0 {
        return Err(Error::shape(
            "transposed_conv1d",
            format!("input has {c0} channels, weight expects {wc0}"),
        ));
    }
    if stride == 0 || p == 0 {
        return Err(Error::invalid(
            "transposed_conv1d",
            "stride and kernel length must be positive",
        ));
    }
    let lout = (l - 1) * stride + p;

    let xd = x.data();
    let wd = w.data();
    let mut out = vec![0.0; c1 * lout];
    for c in 0..c0 {
        let xrow = &xd[c * l..(c + 1) * l];
        for j in 0..c1 {
            let wrow = &wd[(c * c1 + j) * p..(c * c1 + j + 1) * p];
            let orow = &mut out[j * lout..(j + 1) * lout];
            for (t, &xv) in xrow.iter().enumerate() {
                let a = t * stride;
                for (dst, &wv) in orow[a..a + p].iter_mut().zip(wrow) {
                    *dst += xv * wv;
                }
            }
        }
    }

    let xd = x.data_arc();
    let wd = w.data_arc();
    Tensor::interior(
        "transposed_conv1d",
        vec![c1, lout],
        out,
        vec![x.clone(), w.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; c0 * l];
            let mut gw = vec![0.0; c0 * c1 * p];
            for c in 0..c0 {
                let xrow = &xd[c * l..(c + 1) * l];
                let gxrow = &mut gx[c * l..(c + 1) * l];
                for j in 0..c1 {
                    let wrow = &wd[(c * c1 + j) * p..(c * c1 + j + 1) * p];
                    let gwrow = &mut gw[(c * c1 + j) * p..(c * c1 + j + 1) * p];
                    let grow = &g[j * lout..(j + 1) * lout];
                    for t in 0..l {
                        let a = t * stride;
                        let gseg = &grow[a..a + p];
                        gxrow[t] += wrow.iter().zip(gseg).map(|(a, b)| a * b).sum::<f64>();
                        for (gwv, &gv) in gwrow.iter_mut().zip(gseg) {
                            *gwv += xrow[t] * gv;
                        }
                    }
                }
            }
            vec![gx, gw]
        }),
    )
}
