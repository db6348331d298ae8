//! Pointwise ops. All preserve the input shape.

use crate::error::{Error, Result};
use crate::tensor::{grad_enabled, Tensor};

use super::expect_same_shape;

/// Shared skeleton for binary pointwise ops. `f` returns the output value
/// and the two local partial derivatives at one element.
fn pointwise2(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> (f64, f64, f64),
) -> Result<Tensor> {
    expect_same_shape(op, a, b)?;
    let n = a.numel();
    let shape = a.shape().to_vec();
    if !(grad_enabled() && (a.requires_grad() || b.requires_grad())) {
        let out = (0..n).map(|i| f(a.data()[i], b.data()[i]).0).collect();
        return Tensor::interior(op, shape, out, vec![], Box::new(|_| vec![]));
    }
    let mut out = Vec::with_capacity(n);
    let mut da = Vec::with_capacity(n);
    let mut db = Vec::with_capacity(n);
    for i in 0..n {
        let (o, ga, gb) = f(a.data()[i], b.data()[i]);
        out.push(o);
        da.push(ga);
        db.push(gb);
    }
    Tensor::interior(
        op,
        shape,
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let ga = g.iter().zip(&da).map(|(g, d)| g * d).collect();
            let gb = g.iter().zip(&db).map(|(g, d)| g * d).collect();
            vec![ga, gb]
        }),
    )
}

fn pointwise1(
    op: &'static str,
    x: &Tensor,
    f: impl Fn(f64) -> (f64, f64),
) -> Result<Tensor> {
    let n = x.numel();
    let shape = x.shape().to_vec();
    if !(grad_enabled() && x.requires_grad()) {
        let out = x.data().iter().map(|&v| f(v).0).collect();
        return Tensor::interior(op, shape, out, vec![], Box::new(|_| vec![]));
    }
    let mut out = Vec::with_capacity(n);
    let mut dx = Vec::with_capacity(n);
    for &v in x.data() {
        let (o, d) = f(v);
        out.push(o);
        dx.push(d);
    }
    Tensor::interior(
        op,
        shape,
        out,
        vec![x.clone()],
        Box::new(move |g| vec![g.iter().zip(&dx).map(|(g, d)| g * d).collect()]),
    )
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    pointwise2("add", a, b, |x, y| (x + y, 1.0, 1.0))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    pointwise2("sub", a, b, |x, y| (x - y, 1.0, -1.0))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    pointwise2("mul", a, b, |x, y| (x * y, y, x))
}

pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    pointwise2("div", a, b, |x, y| (x / y, 1.0 / y, -x / (y * y)))
}

/// Elementwise maximum. Gradient goes to the winning side; ties go to `a`,
/// matching the subgradient convention the epsilon-guarded ratios rely on.
pub fn maximum(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    pointwise2("maximum", a, b, |x, y| {
        if x >= y {
            (x, 1.0, 0.0)
        } else {
            (y, 0.0, 1.0)
        }
    })
}

pub fn neg(x: &Tensor) -> Result<Tensor> {
    pointwise1("neg", x, |v| (-v, -1.0))
}

pub fn scale(x: &Tensor, c: f64) -> Result<Tensor> {
    pointwise1("scale", x, |v| (v * c, c))
}

pub fn add_scalar(x: &Tensor, c: f64) -> Result<Tensor> {
    pointwise1("add_scalar", x, |v| (v + c, 1.0))
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    pointwise1("relu", x, |v| if v > 0.0 { (v, 1.0) } else { (0.0, 0.0) })
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    pointwise1("sigmoid", x, |v| {
        let s = 1.0 / (1.0 + (-v).exp());
        (s, s * (1.0 - s))
    })
}

pub fn tanh(x: &Tensor) -> Result<Tensor> {
    pointwise1("tanh", x, |v| {
        let t = v.tanh();
        (t, 1.0 - t * t)
    })
}

/// Natural log. Non-positive inputs produce non-finite outputs, which the
/// tensor constructor rejects, so this cannot silently emit NaN.
pub fn ln(x: &Tensor) -> Result<Tensor> {
    pointwise1("ln", x, |v| (v.ln(), 1.0 / v))
}

pub fn log10(x: &Tensor) -> Result<Tensor> {
    pointwise1("log10", x, |v| (v.log10(), 1.0 / (v * std::f64::consts::LN_10)))
}

/// PReLU over a channel map `[C×L]` (or any shape whose leading dim is C)
/// with one learned slope per channel; `slopes` of length 1 broadcasts to
/// every channel. `prelu(x) = x` for `x >= 0`, `a_c * x` otherwise.
pub fn prelu(x: &Tensor, slopes: &Tensor) -> Result<Tensor> {
    let c = *x
        .shape()
        .first()
        .ok_or_else(|| Error::shape("prelu", "input has rank 0"))?;
    let a_len = slopes.numel();
    if slopes.shape().len() != 1 || (a_len != c && a_len != 1) {
        return Err(Error::shape(
            "prelu",
            format!(
                "slopes must be [1] or [{c}] for input {:?}, got {:?}",
                x.shape(),
                slopes.shape()
            ),
        ));
    }
    let n = x.numel();
    let per = n / c; // elements per channel
    let xd = x.data();
    let ad = slopes.data();
    let slope_at = move |i: usize, ad: &[f64]| if ad.len() == 1 { ad[0] } else { ad[i / per] };

    let mut out = Vec::with_capacity(n);
    for (i, &v) in xd.iter().enumerate() {
        out.push(if v >= 0.0 { v } else { slope_at(i, ad) * v });
    }
    let xd = x.data_arc();
    let ad = slopes.data_arc();
    Tensor::interior(
        "prelu",
        x.shape().to_vec(),
        out,
        vec![x.clone(), slopes.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; g.len()];
            let mut ga = vec![0.0; ad.len()];
            for (i, &gv) in g.iter().enumerate() {
                let v = xd[i];
                if v >= 0.0 {
                    gx[i] = gv;
                } else {
                    let ai = if ad.len() == 1 { 0 } else { i / per };
                    gx[i] = gv * ad[ai];
                    ga[ai] += gv * v;
                }
            }
            vec![gx, ga]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec(), &[v.len()]).unwrap()
    }

    #[test]
    fn prelu_matches_worked_example() {
        // Negative input scaled by the slope: prelu(-2, 0.25) = -0.5.
        let x = t(&[-2.0, 3.0]);
        let a = t(&[0.25]);
        let y = prelu(&x, &a).unwrap();
        assert_eq!(y.data(), &[-0.5, 3.0]);
    }

    #[test]
    fn prelu_per_channel_slopes() {
        let x = Tensor::from_vec(vec![-1.0, 1.0, -2.0, 2.0], &[2, 2]).unwrap();
        let a = t(&[0.5, 0.25]);
        let y = prelu(&x, &a).unwrap();
        assert_eq!(y.data(), &[-0.5, 1.0, -0.5, 2.0]);
    }

    #[test]
    fn div_by_zero_is_rejected_not_propagated() {
        let a = t(&[1.0]);
        let b = t(&[0.0]);
        assert!(div(&a, &b).is_err());
    }

    #[test]
    fn maximum_breaks_ties_toward_first() {
        let a = Tensor::param(vec![2.0], &[1]).unwrap();
        let b = Tensor::param(vec![2.0], &[1]).unwrap();
        let y = maximum(&a, &b).unwrap();
        y.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0]);
        assert_eq!(b.grad().unwrap(), vec![0.0]);
    }

    #[test]
    fn log10_of_power_of_ten() {
        let y = log10(&t(&[1e12])).unwrap();
        assert_eq!(y.data(), &[12.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = t(&[1.0, 2.0]);
        let b = t(&[1.0]);
        assert!(add(&a, &b).is_err());
    }
}
