//! Fused GRU over a sequence, with hand-written backpropagation through
//! time. Fusing the whole scan into one graph node keeps the tape depth
//! independent of the sequence length.
//!
//! Gate convention (the packed row order of the weight matrices is
//! reset `r`, update `z`, candidate `n`):
//!
//! ```text
//! r_t = sigmoid(W_ir x_t + b_ir + W_hr h_{t-1} + b_hr)
//! z_t = sigmoid(W_iz x_t + b_iz + W_hz h_{t-1} + b_hz)
//! n_t = tanh  (W_in x_t + b_in + r_t ⊙ (W_hn h_{t-1} + b_hn))
//! h_t = (1 - z_t) ⊙ n_t + z_t ⊙ h_{t-1}
//! ```
//!
//! The reset gate multiplies the *recurrent pre-activation* of the
//! candidate, not the hidden state itself; the BPTT below depends on that
//! placement.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{expect_rank2, expect_vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Scan t = 0..L.
    Forward,
    /// Scan t = L-1..0; output row t still describes input row t, so a
    /// bidirectional pair can be concatenated feature-wise.
    Backward,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Runs a GRU over `x: [L×D]` with packed parameters `w_i: [3H×D]`,
/// `w_h: [3H×H]`, `b_i, b_h: [3H]`, producing `[L×H]`.
pub fn gru(
    x: &Tensor,
    w_i: &Tensor,
    w_h: &Tensor,
    b_i: &Tensor,
    b_h: &Tensor,
    dir: Direction,
) -> Result<Tensor> {
    let (l, d) = expect_rank2("gru", x)?;
    let (three_h, wd) = expect_rank2("gru", w_i)?;
    if three_h == 0 || three_h % 3 != 0 {
        return Err(Error::shape("gru", format!("w_i first dim {three_h} is not 3*H")));
    }
    let h = three_h / 3;
    if wd != d {
        return Err(Error::shape("gru", format!("w_i expects input dim {wd}, x has {d}")));
    }
    let (wh_rows, wh_cols) = expect_rank2("gru", w_h)?;
    if wh_rows != three_h || wh_cols != h {
        return Err(Error::shape(
            "gru",
            format!("w_h must be [{three_h}×{h}], got {:?}", w_h.shape()),
        ));
    }
    expect_vector("gru", b_i, three_h)?;
    expect_vector("gru", b_h, three_h)?;

    let xd = x.data();
    let wid = w_i.data();
    let whd = w_h.data();
    let bid = b_i.data();
    let bhd = b_h.data();

    // Row order of the scan; output row `rows[s]` is the state after
    // virtual step s.
    let rows: Vec<usize> = match dir {
        Direction::Forward => (0..l).collect(),
        Direction::Backward => (0..l).rev().collect(),
    };

    // Input contribution for every step at once: a_i[t] = W_i x_t + b_i.
    let mut a_i = vec![0.0; l * three_h];
    for t in 0..l {
        let xrow = &xd[t * d..(t + 1) * d];
        let arow = &mut a_i[t * three_h..(t + 1) * three_h];
        for (k, av) in arow.iter_mut().enumerate() {
            let wrow = &wid[k * d..(k + 1) * d];
            *av = bid[k] + wrow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    // Saved activations, indexed by virtual step.
    let mut s_r = vec![0.0; l * h];
    let mut s_z = vec![0.0; l * h];
    let mut s_n = vec![0.0; l * h];
    let mut s_ahn = vec![0.0; l * h];
    let mut s_h = vec![0.0; (l + 1) * h]; // s_h[0] is the zero initial state

    let mut out = vec![0.0; l * h];
    let mut a_h = vec![0.0; three_h];
    for s in 0..l {
        let t = rows[s];
        let (prev, rest) = s_h.split_at_mut((s + 1) * h);
        let h_prev = &prev[s * h..(s + 1) * h];
        for (k, av) in a_h.iter_mut().enumerate() {
            let wrow = &whd[k * h..(k + 1) * h];
            *av = bhd[k] + wrow.iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
        }
        let arow = &a_i[t * three_h..(t + 1) * three_h];
        let h_next = &mut rest[..h];
        for u in 0..h {
            let r = sigmoid(arow[u] + a_h[u]);
            let z = sigmoid(arow[h + u] + a_h[h + u]);
            let ahn = a_h[2 * h + u];
            let n = (arow[2 * h + u] + r * ahn).tanh();
            let hv = (1.0 - z) * n + z * h_prev[u];
            s_r[s * h + u] = r;
            s_z[s * h + u] = z;
            s_n[s * h + u] = n;
            s_ahn[s * h + u] = ahn;
            h_next[u] = hv;
            out[t * h + u] = hv;
        }
    }

    let xd = x.data_arc();
    let wid = w_i.data_arc();
    let whd = w_h.data_arc();
    Tensor::interior(
        "gru",
        vec![l, h],
        out,
        vec![x.clone(), w_i.clone(), w_h.clone(), b_i.clone(), b_h.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; l * d];
            let mut gwi = vec![0.0; three_h * d];
            let mut gwh = vec![0.0; three_h * h];
            let mut gbi = vec![0.0; three_h];
            let mut gbh = vec![0.0; three_h];

            let mut carry = vec![0.0; h];
            let mut da = vec![0.0; three_h]; // packed [da_r, da_z, da_n]
            for s in (0..l).rev() {
                let t = rows[s];
                let grow = &g[t * h..(t + 1) * h];
                let h_prev = &s_h[s * h..(s + 1) * h];
                for u in 0..h {
                    let delta = grow[u] + carry[u];
                    let r = s_r[s * h + u];
                    let z = s_z[s * h + u];
                    let n = s_n[s * h + u];
                    let ahn = s_ahn[s * h + u];
                    let dz = delta * (h_prev[u] - n);
                    let dn = delta * (1.0 - z);
                    let da_n = dn * (1.0 - n * n);
                    let dr = da_n * ahn;
                    da[u] = dr * r * (1.0 - r);
                    da[h + u] = dz * z * (1.0 - z);
                    da[2 * h + u] = da_n;
                    // Seed next carry with the direct path through z.
                    carry[u] = delta * z;
                }
                // Parameter and input gradients; the candidate's recurrent
                // weights see da_n gated by r.
                let xrow = &xd[t * d..(t + 1) * d];
                let gxrow = &mut gx[t * d..(t + 1) * d];
                for k in 0..three_h {
                    let dav = da[k];
                    if dav == 0.0 {
                        continue;
                    }
                    let gwirow = &mut gwi[k * d..(k + 1) * d];
                    let wirow = &wid[k * d..(k + 1) * d];
                    for j in 0..d {
                        gwirow[j] += dav * xrow[j];
                        gxrow[j] += dav * wirow[j];
                    }
                    gbi[k] += dav;
                    let rec = if k < 2 * h { dav } else { dav * s_r[s * h + (k - 2 * h)] };
                    let gwhrow = &mut gwh[k * h..(k + 1) * h];
                    let whrow = &whd[k * h..(k + 1) * h];
                    for j in 0..h {
                        gwhrow[j] += rec * h_prev[j];
                        carry[j] += rec * whrow[j];
                    }
                    gbh[k] += rec;
                }
            }
            vec![gx, gwi, gwh, gbi, gbh]
        }),
    )
}
