//! Masker building blocks: the dilated conv block, the bidirectional GRU
//! block that can replace one conv block, and the pre-norm transformer
//! layer used both as an insertable block and inside the dual-path masker.
//!
//! All blocks map `[B×L]` to `[B×L]` with a residual around the whole
//! body, so positions are interchangeable. Context-block output
//! projections are initialized two decades smaller than the rest: a
//! freshly placed block then starts close to the identity (stable early
//! training) while staying generic, which keeps perturbation probes
//! honest about full-sequence sensitivity.

use crate::error::Result;
use crate::ops;
use crate::tensor::Tensor;

use super::{Init, NormMode, GC_OUT_SCALE, NORM_EPS};

fn norm(mode: NormMode, x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    match mode {
        NormMode::Global => ops::global_layer_norm(x, gain, bias, NORM_EPS),
        NormMode::Frame => ops::frame_layer_norm(x, gain, bias, NORM_EPS),
    }
}

fn pconv(w: &Tensor, x: &Tensor, b: &Tensor) -> Result<Tensor> {
    ops::add_col_vector(&ops::matmul(w, x)?, b)
}

macro_rules! tensor_fields {
    ($ty:ident { $($field:ident),+ $(,)? }) => {
        impl $ty {
            pub(crate) fn fields(&self) -> Vec<(&'static str, &Tensor)> {
                vec![$((stringify!($field), &self.$field)),+]
            }
            pub(crate) fn fields_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
                vec![$((stringify!($field), &mut self.$field)),+]
            }
        }
    };
}

/// Conv block: pointwise in, PReLU, norm, dilated depthwise, PReLU, norm,
/// pointwise out, residual around it all.
pub(crate) struct ConvBlock {
    pub dilation: usize,
    pub in_w: Tensor,
    pub in_b: Tensor,
    pub slope1: Tensor,
    pub n1_g: Tensor,
    pub n1_b: Tensor,
    pub dw: Tensor,
    pub slope2: Tensor,
    pub n2_g: Tensor,
    pub n2_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

tensor_fields!(ConvBlock { in_w, in_b, slope1, n1_g, n1_b, dw, slope2, n2_g, n2_b, out_w, out_b });

impl ConvBlock {
    pub(crate) fn new(b: usize, h: usize, p: usize, dilation: usize, init: &mut Init) -> Result<Self> {
        let kb = (1.0 / b as f64).sqrt();
        let kh = (1.0 / h as f64).sqrt();
        let kp = (1.0 / p as f64).sqrt();
        Ok(ConvBlock {
            dilation,
            in_w: init.uniform(&[h, b], kb)?,
            in_b: Init::constant(&[h], 0.0)?,
            slope1: Init::constant(&[h], 0.25)?,
            n1_g: Init::constant(&[h], 1.0)?,
            n1_b: Init::constant(&[h], 0.0)?,
            dw: init.uniform(&[h, p], kp)?,
            slope2: Init::constant(&[h], 0.25)?,
            n2_g: Init::constant(&[h], 1.0)?,
            n2_b: Init::constant(&[h], 0.0)?,
            out_w: init.uniform(&[b, h], kh)?,
            out_b: Init::constant(&[b], 0.0)?,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor, mode: NormMode) -> Result<Tensor> {
        let a = pconv(&self.in_w, x, &self.in_b)?;
        let a = ops::prelu(&a, &self.slope1)?;
        let a = norm(mode, &a, &self.n1_g, &self.n1_b)?;
        let d = ops::depthwise_conv1d(&a, &self.dw, self.dilation, ops::Pad::Same)?;
        let d = ops::prelu(&d, &self.slope2)?;
        let d = norm(mode, &d, &self.n2_g, &self.n2_b)?;
        let o = pconv(&self.out_w, &d, &self.out_b)?;
        ops::add(x, &o)
    }
}

/// One direction of a GRU: packed gate weights in `[r; z; n]` row order.
pub(crate) struct GruDir {
    pub w_i: Tensor,
    pub w_h: Tensor,
    pub b_i: Tensor,
    pub b_h: Tensor,
}

tensor_fields!(GruDir { w_i, w_h, b_i, b_h });

/// Initial update-gate bias. Small random weights leave the update gate
/// near 0.5, so state decays like 0.5 per step and sensitivity to frames
/// ~50 steps away drops under measurement thresholds. Biasing the gate
/// toward "keep" gives the block usable long-range memory from step one.
const GRU_UPDATE_BIAS: f64 = 2.5;

impl GruDir {
    fn new(input: usize, hidden: usize, init: &mut Init) -> Result<Self> {
        let k = (1.0 / hidden as f64).sqrt();
        let mut b_i = vec![0.0; 3 * hidden];
        b_i[hidden..2 * hidden].fill(GRU_UPDATE_BIAS);
        Ok(GruDir {
            w_i: init.uniform(&[3 * hidden, input], k)?,
            w_h: init.uniform(&[3 * hidden, hidden], k)?,
            b_i: Tensor::param(b_i, &[3 * hidden])?,
            b_h: Init::constant(&[3 * hidden], 0.0)?,
        })
    }
}

/// GRU block: pointwise in, PReLU, norm, bidirectional GRU (half the
/// hidden size per direction, concatenated), pointwise out, residual.
pub(crate) struct GruBlock {
    pub in_w: Tensor,
    pub in_b: Tensor,
    pub slope1: Tensor,
    pub n1_g: Tensor,
    pub n1_b: Tensor,
    pub fwd: GruDir,
    pub bwd: GruDir,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl GruBlock {
    pub(crate) fn new(b: usize, h: usize, init: &mut Init) -> Result<Self> {
        let kb = (1.0 / b as f64).sqrt();
        let kh = (1.0 / h as f64).sqrt();
        Ok(GruBlock {
            in_w: init.uniform(&[h, b], kb)?,
            in_b: Init::constant(&[h], 0.0)?,
            slope1: Init::constant(&[h], 0.25)?,
            n1_g: Init::constant(&[h], 1.0)?,
            n1_b: Init::constant(&[h], 0.0)?,
            fwd: GruDir::new(h, h / 2, init)?,
            bwd: GruDir::new(h, h / 2, init)?,
            out_w: init.uniform(&[b, h], GC_OUT_SCALE * kh)?,
            out_b: Init::constant(&[b], 0.0)?,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor, mode: NormMode) -> Result<Tensor> {
        let a = pconv(&self.in_w, x, &self.in_b)?;
        let a = ops::prelu(&a, &self.slope1)?;
        let a = norm(mode, &a, &self.n1_g, &self.n1_b)?;
        let seq = ops::transpose2(&a)?;
        let f = ops::gru(&seq, &self.fwd.w_i, &self.fwd.w_h, &self.fwd.b_i, &self.fwd.b_h, ops::Direction::Forward)?;
        let r = ops::gru(&seq, &self.bwd.w_i, &self.bwd.w_h, &self.bwd.b_i, &self.bwd.b_h, ops::Direction::Backward)?;
        let cat = ops::transpose2(&ops::concat_cols(&[f, r])?)?;
        let o = pconv(&self.out_w, &cat, &self.out_b)?;
        ops::add(x, &o)
    }

    pub(crate) fn fields(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("in_w".into(), &self.in_w),
            ("in_b".into(), &self.in_b),
            ("slope1".into(), &self.slope1),
            ("n1_g".into(), &self.n1_g),
            ("n1_b".into(), &self.n1_b),
        ];
        for (n, t) in self.fwd.fields() {
            out.push((format!("fwd.{n}"), t));
        }
        for (n, t) in self.bwd.fields() {
            out.push((format!("bwd.{n}"), t));
        }
        out.push(("out_w".into(), &self.out_w));
        out.push(("out_b".into(), &self.out_b));
        out
    }

    pub(crate) fn fields_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("in_w".into(), &mut self.in_w),
            ("in_b".into(), &mut self.in_b),
            ("slope1".into(), &mut self.slope1),
            ("n1_g".into(), &mut self.n1_g),
            ("n1_b".into(), &mut self.n1_b),
        ];
        for (n, t) in self.fwd.fields_mut() {
            out.push((format!("fwd.{n}"), t));
        }
        for (n, t) in self.bwd.fields_mut() {
            out.push((format!("bwd.{n}"), t));
        }
        out.push(("out_w".into(), &mut self.out_w));
        out.push(("out_b".into(), &mut self.out_b));
        out
    }
}

/// Pre-norm transformer layer over sequence-major `[L×D]` input. The
/// positional encoding joins inside the attention branch only, so zeroing
/// the attention and feed-forward output projections yields the exact
/// identity.
pub struct TransformerLayer {
    pub heads: usize,
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub b_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub w_1: Tensor,
    pub b_1: Tensor,
    pub w_2: Tensor,
    pub b_2: Tensor,
}

tensor_fields!(TransformerLayer {
    ln1_g, ln1_b, w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o, ln2_g, ln2_b, w_1, b_1, w_2, b_2,
});

impl TransformerLayer {
    pub(crate) fn new(d: usize, heads: usize, ffn: usize, init: &mut Init) -> Result<Self> {
        let kd = (1.0 / d as f64).sqrt();
        let kf = (1.0 / ffn as f64).sqrt();
        Ok(TransformerLayer {
            heads,
            ln1_g: Init::constant(&[d], 1.0)?,
            ln1_b: Init::constant(&[d], 0.0)?,
            w_q: init.uniform(&[d, d], kd)?,
            b_q: Init::constant(&[d], 0.0)?,
            w_k: init.uniform(&[d, d], kd)?,
            b_k: Init::constant(&[d], 0.0)?,
            w_v: init.uniform(&[d, d], kd)?,
            b_v: Init::constant(&[d], 0.0)?,
            w_o: init.uniform(&[d, d], GC_OUT_SCALE * kd)?,
            b_o: Init::constant(&[d], 0.0)?,
            ln2_g: Init::constant(&[d], 1.0)?,
            ln2_b: Init::constant(&[d], 0.0)?,
            w_1: init.uniform(&[d, ffn], kd)?,
            b_1: Init::constant(&[ffn], 0.0)?,
            w_2: init.uniform(&[ffn, d], GC_OUT_SCALE * kf)?,
            b_2: Init::constant(&[d], 0.0)?,
        })
    }

    /// `x` is `[L×D]`; `pe` must be `[L×D]` (see [`sinusoidal_pe`]).
    pub(crate) fn forward(&self, x: &Tensor, pe: &Tensor) -> Result<Tensor> {
        let n1 = ops::row_layer_norm(x, &self.ln1_g, &self.ln1_b, NORM_EPS)?;
        let attn_in = ops::add(&n1, pe)?;
        let attn = ops::multihead_attention(
            &attn_in, &self.w_q, &self.b_q, &self.w_k, &self.b_k, &self.w_v, &self.b_v,
            &self.w_o, &self.b_o, self.heads,
        )?;
        let y1 = ops::add(x, &attn)?;
        let n2 = ops::row_layer_norm(&y1, &self.ln2_g, &self.ln2_b, NORM_EPS)?;
        let h = ops::relu(&ops::add_row_vector(&ops::matmul(&n2, &self.w_1)?, &self.b_1)?)?;
        let ffn = ops::add_row_vector(&ops::matmul(&h, &self.w_2)?, &self.b_2)?;
        ops::add(&y1, &ffn)
    }

    /// Channel-major wrapper for use inside the block list: transposes
    /// `[B×L]` to sequence-major, runs the layer with a positional
    /// encoding of matching length, and transposes back.
    pub(crate) fn forward_channel_major(&self, x: &Tensor) -> Result<Tensor> {
        let (d, l) = (x.shape()[0], x.shape()[1]);
        let seq = ops::transpose2(x)?;
        let pe = sinusoidal_pe(l, d)?;
        let y = self.forward(&seq, &pe)?;
        ops::transpose2(&y)
    }
}

/// Sinusoidal positional encoding `[L×D]`:
/// `pe[pos, 2i] = sin(pos / 10000^(2i/D))`, `pe[pos, 2i+1]` the cosine.
pub fn sinusoidal_pe(l: usize, d: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(l * d);
    for pos in 0..l {
        for j in 0..d {
            let i = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::from_vec(data, &[l, d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn zero_out(t: &mut Tensor) {
        *t = Tensor::param(vec![0.0; t.numel()], t.shape()).unwrap();
    }

    fn random_map(c: usize, l: usize, seed: u64) -> Tensor {
        let mut r = rng::stream(seed, 0);
        let data: Vec<f64> = (0..c * l).map(|_| rand::Rng::random_range(&mut r, -1.0..1.0)).collect();
        Tensor::from_vec(data, &[c, l]).unwrap()
    }

    #[test]
    fn zeroed_conv_block_is_identity() {
        let mut init = Init::new(3);
        let mut blk = ConvBlock::new(4, 6, 3, 2, &mut init).unwrap();
        zero_out(&mut blk.out_w);
        zero_out(&mut blk.out_b);
        let x = random_map(4, 10, 7);
        let y = blk.forward(&x, NormMode::Global).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zeroed_gru_block_is_identity() {
        let mut init = Init::new(4);
        let mut blk = GruBlock::new(4, 6, &mut init).unwrap();
        zero_out(&mut blk.out_w);
        let x = random_map(4, 9, 8);
        let y = blk.forward(&x, NormMode::Frame).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zeroed_transformer_projections_give_identity() {
        let mut init = Init::new(5);
        let mut layer = TransformerLayer::new(8, 2, 16, &mut init).unwrap();
        zero_out(&mut layer.w_o);
        zero_out(&mut layer.w_2);
        let x = random_map(8, 12, 9);
        let y = layer.forward_channel_major(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn block_shapes_are_preserved() {
        let mut init = Init::new(6);
        let conv = ConvBlock::new(5, 7, 3, 4, &mut init).unwrap();
        let gru = GruBlock::new(5, 8, &mut init).unwrap();
        let tf = TransformerLayer::new(5, 1, 9, &mut init).unwrap();
        let x = random_map(5, 13, 10);
        for y in [
            conv.forward(&x, NormMode::Frame).unwrap(),
            gru.forward(&x, NormMode::Frame).unwrap(),
            tf.forward_channel_major(&x).unwrap(),
        ] {
            assert_eq!(y.shape(), &[5, 13]);
        }
    }

    #[test]
    fn positional_encoding_matches_definition() {
        let pe = sinusoidal_pe(4, 6).unwrap();
        let d = pe.data();
        assert_eq!(d[0], 0.0); // sin(0)
        assert_eq!(d[1], 1.0); // cos(0)
        let pos = 3;
        let i = 2.0;
        let want = (pos as f64 / 10000f64.powf(2.0 * i / 6.0)).sin();
        assert!((d[pos * 6 + 4] - want).abs() < 1e-15);
    }

    #[test]
    fn gru_block_sees_the_whole_sequence() {
        let mut init = Init::new(11);
        let blk = GruBlock::new(4, 6, &mut init).unwrap();
        let x = random_map(4, 16, 12);
        let base = blk.forward(&x, NormMode::Frame).unwrap();
        // Perturb the last frame; frame 0 of the output must move.
        let mut data = x.to_vec();
        for c in 0..4 {
            data[c * 16 + 15] += 0.5;
        }
        let x2 = Tensor::from_vec(data, &[4, 16]).unwrap();
        let moved = blk.forward(&x2, NormMode::Frame).unwrap();
        let shift: f64 = (0..4)
            .map(|c| (moved.data()[c * 16] - base.data()[c * 16]).abs())
            .fold(0.0, f64::max);
        assert!(shift > 1e-9, "frame 0 shift {shift}");
    }
}
