//! Randomized property checks over the public API. Proptest draws small
//! dimensions and a stream seed; the data itself comes from the crate's
//! seeded generator so failures replay exactly.

use proptest::prelude::*;
use rand::Rng;

use sepkit::audio::AudioClip;
use sepkit::mixsim::gain_for_ssr;
use sepkit::models::{chunk, overlap_add, receptive_field, ModelConfig};
use sepkit::objectives::si_sdr_db;
use sepkit::ops;
use sepkit::rng::named_stream;
use sepkit::sampling::{crop_random, split_batch};
use sepkit::tensor::Tensor;

fn draw(seed: u64, tag: &str, n: usize) -> Vec<f64> {
    let mut r = named_stream(seed, tag, 0);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    /// The synthesis conv is the exact adjoint of the analysis conv:
    /// <conv(x), y> == <x, transposed_conv(y)> for any shared weights.
    #[test]
    fn strided_and_transposed_convs_are_adjoint(
        f in 1usize..12,
        stride in 1usize..5,
        p in 1usize..8,
        n in 1usize..6,
        seed in 0u64..1 << 48,
    ) {
        let l = (f - 1) * stride + p;
        let x = Tensor::from_vec(draw(seed, "adj-x", l), &[1, l]).unwrap();
        let w = Tensor::from_vec(draw(seed, "adj-w", n * p), &[n, 1, p]).unwrap();
        let y = Tensor::from_vec(draw(seed, "adj-y", n * f), &[n, f]).unwrap();
        let ax = ops::strided_conv1d(&x, &w, stride).unwrap();
        let aty = ops::transposed_conv1d(&y, &w, stride).unwrap();
        prop_assert_eq!(ax.shape(), &[n, f]);
        prop_assert_eq!(aty.shape(), &[1, l]);
        let lhs = dot(ax.data(), y.data());
        let rhs = dot(x.data(), aty.data());
        prop_assert!((lhs - rhs).abs() <= 1e-9, "<Ax,y>={lhs} vs <x,Aty>={rhs}");
    }

    /// Folding into half-overlapping chunks and unfolding with the
    /// count-averaged overlap-add returns the input bit for bit.
    #[test]
    fn chunk_round_trip_is_bit_exact(
        b in 1usize..4,
        l in 1usize..300,
        half in 1usize..16,
        seed in 0u64..1 << 48,
    ) {
        let k = 2 * half;
        let x = Tensor::from_vec(draw(seed, "chunk", b * l), &[b, l]).unwrap();
        let back = overlap_add(&chunk(&x, k).unwrap(), l).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        prop_assert_eq!(back.data(), x.data());
    }

    /// Row softmax: rows sum to one, stay positive, and shifting a row by
    /// a constant only moves the result at rounding level. Max
    /// subtraction keeps huge scores finite.
    #[test]
    fn softmax_rows_are_stable_distributions(
        rows in 1usize..5,
        cols in 1usize..8,
        shift in -1e5f64..1e5,
        seed in 0u64..1 << 48,
    ) {
        let data = draw(seed, "softmax", rows * cols);
        let x = Tensor::from_vec(data.clone(), &[rows, cols]).unwrap();
        let s = ops::softmax_rows(&x).unwrap();
        for row in s.data().chunks(cols) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12, "row sums to {sum}");
            prop_assert!(row.iter().all(|v| *v > 0.0 && v.is_finite()));
        }
        let shifted = Tensor::from_vec(
            data.iter().map(|v| v + shift).collect(),
            &[rows, cols],
        ).unwrap();
        // Adding the shift rounds each logit at ulp(|shift|), so the
        // distribution may move by that much and no more.
        let tol = 1e-12 + 1e-15 * shift.abs();
        let t = ops::softmax_rows(&shifted).unwrap();
        for (a, c) in s.data().iter().zip(t.data()) {
            prop_assert!((a - c).abs() <= tol, "shift {shift} moved {a} to {c}");
        }
    }

    /// Power-of-two gains commute with every rounding step, so SI-SDR is
    /// bitwise invariant under them.
    #[test]
    fn si_sdr_ignores_power_of_two_gains(
        exp in -6i32..=6,
        seed in 0u64..1 << 48,
    ) {
        let est = AudioClip::new(draw(seed, "sisdr-e", 64), 8000).unwrap();
        let reference = AudioClip::new(draw(seed, "sisdr-r", 64), 8000).unwrap();
        let base = si_sdr_db(&est, &reference).unwrap();
        let scaled = si_sdr_db(&est.scaled(2f64.powi(exp)).unwrap(), &reference).unwrap();
        prop_assert_eq!(base.to_bits(), scaled.to_bits());
    }

    /// Splitting cuts every clip into d pieces of floor(L/d) samples in
    /// order; gluing them back gives the clip's leading d*floor(L/d)
    /// samples, the whole clip when d divides L.
    #[test]
    fn split_batch_pieces_glue_back(
        lens in prop::collection::vec(8usize..200, 1..5),
        d in 1usize..5,
        seed in 0u64..1 << 48,
    ) {
        let clips: Vec<AudioClip> = lens
            .iter()
            .enumerate()
            .map(|(i, &l)| AudioClip::new(draw(seed + i as u64, "split", l), 8000).unwrap())
            .collect();
        let pieces = split_batch(&clips, d).unwrap();
        prop_assert_eq!(pieces.len(), clips.len() * d);
        for (ci, clip) in clips.iter().enumerate() {
            let keep = d * (clip.len() / d);
            let mut glued = Vec::new();
            for p in &pieces[ci * d..(ci + 1) * d] {
                prop_assert_eq!(p.len(), clip.len() / d);
                glued.extend_from_slice(p.samples());
            }
            prop_assert_eq!(glued.as_slice(), &clip.samples()[..keep]);
        }
    }

    /// A random crop is a contiguous window of the requested length.
    #[test]
    fn crop_random_emits_contiguous_windows(
        l in 1usize..500,
        lim in 1usize..500,
        seed in 0u64..1 << 48,
    ) {
        let clip = AudioClip::new((0..l).map(|i| i as f64).collect(), 8000).unwrap();
        let mut r = named_stream(seed, "crop", 0);
        let c = crop_random(&clip, lim, &mut r).unwrap();
        prop_assert_eq!(c.len(), l.min(lim));
        let start = c.samples()[0] as usize;
        prop_assert!(start + c.len() <= l);
        for (i, v) in c.samples().iter().enumerate() {
            prop_assert_eq!(*v, (start + i) as f64);
        }
    }

    /// The gain solver realizes the requested speaker power ratio: the
    /// first source keeps unit gain and the second is scaled under it.
    #[test]
    fn gain_for_ssr_realizes_the_request(
        ssr in 0f64..5.0,
        seed in 0u64..1 << 48,
    ) {
        let s1 = AudioClip::new(draw(seed, "ssr-1", 800), 8000).unwrap();
        let s2 = AudioClip::new(draw(seed, "ssr-2", 800), 8000).unwrap();
        let g = gain_for_ssr(&s1, &s2, ssr).unwrap();
        prop_assert!(g > 0.0);
        let measured = 10.0 * (s1.power() / s2.scaled(g).unwrap().power()).log10();
        prop_assert!((measured - ssr).abs() <= 1e-9, "asked {ssr}, got {measured}");
    }

    /// The dilation schedule 2^(b mod X) over R stacks gives a closed
    /// form for the receptive field, and the field never depends on the
    /// widths or the seed.
    #[test]
    fn receptive_field_matches_the_closed_form(
        p in 1usize..6,
        x in 1usize..7,
        r in 1usize..4,
    ) {
        let cfg = ModelConfig {
            kernel: p,
            blocks_per_stack: x,
            repeats: r,
            ..ModelConfig::default()
        };
        let rf = receptive_field(&cfg);
        let want = 1 + r * (p - 1) * ((1 << x) - 1);
        prop_assert_eq!(rf.frames, want);
        let secs = ((want - 1) * cfg.hop + cfg.window) as f64 / cfg.sample_rate as f64;
        prop_assert_eq!(rf.seconds.to_bits(), secs.to_bits());
        prop_assert!(!rf.global);
    }
}
