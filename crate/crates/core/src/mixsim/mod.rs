//! Mixture simulation: room impulse responses, level control, noise,
//! alignment, and corpus construction.
//!
//! The mixing model is `x = sum_c g_c * (s_c * h_c) + g_v * v`: each dry
//! source is convolved with its room impulse response, scaled to hit a
//! requested source-to-source ratio, and an optional noise term is scaled
//! to a requested SNR against the loudest post-scale source.
//!
//! Everything here is deterministic given an RNG stream, and the corpus
//! writer (see [`corpus`]) snaps sources to the 32-bit float grid before
//! mixing so that a mixture can be recomputed from its CSV row and source
//! files bit for bit.

pub mod corpus;
pub mod synth;

pub use corpus::{
    build_corpus, corpus_manifest_path, dynamic_mix, load_corpus, mix_sources,
    reconstruct_mixture, MixSpec, MixtureItem, MixtureRecord, MixtureSet,
};
pub use synth::{
    bandpass_fir, synth_pool, synth_rir, synth_utterance, two_band_pool, Band, Speaker, SourcePool,
};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Convolves a source with a room impulse response, truncated to the
/// source length (the reverberant tail past the end is dropped). A
/// one-tap unit RIR is the identity.
pub fn apply_rir(src: &AudioClip, rir: &[f64]) -> Result<AudioClip> {
    if rir.is_empty() {
        return Err(Error::invalid("apply_rir", "empty impulse response"));
    }
    if !rir.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "apply_rir" });
    }
    let s = src.samples();
    let mut out = vec![0.0; s.len()];
    // Accumulate source-major: for each input sample, spread it over the
    // taps that still land inside the clip.
    for (i, &sv) in s.iter().enumerate() {
        let taps = rir.len().min(out.len() - i);
        for (k, &h) in rir[..taps].iter().enumerate() {
            out[i + k] += sv * h;
        }
    }
    AudioClip::new(out, src.sample_rate())
}

/// Gain for the second source so that `power(s1) / power(g * s2)` equals
/// `ssr_db` (the first source keeps unit gain). Equal-power sources and
/// an SSR of `20*log10(2) ~ 6.0206 dB` give exactly 0.5.
pub fn gain_for_ssr(s1: &AudioClip, s2: &AudioClip, ssr_db: f64) -> Result<f64> {
    let p1 = s1.power();
    let p2 = s2.power();
    if p1 <= 0.0 || p2 <= 0.0 {
        return Err(Error::invalid("gain_for_ssr", "source with zero power"));
    }
    Ok(10f64.powf(-ssr_db / 20.0) * (p1 / p2).sqrt())
}

/// Gain for a noise clip so that the SNR of the *loudest* scaled source
/// against the scaled noise is `snr_db`.
pub fn noise_gain_for_snr(scaled_sources: &[AudioClip], noise: &AudioClip, snr_db: f64) -> Result<f64> {
    let loudest = scaled_sources
        .iter()
        .map(AudioClip::power)
        .fold(f64::NAN, f64::max);
    let pn = noise.power();
    if !loudest.is_finite() || loudest <= 0.0 {
        return Err(Error::invalid("noise_gain_for_snr", "no source with positive power"));
    }
    if pn <= 0.0 {
        return Err(Error::invalid("noise_gain_for_snr", "noise has zero power"));
    }
    Ok((loudest / pn).sqrt() * 10f64.powf(-snr_db / 20.0))
}

/// Adds noise to a mixture at a target SNR measured against the loudest
/// scaled source. `snr_db = +inf` is the "noise disabled" sentinel and
/// returns the mixture unchanged with zero gain. The noise clip must be
/// at least as long as the mixture; excess tail is ignored.
pub fn add_noise_at_snr(
    mixture: &AudioClip,
    scaled_sources: &[AudioClip],
    noise: &AudioClip,
    snr_db: f64,
) -> Result<(AudioClip, f64)> {
    if snr_db == f64::INFINITY {
        return Ok((mixture.clone(), 0.0));
    }
    if noise.len() < mixture.len() {
        return Err(Error::invalid(
            "add_noise_at_snr",
            format!("noise length {} shorter than mixture {}", noise.len(), mixture.len()),
        ));
    }
    let g = noise_gain_for_snr(scaled_sources, noise, snr_db)?;
    let out: Vec<f64> = mixture
        .samples()
        .iter()
        .zip(noise.samples())
        .map(|(m, n)| m + g * n)
        .collect();
    Ok((AudioClip::new(out, mixture.sample_rate())?, g))
}

/// Result of composing one mixture from prepared sources.
#[derive(Debug, Clone)]
pub struct MixOutput {
    pub mixture: AudioClip,
    /// Per-speaker targets: the scaled (possibly reverberated) sources.
    pub refs: Vec<AudioClip>,
    pub g1: f64,
    pub g2: f64,
    pub g_noise: f64,
    pub length: usize,
}

/// Composes one two-speaker mixture: optional reverberation, SSR scaling
/// (first source keeps unit gain), truncation to the shortest source, and
/// optional noise at `snr_db` against the loudest scaled source.
pub fn make_mixture(
    s1: &AudioClip,
    s2: &AudioClip,
    rir1: Option<&[f64]>,
    rir2: Option<&[f64]>,
    noise: Option<&AudioClip>,
    ssr_db: f64,
    snr_db: Option<f64>,
) -> Result<MixOutput> {
    let w1 = match rir1 {
        None => s1.clone(),
        Some(h) => apply_rir(s1, h)?,
    };
    let w2 = match rir2 {
        None => s2.clone(),
        Some(h) => apply_rir(s2, h)?,
    };
    let len = w1.len().min(w2.len());
    let c1 = w1.slice(0, len)?;
    let c2 = w2.slice(0, len)?;
    let g1 = 1.0;
    let g2 = gain_for_ssr(&c1, &c2, ssr_db)?;
    let (g_noise, noise_crop) = match (snr_db, noise) {
        (None, _) => (0.0, None),
        (Some(snr), _) if snr == f64::INFINITY => (0.0, None),
        (Some(_), None) => {
            return Err(Error::invalid("make_mixture", "snr requested but no noise given"));
        }
        (Some(snr), Some(n)) => {
            if n.len() < len {
                return Err(Error::invalid(
                    "make_mixture",
                    format!("noise length {} shorter than mixture {len}", n.len()),
                ));
            }
            let crop = n.slice(0, len)?;
            let g = noise_gain_for_snr(&[c1.scaled(g1)?, c2.scaled(g2)?], &crop, snr)?;
            (g, Some(crop))
        }
    };
    let noise_arg = noise_crop.as_ref().map(|n| (g_noise, n.samples()));
    let mixture = corpus::mix_sources(g1, c1.samples(), g2, c2.samples(), noise_arg);
    Ok(MixOutput {
        mixture: AudioClip::new(mixture, s1.sample_rate())?,
        refs: vec![c1.scaled(g1)?, c2.scaled(g2)?],
        g1,
        g2,
        g_noise,
        length: len,
    })
}

/// Lag of `far` relative to `dir` by cross-correlation peak, searched
/// over `|lag| <= max_lag`. A pure delay of `d` samples yields `d`. Ties
/// resolve to the smallest magnitude (positive before negative).
pub fn align_by_xcorr(far: &AudioClip, dir: &AudioClip, max_lag: usize) -> Result<isize> {
    if dir.samples().iter().all(|v| *v == 0.0) || far.samples().iter().all(|v| *v == 0.0) {
        return Err(Error::invalid("align_by_xcorr", "all-zero input signal"));
    }
    let d = dir.samples();
    let f = far.samples();
    let score = |m: isize| -> f64 {
        // far[i] pairs with direct[i - m].
        let lo = m.max(0) as usize;
        let hi = (d.len() as isize + m).min(f.len() as isize);
        if (hi as usize) <= lo {
            return f64::NEG_INFINITY;
        }
        f[lo..hi as usize]
            .iter()
            .zip(&d[(lo as isize - m) as usize..(hi - m) as usize])
            .map(|(a, b)| a * b)
            .sum()
    };
    let mut best_lag = 0isize;
    let mut best = score(0);
    for a in 1..=(max_lag as isize) {
        for m in [a, -a] {
            let s = score(m);
            if s > best {
                best = s;
                best_lag = m;
            }
        }
    }
    Ok(best_lag)
}

/// Drops utterances whose transcripts have fewer than `min_words` words.
/// `word_counts` runs parallel to `items`.
pub fn filter_short_utterances<T>(
    items: Vec<T>,
    word_counts: &[usize],
    min_words: usize,
) -> Result<Vec<T>> {
    if items.len() != word_counts.len() {
        return Err(Error::invalid(
            "filter_short_utterances",
            format!("{} items but {} word counts", items.len(), word_counts.len()),
        ));
    }
    Ok(items
        .into_iter()
        .zip(word_counts)
        .filter(|(_, &w)| w >= min_words)
        .map(|(it, _)| it)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(v: Vec<f64>) -> AudioClip {
        AudioClip::new(v, 8000).unwrap()
    }

    #[test]
    fn unit_rir_is_identity() {
        let s = clip(vec![1.0, -2.0, 3.0]);
        let y = apply_rir(&s, &[1.0]).unwrap();
        assert_eq!(y.samples(), s.samples());
    }

    #[test]
    fn rir_truncates_to_source_length() {
        let s = clip(vec![1.0, 0.0]);
        let y = apply_rir(&s, &[1.0, 0.5, 0.25]).unwrap();
        assert_eq!(y.len(), 2);
        assert_eq!(y.samples(), &[1.0, 0.5]);
    }

    #[test]
    fn equal_power_ssr_six_db_gives_half() {
        let s1 = clip(vec![0.3, -0.3, 0.3, -0.3]);
        let s2 = clip(vec![-0.3, 0.3, -0.3, 0.3]);
        let g = gain_for_ssr(&s1, &s2, 20.0 * 2f64.log10()).unwrap();
        assert!((g - 0.5).abs() < 1e-12, "g = {g}");
    }

    #[test]
    fn requested_ssr_is_hit_exactly() {
        let s1 = clip(vec![0.5, 0.1, -0.4, 0.2, 0.9]);
        let s2 = clip(vec![0.05, -0.3, 0.2, -0.7, 0.11]);
        for ssr in [0.0, 2.5, 5.0, -3.0] {
            let g = gain_for_ssr(&s1, &s2, ssr).unwrap();
            let measured = 10.0 * (s1.power() / (g * g * s2.power())).log10();
            assert!((measured - ssr).abs() < 1e-9, "ssr {ssr} -> {measured}");
        }
    }

    #[test]
    fn noise_gain_targets_loudest_source() {
        let quiet = clip(vec![0.01; 8]);
        let loud = clip(vec![0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5]);
        let noise = clip(vec![0.2, -0.1, 0.3, -0.2, 0.1, -0.3, 0.2, -0.1]);
        let g = noise_gain_for_snr(&[quiet, loud.clone()], &noise, 3.0).unwrap();
        let snr = 10.0 * (loud.power() / (g * g * noise.power())).log10();
        assert!((snr - 3.0).abs() < 1e-9);
    }

    #[test]
    fn xcorr_recovers_pure_delay() {
        let mut base = vec![0.0; 64];
        for (i, b) in base.iter_mut().enumerate() {
            *b = ((i as f64) * 0.9).sin() * ((i as f64) * 0.17).cos();
        }
        let direct = clip(base.clone());
        for d in [0usize, 1, 5, 12] {
            let mut delayed = vec![0.0; 64];
            for i in d..64 {
                delayed[i] = base[i - d];
            }
            let far = clip(delayed);
            assert_eq!(align_by_xcorr(&far, &direct, 20).unwrap(), d as isize, "delay {d}");
        }
    }

    #[test]
    fn xcorr_finds_negative_lag_for_advanced_signal() {
        let base: Vec<f64> = (0..64).map(|i| ((i as f64) * 0.7).sin()).collect();
        let d = 4usize;
        // far leads direct: far[i] = direct[i + d].
        let advanced: Vec<f64> = (0..64)
            .map(|i| if i + d < 64 { base[i + d] } else { 0.0 })
            .collect();
        let direct = clip(base);
        let far = clip(advanced);
        assert_eq!(align_by_xcorr(&far, &direct, 10).unwrap(), -(d as isize));
    }

    #[test]
    fn xcorr_rejects_all_zero_input() {
        let z = clip(vec![0.0; 16]);
        let s = clip((0..16).map(|i| (i as f64 * 0.3).sin()).collect());
        assert!(align_by_xcorr(&z, &s, 4).is_err());
        assert!(align_by_xcorr(&s, &z, 4).is_err());
    }

    #[test]
    fn equal_power_sources_at_zero_ssr_sum_exactly() {
        let s1: Vec<f64> = (0..128).map(|i| (i as f64 * 0.2).sin() * 0.3).collect();
        // Same per-sample magnitudes, so the power sums are bitwise equal
        // and gain_for_ssr lands on exactly 1.
        let s2: Vec<f64> = s1
            .iter()
            .enumerate()
            .map(|(i, v)| if i % 2 == 0 { *v } else { -v })
            .collect();
        let out = make_mixture(&clip(s1.clone()), &clip(s2.clone()), None, None, None, 0.0, None).unwrap();
        assert_eq!(out.g2, 1.0);
        for (i, v) in out.mixture.samples().iter().enumerate() {
            assert_eq!(*v, s1[i] + s2[i]);
        }
    }

    #[test]
    fn make_mixture_truncates_to_shortest() {
        let s1 = clip((0..8000).map(|i| (i as f64 * 0.01).sin() * 0.2).collect());
        let s2 = clip((0..6000).map(|i| (i as f64 * 0.02).cos() * 0.2).collect());
        let out = make_mixture(&s1, &s2, None, None, None, 3.0, None).unwrap();
        assert_eq!(out.length, 6000);
        assert_eq!(out.mixture.len(), 6000);
        assert_eq!(out.refs[0].len(), 6000);
        assert_eq!(out.refs[1].len(), 6000);
    }

    #[test]
    fn make_mixture_matches_scripted_pipeline() {
        let s1 = clip((0..512).map(|i| (i as f64 * 0.05).sin() * 0.4).collect());
        let s2 = clip((0..600).map(|i| (i as f64 * 0.083).sin() * 0.1).collect());
        let noise = clip((0..512).map(|i| ((i * 7919 % 101) as f64 / 101.0 - 0.5) * 0.2).collect());
        let out = make_mixture(&s1, &s2, None, None, Some(&noise), 2.0, Some(15.0)).unwrap();
        // Scripted oracle: scale, truncate, sum, then add noise.
        let c1 = s1.slice(0, 512).unwrap();
        let c2 = s2.slice(0, 512).unwrap();
        let g2 = gain_for_ssr(&c1, &c2, 2.0).unwrap();
        let partial: Vec<f64> = c1
            .samples()
            .iter()
            .zip(c2.samples())
            .map(|(a, b)| 1.0 * a + g2 * b)
            .collect();
        let partial = AudioClip::new(partial, 8000).unwrap();
        let (full, gn) =
            add_noise_at_snr(&partial, &[c1.clone(), c2.scaled(g2).unwrap()], &noise, 15.0).unwrap();
        assert_eq!(out.g_noise, gn);
        assert_eq!(out.mixture.samples(), full.samples());
    }

    #[test]
    fn noise_sentinel_leaves_mixture_unchanged() {
        let m = clip(vec![0.1, -0.2, 0.3, 0.05]);
        let n = clip(vec![0.5, 0.5, 0.5, 0.5]);
        let (out, g) = add_noise_at_snr(&m, &[m.clone()], &n, f64::INFINITY).unwrap();
        assert_eq!(g, 0.0);
        assert_eq!(out.samples(), m.samples());
    }

    #[test]
    fn noise_snr_zero_targets_loudest_of_two() {
        // Powers 1 and 4; snr 0 scales noise to power 4.
        let a = clip(vec![1.0, -1.0, 1.0, -1.0]);
        let b = clip(vec![2.0, -2.0, 2.0, -2.0]);
        let mix = clip(vec![3.0, -3.0, 3.0, -3.0]);
        let n = clip(vec![1.0, 1.0, -1.0, -1.0]);
        let (_, g) = add_noise_at_snr(&mix, &[a, b], &n, 0.0).unwrap();
        assert!((g * g - 4.0).abs() < 1e-12, "scaled noise power {}", g * g);
    }

    #[test]
    fn short_noise_rejected() {
        let m = clip(vec![0.1; 8]);
        let n = clip(vec![0.2; 4]);
        assert!(add_noise_at_snr(&m, &[m.clone()], &n, 10.0).is_err());
    }

    #[test]
    fn short_utterance_filter_keeps_five_and_up() {
        let items = vec!["a", "b", "c", "d"];
        let counts = [4usize, 5, 1, 12];
        let kept = filter_short_utterances(items, &counts, 5).unwrap();
        assert_eq!(kept, vec!["b", "d"]);
    }
}
