//! Synthetic acoustic material: exponentially decaying room impulse
//! responses and band-limited noise "utterances" organized into speaker
//! pools.
//!
//! The utterances are not speech. They are narrowband noise with a slow
//! amplitude wobble and raised-cosine edge fades, which is enough to give
//! each synthetic speaker a stable spectral identity that a separation
//! model can latch onto. That makes the pools useful for end-to-end
//! training smoke tests without shipping audio data.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::rng;
use crate::wav;

/// Frequency band in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo_hz: f64,
    pub hi_hz: f64,
}

/// A synthetic speaker: identity metadata plus a bag of utterances.
#[derive(Debug, Clone)]
pub struct Speaker {
    pub id: String,
    pub gender: String,
    pub dialect: String,
    pub age: String,
    pub utterances: Vec<AudioClip>,
}

/// A pool of speakers sharing one sample rate.
#[derive(Debug, Clone)]
pub struct SourcePool {
    pub speakers: Vec<Speaker>,
    pub sample_rate: u32,
}

impl SourcePool {
    pub fn total_utterances(&self) -> usize {
        self.speakers.iter().map(|s| s.utterances.len()).sum()
    }
}

/// Synthesizes a room impulse response: a unit direct-path tap followed by
/// white noise under a `10^(-3 t / rt60)` envelope, which decays by 60 dB
/// at `t = rt60`. Length is one `rt60` worth of samples.
pub fn synth_rir(rt60_secs: f64, sample_rate: u32, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(rt60_secs > 0.0) || !rt60_secs.is_finite() {
        return Err(Error::invalid("synth_rir", "rt60 must be positive and finite"));
    }
    if sample_rate == 0 {
        return Err(Error::invalid("synth_rir", "sample rate must be positive"));
    }
    let len = ((rt60_secs * sample_rate as f64).round() as usize).max(2);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut taps = vec![0.0; len];
    taps[0] = 1.0;
    for (k, tap) in taps.iter_mut().enumerate().skip(1) {
        let t = k as f64 / sample_rate as f64;
        let env = 10f64.powf(-3.0 * t / rt60_secs);
        *tap = 0.3 * env * normal.sample(rng);
    }
    Ok(taps)
}

/// Windowed-sinc bandpass FIR (Hamming window, odd tap count).
pub fn bandpass_fir(band: Band, sample_rate: u32, taps: usize) -> Result<Vec<f64>> {
    let fs = sample_rate as f64;
    if !(band.lo_hz > 0.0 && band.hi_hz > band.lo_hz && band.hi_hz < fs / 2.0) {
        return Err(Error::invalid(
            "bandpass_fir",
            format!("band {}..{} Hz invalid at fs {}", band.lo_hz, band.hi_hz, fs),
        ));
    }
    if taps < 3 || taps % 2 == 0 {
        return Err(Error::invalid("bandpass_fir", "taps must be odd and >= 3"));
    }
    let mid = (taps - 1) as f64 / 2.0;
    let mut h = vec![0.0; taps];
    for (n, hv) in h.iter_mut().enumerate() {
        let m = n as f64 - mid;
        let ideal = if m == 0.0 {
            2.0 * (band.hi_hz - band.lo_hz) / fs
        } else {
            let w = std::f64::consts::PI * m;
            ((2.0 * band.hi_hz * m * std::f64::consts::PI / fs).sin()
                - (2.0 * band.lo_hz * m * std::f64::consts::PI / fs).sin())
                / w
        };
        let window = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (taps - 1) as f64).cos();
        *hv = ideal * window;
    }
    Ok(h)
}

const FIR_TAPS: usize = 129;
const FADE_SECS: f64 = 0.010;
const TARGET_RMS: f64 = 0.08;

/// Synthesizes one utterance: bandpassed white noise with a 2-5 Hz
/// amplitude wobble, 10 ms raised-cosine fades, and a fixed RMS. Samples
/// are snapped to the 32-bit float grid so the clip survives a WAV round
/// trip unchanged.
pub fn synth_utterance(
    band: Band,
    dur_secs: f64,
    sample_rate: u32,
    rng: &mut impl Rng,
) -> Result<AudioClip> {
    let fs = sample_rate as f64;
    let len = (dur_secs * fs).round() as usize;
    if len < 2 * FIR_TAPS {
        return Err(Error::invalid(
            "synth_utterance",
            format!("duration {dur_secs} s too short at {sample_rate} Hz"),
        ));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let fir = bandpass_fir(band, sample_rate, FIR_TAPS)?;
    // White noise long enough that a centered valid convolution covers len.
    let white: Vec<f64> = (0..len + FIR_TAPS - 1).map(|_| normal.sample(rng)).collect();
    let mut shaped = vec![0.0; len];
    for (i, sv) in shaped.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &h) in fir.iter().enumerate() {
            acc += h * white[i + k];
        }
        *sv = acc;
    }
    // Slow amplitude wobble, vaguely syllabic.
    let wobble_hz = 2.0 + 3.0 * rng.random::<f64>();
    let phase = 2.0 * std::f64::consts::PI * rng.random::<f64>();
    for (i, sv) in shaped.iter_mut().enumerate() {
        let t = i as f64 / fs;
        *sv *= 0.55 + 0.45 * (2.0 * std::f64::consts::PI * wobble_hz * t + phase).sin();
    }
    // Raised-cosine fades.
    let fade = ((FADE_SECS * fs).round() as usize).min(len / 2).max(1);
    for i in 0..fade {
        let w = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / fade as f64).cos();
        shaped[i] *= w;
        shaped[len - 1 - i] *= w;
    }
    let rms = (shaped.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms <= 0.0 {
        return Err(Error::invalid("synth_utterance", "degenerate zero-power draw"));
    }
    let k = TARGET_RMS / rms;
    for sv in shaped.iter_mut() {
        *sv = wav::f32_grid(*sv * k);
    }
    AudioClip::new(shaped, sample_rate)
}

/// Bands cycled over speakers so adjacent speaker ids get distinct timbres.
const SPEAKER_BANDS: [Band; 8] = [
    Band { lo_hz: 150.0, hi_hz: 800.0 },
    Band { lo_hz: 1600.0, hi_hz: 3200.0 },
    Band { lo_hz: 300.0, hi_hz: 1200.0 },
    Band { lo_hz: 1000.0, hi_hz: 2400.0 },
    Band { lo_hz: 500.0, hi_hz: 1600.0 },
    Band { lo_hz: 2000.0, hi_hz: 3600.0 },
    Band { lo_hz: 250.0, hi_hz: 900.0 },
    Band { lo_hz: 1200.0, hi_hz: 2800.0 },
];

const DIALECTS: [&str; 8] = ["dr1", "dr2", "dr3", "dr4", "dr5", "dr6", "dr7", "dr8"];

/// Builds a pool of `n_speakers`, each with `utts_per_speaker` utterances
/// of uniformly random duration in `[dur_lo_secs, dur_hi_secs]`.
pub fn synth_pool(
    n_speakers: usize,
    utts_per_speaker: usize,
    dur_lo_secs: f64,
    dur_hi_secs: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<SourcePool> {
    if n_speakers < 2 {
        return Err(Error::invalid("synth_pool", "need at least two speakers"));
    }
    if utts_per_speaker == 0 {
        return Err(Error::invalid("synth_pool", "need at least one utterance per speaker"));
    }
    if !(dur_lo_secs > 0.0 && dur_hi_secs >= dur_lo_secs) {
        return Err(Error::invalid("synth_pool", "bad duration range"));
    }
    let dur = Uniform::new_inclusive(dur_lo_secs, dur_hi_secs)
        .map_err(|e| Error::invalid("synth_pool", e.to_string()))?;
    let mut speakers = Vec::with_capacity(n_speakers);
    for si in 0..n_speakers {
        let band = SPEAKER_BANDS[si % SPEAKER_BANDS.len()];
        let mut utterances = Vec::with_capacity(utts_per_speaker);
        for ui in 0..utts_per_speaker {
            let mut r = rng::stream(seed, rng::tag("utt", (si as u64) << 20 | ui as u64));
            let d = dur.sample(&mut r);
            utterances.push(synth_utterance(band, d, sample_rate, &mut r)?);
        }
        speakers.push(Speaker {
            id: format!("sp{si:03}"),
            gender: if si % 2 == 0 { "m" } else { "f" }.to_string(),
            dialect: DIALECTS[si % DIALECTS.len()].to_string(),
            age: format!("{}", 20 + (si * 3) % 40),
            utterances,
        });
    }
    Ok(SourcePool { speakers, sample_rate })
}

/// Two-speaker pool with widely separated bands (200-900 Hz vs
/// 1800-3400 Hz). Mixtures drawn from it are nearly separable by a small
/// model, which makes it the pool of choice for training smoke tests.
pub fn two_band_pool(
    utts_per_speaker: usize,
    dur_secs: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<SourcePool> {
    let bands = [
        Band { lo_hz: 200.0, hi_hz: 900.0 },
        Band { lo_hz: 1800.0, hi_hz: 3400.0 },
    ];
    let mut speakers = Vec::with_capacity(2);
    for (si, band) in bands.iter().enumerate() {
        let mut utterances = Vec::with_capacity(utts_per_speaker);
        for ui in 0..utts_per_speaker {
            let mut r = rng::stream(seed, rng::tag("utt", (si as u64) << 20 | ui as u64));
            utterances.push(synth_utterance(*band, dur_secs, sample_rate, &mut r)?);
        }
        speakers.push(Speaker {
            id: format!("sp{si:03}"),
            gender: if si == 0 { "m" } else { "f" }.to_string(),
            dialect: DIALECTS[si].to_string(),
            age: format!("{}", 25 + si * 10),
            utterances,
        });
    }
    Ok(SourcePool { speakers, sample_rate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rir_starts_with_unit_tap_and_decays() {
        let mut r = rng::stream(7, 0);
        let h = synth_rir(0.25, 8000, &mut r).unwrap();
        assert_eq!(h.len(), 2000);
        assert_eq!(h[0], 1.0);
        let head: f64 = h[1..200].iter().map(|v| v * v).sum();
        let tail: f64 = h[1800..].iter().map(|v| v * v).sum();
        assert!(tail < head, "tail energy {tail} should sit below head {head}");
        // Envelope at t = rt60 is -60 dB; every late tap obeys the bound.
        for (k, &tap) in h.iter().enumerate().skip(1900) {
            let t = k as f64 / 8000.0;
            let bound = 0.3 * 10f64.powf(-3.0 * t / 0.25) * 6.0;
            assert!(tap.abs() <= bound, "tap {k} = {tap} above envelope");
        }
    }

    #[test]
    fn utterance_is_band_limited() {
        let band = Band { lo_hz: 1800.0, hi_hz: 3400.0 };
        let mut r = rng::stream(3, 1);
        let u = synth_utterance(band, 1.0, 8000, &mut r).unwrap();
        assert_eq!(u.len(), 8000);
        // Goertzel-style energy probes inside and outside the band.
        let probe = |f_hz: f64| -> f64 {
            let w = 2.0 * std::f64::consts::PI * f_hz / 8000.0;
            let (mut c, mut s) = (0.0, 0.0);
            for (i, &v) in u.samples().iter().enumerate() {
                c += v * (w * i as f64).cos();
                s += v * (w * i as f64).sin();
            }
            c * c + s * s
        };
        let inside = probe(2600.0);
        let outside = probe(400.0) + probe(600.0);
        assert!(inside > 100.0 * outside, "inside {inside} outside {outside}");
    }

    #[test]
    fn utterance_rms_is_pinned() {
        let band = Band { lo_hz: 300.0, hi_hz: 1200.0 };
        let mut r = rng::stream(11, 4);
        let u = synth_utterance(band, 0.5, 8000, &mut r).unwrap();
        assert!((u.rms() - TARGET_RMS).abs() < 1e-6);
    }

    #[test]
    fn pools_are_reproducible() {
        let a = synth_pool(3, 2, 0.8, 1.2, 8000, 42).unwrap();
        let b = synth_pool(3, 2, 0.8, 1.2, 8000, 42).unwrap();
        for (sa, sb) in a.speakers.iter().zip(&b.speakers) {
            assert_eq!(sa.id, sb.id);
            for (ua, ub) in sa.utterances.iter().zip(&sb.utterances) {
                assert_eq!(ua.samples(), ub.samples());
            }
        }
        let c = synth_pool(3, 2, 0.8, 1.2, 8000, 43).unwrap();
        assert_ne!(
            a.speakers[0].utterances[0].samples(),
            c.speakers[0].utterances[0].samples()
        );
    }

    #[test]
    fn two_band_pool_has_disjoint_spectra() {
        let pool = two_band_pool(1, 1.0, 8000, 5).unwrap();
        assert_eq!(pool.speakers.len(), 2);
        let lo = &pool.speakers[0].utterances[0];
        let hi = &pool.speakers[1].utterances[0];
        // Correlation between band-disjoint signals stays near zero
        // relative to their energies.
        let dot: f64 = lo.samples().iter().zip(hi.samples()).map(|(a, b)| a * b).sum();
        let e: f64 = lo.samples().iter().map(|v| v * v).sum::<f64>().sqrt()
            * hi.samples().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((dot / e).abs() < 0.05);
    }
}
