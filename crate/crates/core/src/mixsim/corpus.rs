//! Corpus construction and loading.
//!
//! A corpus is a directory of WAV files plus one `mixtures.csv` manifest.
//! The manifest is the source of truth: a loader rebuilds every mixture
//! and reference from the manifest row and the source files rather than
//! trusting the rendered mixture WAV. To make that reconstruction exact,
//! sources are snapped to the 32-bit float grid *before* gains are
//! computed and mixing happens in f64 through one shared code path
//! ([`mix_sources`]), so generation and reconstruction round identically.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::rng;
use crate::wav;

use super::synth::SourcePool;
use super::{apply_rir, gain_for_ssr, noise_gain_for_snr, synth_rir};

/// One manifest row. Column order is the field order below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub mixture_id: String,
    pub s1_path: String,
    pub s2_path: String,
    pub noise_path: String,
    pub ssr_db: f64,
    pub snr_db: Option<f64>,
    pub g1: f64,
    pub g2: f64,
    pub g_noise: f64,
    pub s1_start: usize,
    pub s2_start: usize,
    pub length_samples: usize,
    pub s1_speaker: String,
    pub s2_speaker: String,
    pub s1_gender: String,
    pub s2_gender: String,
    pub s1_dialect: String,
    pub s2_dialect: String,
    pub s1_age: String,
    pub s2_age: String,
}

/// A mixture with its references materialized in memory (f64).
#[derive(Debug, Clone)]
pub struct MixtureItem {
    pub record: MixtureRecord,
    pub mixture: AudioClip,
    /// Scaled reference sources, one per speaker, same length as the mixture.
    pub refs: Vec<AudioClip>,
    pub noise: Option<AudioClip>,
}

/// An in-memory corpus.
#[derive(Debug, Clone)]
pub struct MixtureSet {
    pub items: Vec<MixtureItem>,
    pub sample_rate: u32,
}

impl MixtureSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Mixture durations in seconds, in manifest order.
    pub fn lengths_secs(&self) -> Vec<f64> {
        self.items
            .iter()
            .map(|it| it.record.length_samples as f64 / self.sample_rate as f64)
            .collect()
    }
}

/// Generation knobs for a batch of mixtures.
#[derive(Debug, Clone)]
pub struct MixSpec {
    pub n_mixtures: usize,
    /// Source-to-source ratio range in dB, sampled uniformly.
    pub ssr_range: (f64, f64),
    /// Noise SNR range in dB against the loudest scaled source; `None`
    /// disables the noise term.
    pub snr_range: Option<(f64, f64)>,
    /// Reverberation time range in seconds; `None` keeps sources anechoic.
    pub rt60_range: Option<(f64, f64)>,
    /// Mixtures peaking above this are rescaled (all gains shrink together,
    /// preserving SSR and SNR).
    pub peak_limit: f64,
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec {
            n_mixtures: 100,
            ssr_range: (0.0, 5.0),
            snr_range: None,
            rt60_range: None,
            peak_limit: 0.99,
        }
    }
}

/// The one true mixing expression. Both generation and reconstruction call
/// this, so the rounding sequence is identical on both sides.
pub fn mix_sources(
    g1: f64,
    s1: &[f64],
    g2: f64,
    s2: &[f64],
    noise: Option<(f64, &[f64])>,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(s1.len());
    match noise {
        None => {
            for (a, b) in s1.iter().zip(s2) {
                out.push(g1 * a + g2 * b);
            }
        }
        Some((gn, n)) => {
            for ((a, b), c) in s1.iter().zip(s2).zip(n) {
                out.push(g1 * a + g2 * b + gn * c);
            }
        }
    }
    out
}

struct RawMixture {
    record: MixtureRecord,
    s1_full: Vec<f64>,
    s2_full: Vec<f64>,
    noise: Option<Vec<f64>>,
    mixture: Vec<f64>,
    refs: [Vec<f64>; 2],
}

fn uniform_in(range: (f64, f64), op: &'static str) -> Result<Uniform<f64>> {
    Uniform::new_inclusive(range.0, range.1).map_err(|e| Error::invalid(op, e.to_string()))
}

fn write_samples(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    wav::write_wav(path, &AudioClip::new(samples.to_vec(), sample_rate)?)
}

fn draw_mixture(
    pool: &SourcePool,
    spec: &MixSpec,
    id: &str,
    rng: &mut impl Rng,
) -> Result<RawMixture> {
    if pool.speakers.len() < 2 {
        return Err(Error::invalid("draw_mixture", "pool needs at least two speakers"));
    }
    let ssr_dist = uniform_in(spec.ssr_range, "draw_mixture")?;
    // Distinct speaker pair.
    let i = rng.random_range(0..pool.speakers.len());
    let mut j = rng.random_range(0..pool.speakers.len() - 1);
    if j >= i {
        j += 1;
    }
    let (sp1, sp2) = (&pool.speakers[i], &pool.speakers[j]);
    if sp1.utterances.is_empty() || sp2.utterances.is_empty() {
        return Err(Error::invalid("draw_mixture", "speaker with no utterances"));
    }
    let u1 = &sp1.utterances[rng.random_range(0..sp1.utterances.len())];
    let u2 = &sp2.utterances[rng.random_range(0..sp2.utterances.len())];

    // Optional reverberation, then snap to the f32 grid: the snapped
    // signals are exactly what the source WAVs will hold.
    let mut make_source = |u: &AudioClip| -> Result<Vec<f64>> {
        let dry = u.samples().to_vec();
        let wet = match spec.rt60_range {
            None => dry,
            Some(range) => {
                let rt60 = uniform_in(range, "draw_mixture")?.sample(rng);
                let h = synth_rir(rt60, pool.sample_rate, rng)?;
                apply_rir(u, &h)?.samples().to_vec()
            }
        };
        Ok(wet.into_iter().map(wav::f32_grid).collect())
    };
    let s1_full = make_source(u1)?;
    let s2_full = make_source(u2)?;

    let len = s1_full.len().min(s2_full.len());
    let s1_start = rng.random_range(0..=s1_full.len() - len);
    let s2_start = rng.random_range(0..=s2_full.len() - len);
    let c1 = &s1_full[s1_start..s1_start + len];
    let c2 = &s2_full[s2_start..s2_start + len];

    let ssr_db = ssr_dist.sample(rng);
    let clip1 = AudioClip::new(c1.to_vec(), pool.sample_rate)?;
    let clip2 = AudioClip::new(c2.to_vec(), pool.sample_rate)?;
    let mut g1 = 1.0;
    let mut g2 = gain_for_ssr(&clip1, &clip2, ssr_db)?;

    let (snr_db, mut g_noise, noise) = match spec.snr_range {
        None => (None, 0.0, None),
        Some(range) => {
            let snr = uniform_in(range, "draw_mixture")?.sample(rng);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let n: Vec<f64> = (0..len).map(|_| wav::f32_grid(normal.sample(rng))).collect();
            let nclip = AudioClip::new(n.clone(), pool.sample_rate)?;
            let gn = noise_gain_for_snr(&[clip1.scaled(g1)?, clip2.scaled(g2)?], &nclip, snr)?;
            (Some(snr), gn, Some(n))
        }
    };

    let noise_arg = noise.as_ref().map(|n| (g_noise, n.as_slice()));
    let mut mixture = mix_sources(g1, c1, g2, c2, noise_arg);
    let peak = mixture.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > spec.peak_limit {
        let k = spec.peak_limit / peak;
        g1 *= k;
        g2 *= k;
        g_noise *= k;
        let noise_arg = noise.as_ref().map(|n| (g_noise, n.as_slice()));
        mixture = mix_sources(g1, c1, g2, c2, noise_arg);
    }

    let refs = [
        c1.iter().map(|v| g1 * v).collect::<Vec<_>>(),
        c2.iter().map(|v| g2 * v).collect::<Vec<_>>(),
    ];

    let record = MixtureRecord {
        mixture_id: id.to_string(),
        s1_path: String::new(),
        s2_path: String::new(),
        noise_path: String::new(),
        ssr_db,
        snr_db,
        g1,
        g2,
        g_noise,
        s1_start,
        s2_start,
        length_samples: len,
        s1_speaker: sp1.id.clone(),
        s2_speaker: sp2.id.clone(),
        s1_gender: sp1.gender.clone(),
        s2_gender: sp2.gender.clone(),
        s1_dialect: sp1.dialect.clone(),
        s2_dialect: sp2.dialect.clone(),
        s1_age: sp1.age.clone(),
        s2_age: sp2.age.clone(),
    };
    Ok(RawMixture { record, s1_full, s2_full, noise, mixture, refs })
}

fn raw_to_item(raw: &RawMixture, sample_rate: u32) -> Result<MixtureItem> {
    Ok(MixtureItem {
        record: raw.record.clone(),
        mixture: AudioClip::new(raw.mixture.clone(), sample_rate)?,
        refs: vec![
            AudioClip::new(raw.refs[0].clone(), sample_rate)?,
            AudioClip::new(raw.refs[1].clone(), sample_rate)?,
        ],
        noise: match &raw.noise {
            None => None,
            Some(n) => Some(AudioClip::new(
                n.iter().map(|v| raw.record.g_noise * v).collect(),
                sample_rate,
            )?),
        },
    })
}

/// Generates `spec.n_mixtures` mixtures from the pool and writes the
/// corpus under `out_dir`: `sources/`, optional `noise/`, rendered
/// `mixtures/`, and the `mixtures.csv` manifest. Returns the corpus in
/// memory as well. Deterministic in `seed`.
pub fn build_corpus(
    pool: &SourcePool,
    spec: &MixSpec,
    seed: u64,
    out_dir: &Path,
) -> Result<MixtureSet> {
    if spec.n_mixtures == 0 {
        return Err(Error::invalid("build_corpus", "n_mixtures must be positive"));
    }
    std::fs::create_dir_all(out_dir.join("sources"))?;
    std::fs::create_dir_all(out_dir.join("mixtures"))?;
    if spec.snr_range.is_some() {
        std::fs::create_dir_all(out_dir.join("noise"))?;
    }
    let mut writer = csv::Writer::from_path(out_dir.join("mixtures.csv"))
        .map_err(|e| Error::Corpus(format!("manifest open failed: {e}")))?;
    let mut items = Vec::with_capacity(spec.n_mixtures);
    for m in 0..spec.n_mixtures {
        let id = format!("mx{m:05}");
        let mut r = rng::stream(seed, rng::tag("mixture", m as u64));
        let mut raw = draw_mixture(pool, spec, &id, &mut r)?;

        let s1_rel = format!("sources/{id}_s1.wav");
        let s2_rel = format!("sources/{id}_s2.wav");
        write_samples(&out_dir.join(&s1_rel), &raw.s1_full, pool.sample_rate)?;
        write_samples(&out_dir.join(&s2_rel), &raw.s2_full, pool.sample_rate)?;
        raw.record.s1_path = s1_rel;
        raw.record.s2_path = s2_rel;
        if let Some(n) = &raw.noise {
            let n_rel = format!("noise/{id}.wav");
            write_samples(&out_dir.join(&n_rel), n, pool.sample_rate)?;
            raw.record.noise_path = n_rel;
        }
        write_samples(&out_dir.join(format!("mixtures/{id}.wav")), &raw.mixture, pool.sample_rate)?;

        writer
            .serialize(&raw.record)
            .map_err(|e| Error::Corpus(format!("manifest write failed: {e}")))?;
        items.push(raw_to_item(&raw, pool.sample_rate)?);
    }
    writer
        .flush()
        .map_err(|e| Error::Corpus(format!("manifest flush failed: {e}")))?;
    Ok(MixtureSet { items, sample_rate: pool.sample_rate })
}

fn crop_from_wav(dir: &Path, rel: &str, start: usize, len: usize) -> Result<(Vec<f64>, u32)> {
    let clip = wav::read_wav(&dir.join(rel))?;
    if start + len > clip.len() {
        return Err(Error::Corpus(format!(
            "{rel}: crop {start}+{len} exceeds length {}",
            clip.len()
        )));
    }
    Ok((clip.samples()[start..start + len].to_vec(), clip.sample_rate()))
}

/// Rebuilds one mixture from its manifest row and the source files,
/// without touching the rendered mixture WAV.
pub fn reconstruct_mixture(record: &MixtureRecord, dir: &Path) -> Result<AudioClip> {
    Ok(load_item(record, dir)?.mixture)
}

fn load_item(record: &MixtureRecord, dir: &Path) -> Result<MixtureItem> {
    let len = record.length_samples;
    let (c1, rate1) = crop_from_wav(dir, &record.s1_path, record.s1_start, len)?;
    let (c2, rate2) = crop_from_wav(dir, &record.s2_path, record.s2_start, len)?;
    if rate1 != rate2 {
        return Err(Error::Corpus(format!(
            "{}: source rates differ ({rate1} vs {rate2})",
            record.mixture_id
        )));
    }
    let noise = if record.noise_path.is_empty() {
        None
    } else {
        let (n, rate_n) = crop_from_wav(dir, &record.noise_path, 0, len)?;
        if rate_n != rate1 {
            return Err(Error::Corpus(format!(
                "{}: noise rate {rate_n} differs from sources",
                record.mixture_id
            )));
        }
        Some(n)
    };
    let noise_arg = noise.as_ref().map(|n| (record.g_noise, n.as_slice()));
    let mixture = mix_sources(record.g1, &c1, record.g2, &c2, noise_arg);
    Ok(MixtureItem {
        mixture: AudioClip::new(mixture, rate1)?,
        refs: vec![
            AudioClip::new(c1.iter().map(|v| record.g1 * v).collect(), rate1)?,
            AudioClip::new(c2.iter().map(|v| record.g2 * v).collect(), rate1)?,
        ],
        noise: match noise {
            None => None,
            Some(n) => Some(AudioClip::new(
                n.iter().map(|v| record.g_noise * v).collect(),
                rate1,
            )?),
        },
        record: record.clone(),
    })
}

/// Loads a corpus directory written by [`build_corpus`]. Mixtures and
/// references are rebuilt from the manifest and sources.
pub fn load_corpus(dir: &Path) -> Result<MixtureSet> {
    let manifest = dir.join("mixtures.csv");
    let mut reader = csv::Reader::from_path(&manifest)
        .map_err(|e| Error::Corpus(format!("{}: {e}", manifest.display())))?;
    let mut items = Vec::new();
    let mut ids = BTreeSet::new();
    let mut rate = None;
    for row in reader.deserialize::<MixtureRecord>() {
        let record = row.map_err(|e| Error::Corpus(format!("bad manifest row: {e}")))?;
        if !ids.insert(record.mixture_id.clone()) {
            return Err(Error::Corpus(format!("duplicate mixture id {}", record.mixture_id)));
        }
        let item = load_item(&record, dir)?;
        match rate {
            None => rate = Some(item.mixture.sample_rate()),
            Some(r) if r != item.mixture.sample_rate() => {
                return Err(Error::Corpus(format!(
                    "{}: sample rate {} differs from corpus rate {r}",
                    record.mixture_id,
                    item.mixture.sample_rate()
                )));
            }
            _ => {}
        }
        items.push(item);
    }
    let rate = rate.ok_or_else(|| Error::Corpus("empty manifest".to_string()))?;
    Ok(MixtureSet { items, sample_rate: rate })
}

/// In-memory re-simulation for one epoch: fresh pairings, ratios, and
/// start offsets every epoch, deterministic in `(seed, epoch)`.
pub fn dynamic_mix(
    pool: &SourcePool,
    spec: &MixSpec,
    seed: u64,
    epoch: usize,
) -> Result<MixtureSet> {
    let epoch_seed = rng::derive_seed(seed, rng::tag("dynamic-epoch", epoch as u64));
    let mut items = Vec::with_capacity(spec.n_mixtures);
    for m in 0..spec.n_mixtures {
        let id = format!("ep{epoch:03}_mx{m:05}");
        let mut r = rng::stream(epoch_seed, rng::tag("mixture", m as u64));
        let raw = draw_mixture(pool, spec, &id, &mut r)?;
        items.push(raw_to_item(&raw, pool.sample_rate)?);
    }
    Ok(MixtureSet { items, sample_rate: pool.sample_rate })
}

/// Convenience: corpus directory for tests and examples, or a scratch dir.
pub fn corpus_manifest_path(dir: &Path) -> PathBuf {
    dir.join("mixtures.csv")
}
