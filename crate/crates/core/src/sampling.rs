//! Training-set length limiting and batch construction: random or fixed
//! crops to a sample budget, batch splitting into shorter windows, and
//! the corpus length statistics the experiments condition on.
//!
//! Everything here is a pure function of (corpus, config, epoch); batches
//! come out in a deterministic order given the sampler seed.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::mixsim::{MixtureItem, MixtureSet};
use crate::rng;

/// The signal-length limits swept in the experiments, in seconds.
pub const TSL_GRID_SECS: [f64; 12] =
    [0.5, 0.66, 0.86, 1.13, 1.49, 1.95, 2.56, 3.36, 4.42, 5.8, 7.62, 10.0];

/// Default deterministic crop start: 0.25 s at 8 kHz.
pub const FIXED_CROP_START: usize = 1999;

pub fn tsl_grid() -> [f64; 12] {
    TSL_GRID_SECS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartMode {
    /// Start index uniform on `{0, ..., max(0, L_x - L_lim)}`.
    Random,
    /// Every long clip starts at the same sample.
    Fixed { start_sample: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Signal-length limit in seconds; `None` trains on whole signals.
    pub t_lim_s: Option<f64>,
    pub start_mode: StartMode,
    /// Split factor D: each cropped window is cut into D equal pieces.
    pub split_factor: usize,
    /// Re-simulate the training mixtures every epoch (handled by the
    /// trainer; recorded here because it is part of the sampling recipe).
    pub dynamic_mixing: bool,
    pub seed: u64,
    /// Mixtures per batch before splitting; a batch carries
    /// `batch_size * split_factor` windows after the split.
    pub batch_size: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            t_lim_s: None,
            start_mode: StartMode::Random,
            split_factor: 1,
            dynamic_mixing: false,
            seed: 0,
            batch_size: 4,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.t_lim_s {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::invalid("sampler", format!("t_lim_s must be positive, got {t}")));
            }
        }
        if self.split_factor == 0 {
            return Err(Error::invalid("sampler", "split_factor must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("sampler", "batch_size must be >= 1"));
        }
        Ok(())
    }

    /// Sample budget for a given rate, `round(t_lim_s * f_s)`.
    pub fn limit_samples(&self, sample_rate: u32) -> Option<usize> {
        self.t_lim_s.map(|t| ((t * sample_rate as f64).round() as usize).max(1))
    }
}

/// Crops to at most `l_lim` samples with a uniformly random start.
pub fn crop_random(x: &AudioClip, l_lim: usize, rng: &mut impl Rng) -> Result<AudioClip> {
    if l_lim == 0 {
        return Err(Error::invalid("crop_random", "length limit must be positive"));
    }
    if x.len() <= l_lim {
        return Ok(x.clone());
    }
    let start = rng.random_range(0..=x.len() - l_lim);
    x.slice(start, l_lim)
}

/// Crops to at most `l_lim` samples from a fixed start. Clips within the
/// limit pass through whole; long clips are sliced at `start`, shortened
/// further if fewer than `l_lim` samples remain.
pub fn crop_fixed(x: &AudioClip, l_lim: usize, start: usize) -> Result<AudioClip> {
    if l_lim == 0 {
        return Err(Error::invalid("crop_fixed", "length limit must be positive"));
    }
    if x.len() <= l_lim {
        return Ok(x.clone());
    }
    if start >= x.len() {
        return Err(Error::invalid(
            "crop_fixed",
            format!("start {start} beyond clip of {} samples", x.len()),
        ));
    }
    x.slice(start, l_lim.min(x.len() - start))
}

/// Cuts every clip into `d` consecutive pieces of `floor(L/d)` samples
/// (remainder dropped), keeping piece order within each clip.
pub fn split_batch(clips: &[AudioClip], d: usize) -> Result<Vec<AudioClip>> {
    if d == 0 {
        return Err(Error::invalid("split_batch", "split factor must be >= 1"));
    }
    let mut out = Vec::with_capacity(clips.len() * d);
    for clip in clips {
        let piece = clip.len() / d;
        if piece == 0 {
            return Err(Error::invalid(
                "split_batch",
                format!("clip of {} samples cannot be split {d} ways", clip.len()),
            ));
        }
        for j in 0..d {
            out.push(clip.slice(j * piece, piece)?);
        }
    }
    Ok(out)
}

/// One reference-aligned training window: the same sample range cut from
/// the mixture, every scaled reference, and the noise when present.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub mixture_id: String,
    pub mixture: AudioClip,
    pub refs: Vec<AudioClip>,
    pub noise: Option<AudioClip>,
}

pub type Batch = Vec<TrainExample>;

fn window(item: &MixtureItem, start: usize, len: usize) -> Result<TrainExample> {
    Ok(TrainExample {
        mixture_id: item.record.mixture_id.clone(),
        mixture: item.mixture.slice(start, len)?,
        refs: item.refs.iter().map(|r| r.slice(start, len)).collect::<Result<_>>()?,
        noise: item.noise.as_ref().map(|n| n.slice(start, len)).transpose()?,
    })
}

/// Builds the epoch's batches: shuffle, crop every clip once, group into
/// `batch_size` mixtures, then split each window `split_factor` ways. The
/// same window indices apply to the mixture and all its references, so
/// emitted pairs stay sample-aligned.
pub fn make_batches(set: &MixtureSet, cfg: &SamplerConfig, epoch: u64) -> Result<Vec<Batch>> {
    cfg.validate()?;
    if set.items.is_empty() {
        return Err(Error::invalid("make_batches", "empty mixture set"));
    }
    let l_lim = cfg.limit_samples(set.sample_rate);
    let mut r = rng::stream(cfg.seed, rng::tag("epoch-batches", epoch));
    let mut order: Vec<usize> = (0..set.items.len()).collect();
    order.shuffle(&mut r);

    let mut cropped = Vec::with_capacity(order.len());
    for &i in &order {
        let item = &set.items[i];
        let len = item.mixture.len();
        let (start, take) = match l_lim {
            None => (0, len),
            Some(lim) if len <= lim => (0, len),
            Some(lim) => match cfg.start_mode {
                StartMode::Random => (r.random_range(0..=len - lim), lim),
                StartMode::Fixed { start_sample } => {
                    if start_sample >= len {
                        return Err(Error::invalid(
                            "make_batches",
                            format!(
                                "fixed start {start_sample} beyond mixture `{}` of {len} samples",
                                item.record.mixture_id
                            ),
                        ));
                    }
                    (start_sample, lim.min(len - start_sample))
                }
            },
        };
        cropped.push(window(item, start, take)?);
    }

    let d = cfg.split_factor;
    let mut batches = Vec::new();
    for group in cropped.chunks(cfg.batch_size) {
        let mut batch = Vec::with_capacity(group.len() * d);
        for ex in group {
            let piece = ex.mixture.len() / d;
            if piece == 0 {
                return Err(Error::invalid(
                    "make_batches",
                    format!(
                        "window of {} samples from `{}` cannot be split {d} ways",
                        ex.mixture.len(),
                        ex.mixture_id
                    ),
                ));
            }
            for j in 0..d {
                let start = j * piece;
                batch.push(TrainExample {
                    mixture_id: ex.mixture_id.clone(),
                    mixture: ex.mixture.slice(start, piece)?,
                    refs: ex
                        .refs
                        .iter()
                        .map(|rf| rf.slice(start, piece))
                        .collect::<Result<_>>()?,
                    noise: ex.noise.as_ref().map(|n| n.slice(start, piece)).transpose()?,
                });
            }
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// Corpus length statistics: moments, quartile edges, and a Gaussian
/// kernel density estimate of the length distribution.
#[derive(Debug, Clone)]
pub struct LengthStats {
    pub mean_s: f64,
    pub std_s: f64,
    /// `[min, q1, median, q3, max]` in seconds (interpolated order
    /// statistics).
    pub edges: [f64; 5],
    /// 256-point evaluation grid spanning the data ± 4 bandwidths.
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

const KDE_POINTS: usize = 256;
const BANDWIDTH_FLOOR_S: f64 = 0.01;

/// Interpolated order statistic at probability `p` of sorted data
/// (the linear-interpolation convention used by most stats packages).
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn length_stats(set: &MixtureSet) -> Result<LengthStats> {
    let lengths = set.lengths_secs();
    if lengths.is_empty() {
        return Err(Error::invalid("length_stats", "empty mixture set"));
    }
    let n = lengths.len();
    let mean = lengths.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (lengths.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = lengths.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile(&sorted, 0.25);
    let q2 = quantile(&sorted, 0.50);
    let q3 = quantile(&sorted, 0.75);
    let edges = [sorted[0], q1, q2, q3, sorted[n - 1]];

    // Silverman's rule with an absolute floor so identical lengths do not
    // collapse the kernel into a spike.
    let iqr = q3 - q1;
    let scale = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
    let h = (0.9 * scale * (n as f64).powf(-0.2)).max(BANDWIDTH_FLOOR_S);
    let lo = sorted[0] - 4.0 * h;
    let hi = sorted[n - 1] + 4.0 * h;
    let step = (hi - lo) / (KDE_POINTS - 1) as f64;
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let grid: Vec<f64> = (0..KDE_POINTS).map(|i| lo + i as f64 * step).collect();
    let density: Vec<f64> = grid
        .iter()
        .map(|&g| {
            norm * lengths
                .iter()
                .map(|&x| (-(g - x) * (g - x) / (2.0 * h * h)).exp())
                .sum::<f64>()
        })
        .collect();
    Ok(LengthStats { mean_s: mean, std_s: std, edges, grid, density })
}

impl LengthStats {
    /// Trapezoid integral of the density over its grid; close to one by
    /// construction (the grid spans every kernel's ±4σ).
    pub fn density_integral(&self) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.grid.len() {
            acc += 0.5 * (self.density[i] + self.density[i - 1]) * (self.grid[i] - self.grid[i - 1]);
        }
        acc
    }
}

/// Mean score per length quartile. Items are ranked by length (stable in
/// input order on ties) and cut at ranks `floor(k*n/4)`; the partition
/// sizes therefore differ by at most one.
pub fn quartile_eval(scores: &[f64], lengths: &[f64]) -> Result<[f64; 4]> {
    if scores.len() != lengths.len() {
        return Err(Error::invalid(
            "quartile_eval",
            format!("{} scores vs {} lengths", scores.len(), lengths.len()),
        ));
    }
    let n = scores.len();
    if n < 4 {
        return Err(Error::invalid("quartile_eval", format!("need at least 4 items, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| lengths[a].partial_cmp(&lengths[b]).unwrap());
    let mut out = [0.0; 4];
    for k in 0..4 {
        let lo = k * n / 4;
        let hi = (k + 1) * n / 4;
        let part = &idx[lo..hi];
        out[k] = part.iter().map(|&i| scores[i]).sum::<f64>() / part.len() as f64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixsim::{dynamic_mix, synth_pool, MixSpec};

    /// Chi-squared critical values at significance 0.01.
    const CHI2_CRIT_DF19: f64 = 36.19086913;
    const CHI2_CRIT_DF1: f64 = 6.634896601;

    fn clip(len: usize) -> AudioClip {
        AudioClip::new((0..len).map(|i| (i as f64 * 0.37).sin() * 0.1).collect(), 8000).unwrap()
    }

    fn small_set(n_mixtures: usize, seed: u64) -> MixtureSet {
        let pool = synth_pool(3, 2, 0.6, 1.4, 8000, seed).unwrap();
        let spec = MixSpec { n_mixtures, ..MixSpec::default() };
        dynamic_mix(&pool, &spec, seed, 0).unwrap()
    }

    #[test]
    fn grid_is_the_published_twelve() {
        let g = tsl_grid();
        assert_eq!(g.len(), 12);
        assert_eq!(g[0], 0.5);
        assert_eq!(g[11], 10.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn random_crop_respects_limits() {
        let mut r = rng::stream(1, 0);
        let short = clip(50);
        let out = crop_random(&short, 100, &mut r).unwrap();
        assert_eq!(out.samples(), short.samples());
        for _ in 0..1000 {
            let out = crop_random(&clip(317), 100, &mut r).unwrap();
            assert_eq!(out.len(), 100);
        }
    }

    #[test]
    fn random_crop_start_is_uniform() {
        // 20 possible starts, 10k draws, chi-squared at alpha = 0.01.
        let x = clip(119);
        let mut r = rng::stream(7, 1);
        let mut counts = [0usize; 20];
        for _ in 0..10_000 {
            let c = crop_random(&x, 100, &mut r).unwrap();
            let start = (0..20)
                .find(|&s| x.slice(s, 100).unwrap().samples() == c.samples())
                .unwrap();
            counts[start] += 1;
        }
        let e = 10_000.0 / 20.0;
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        assert!(chi2 < CHI2_CRIT_DF19, "chi2 {chi2}");
    }

    #[test]
    fn two_start_case_is_a_fair_coin() {
        let x = clip(101);
        let mut r = rng::stream(8, 2);
        let mut zero = 0usize;
        for _ in 0..10_000 {
            let c = crop_random(&x, 100, &mut r).unwrap();
            if c.samples() == x.slice(0, 100).unwrap().samples() {
                zero += 1;
            }
        }
        let e = 5000.0;
        let chi2 = (zero as f64 - e).powi(2) / e + ((10_000 - zero) as f64 - e).powi(2) / e;
        assert!(chi2 < CHI2_CRIT_DF1, "chi2 {chi2}, zeros {zero}");
    }

    #[test]
    fn fixed_crop_matches_contract() {
        let x = clip(10_000);
        let whole = crop_fixed(&clip(4000), 5000, FIXED_CROP_START).unwrap();
        assert_eq!(whole.len(), 4000);
        let cut = crop_fixed(&x, 5000, FIXED_CROP_START).unwrap();
        assert_eq!(cut.len(), 5000);
        assert_eq!(cut.samples()[0], x.samples()[FIXED_CROP_START]);
        // Fewer than l_lim samples remain after the start: take the tail.
        let tail = crop_fixed(&x, 9000, 1999).unwrap();
        assert_eq!(tail.len(), 10_000 - 1999);
        assert!(crop_fixed(&x, 5000, 10_000).is_err());
    }

    #[test]
    fn split_keeps_order_and_conserves_samples() {
        let a = AudioClip::new((0..10).map(|i| i as f64 * 0.01).collect(), 8000).unwrap();
        let b = AudioClip::new((0..10).map(|i| -(i as f64) * 0.01).collect(), 8000).unwrap();
        let one = split_batch(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(one.len(), 2);
        assert_eq!(one[0].samples(), a.samples());
        let four = split_batch(&[a.clone(), b.clone()], 2).unwrap();
        assert_eq!(four.len(), 4);
        assert_eq!(four[0].samples(), &a.samples()[..5]);
        assert_eq!(four[1].samples(), &a.samples()[5..]);
        assert_eq!(four[2].samples(), &b.samples()[..5]);
        assert_eq!(four[3].samples(), &b.samples()[5..]);
        for d in [1usize, 2, 4] {
            let src = vec![clip(11); 3];
            let out = split_batch(&src, d).unwrap();
            let total: usize = out.iter().map(|c| c.len()).sum();
            assert_eq!(total, 3 * d * (11 / d));
        }
        assert!(split_batch(&[clip(3)], 4).is_err());
    }

    #[test]
    fn batches_stay_reference_aligned() {
        let set = small_set(12, 3);
        let cfg = SamplerConfig {
            t_lim_s: Some(0.5),
            split_factor: 2,
            batch_size: 4,
            seed: 11,
            ..SamplerConfig::default()
        };
        let batches = make_batches(&set, &cfg, 0).unwrap();
        assert_eq!(batches.iter().map(Vec::len).sum::<usize>(), 24);
        for batch in &batches {
            for ex in batch {
                assert_eq!(ex.refs.len(), 2);
                // The mixture window must equal the rounded sum of its
                // reference windows, sample for sample.
                for (t, &m) in ex.mixture.samples().iter().enumerate() {
                    let mut want = ex.refs[0].samples()[t] + ex.refs[1].samples()[t];
                    if let Some(nz) = &ex.noise {
                        want += nz.samples()[t];
                    }
                    assert_eq!(m.to_bits(), want.to_bits());
                }
            }
        }
    }

    #[test]
    fn epochs_are_deterministic_but_distinct() {
        let set = small_set(20, 4);
        let cfg = SamplerConfig { t_lim_s: Some(0.4), seed: 5, ..SamplerConfig::default() };
        let flatten = |bs: &[Batch]| -> Vec<(String, Vec<u64>)> {
            bs.iter()
                .flatten()
                .map(|ex| {
                    (
                        ex.mixture_id.clone(),
                        ex.mixture.samples().iter().map(|v| v.to_bits()).collect(),
                    )
                })
                .collect()
        };
        let a = flatten(&make_batches(&set, &cfg, 3).unwrap());
        let b = flatten(&make_batches(&set, &cfg, 3).unwrap());
        assert_eq!(a, b);
        let c = flatten(&make_batches(&set, &cfg, 4).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn fixed_mode_crops_at_the_same_sample() {
        let set = small_set(6, 9);
        let lim = 0.3;
        let cfg = SamplerConfig {
            t_lim_s: Some(lim),
            start_mode: StartMode::Fixed { start_sample: 40 },
            seed: 2,
            ..SamplerConfig::default()
        };
        let batches = make_batches(&set, &cfg, 0).unwrap();
        let lim_samples = (lim * 8000.0).round() as usize;
        for ex in batches.iter().flatten() {
            let item = set
                .items
                .iter()
                .find(|it| it.record.mixture_id == ex.mixture_id)
                .unwrap();
            if item.mixture.len() > lim_samples {
                assert_eq!(ex.mixture.samples()[0], item.mixture.samples()[40]);
            } else {
                assert_eq!(ex.mixture.len(), item.mixture.len());
            }
        }
    }

    #[test]
    fn length_stats_match_hand_oracle() {
        let set = small_set(40, 6);
        let stats = length_stats(&set).unwrap();
        let lens = set.lengths_secs();
        let mean = lens.iter().sum::<f64>() / lens.len() as f64;
        assert!((stats.mean_s - mean).abs() < 1e-12);
        let var = lens.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (lens.len() - 1) as f64;
        assert!((stats.std_s - var.sqrt()).abs() < 1e-12);
        assert!(stats.edges.windows(2).all(|w| w[0] <= w[1]));
        let integral = stats.density_integral();
        assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
    }

    #[test]
    fn equal_lengths_hit_the_bandwidth_floor() {
        let pool = synth_pool(2, 2, 1.0, 1.0, 8000, 12).unwrap();
        let set = dynamic_mix(&pool, &MixSpec { n_mixtures: 8, ..MixSpec::default() }, 1, 0).unwrap();
        let lens = set.lengths_secs();
        assert!(lens.iter().all(|&l| (l - lens[0]).abs() < 1e-12));
        let stats = length_stats(&set).unwrap();
        assert_eq!(stats.std_s, 0.0);
        assert!(stats.density.iter().all(|d| d.is_finite()));
        assert!((stats.density_integral() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn quantile_interpolation_matches_known_values() {
        let sorted: Vec<f64> = (1..=8).map(|v| v as f64).collect();
        assert_eq!(quantile(&sorted, 0.25), 2.75);
        assert_eq!(quantile(&sorted, 0.5), 4.5);
        assert_eq!(quantile(&sorted, 0.75), 6.25);
    }

    #[test]
    fn quartile_eval_partitions_by_rank() {
        let lengths: Vec<f64> = (0..10).map(|i| (i as f64) * 0.5 + 1.0).collect();
        let constant = vec![2.5; 10];
        assert_eq!(quartile_eval(&constant, &lengths).unwrap(), [2.5; 4]);
        let increasing = quartile_eval(&lengths, &lengths).unwrap();
        assert!(increasing.windows(2).all(|w| w[0] < w[1]));
        // n = 10 splits as 2/3/2/3 by the floor boundaries.
        assert_eq!(increasing[0], (1.0 + 1.5) / 2.0);
        assert_eq!(increasing[1], (2.0 + 2.5 + 3.0) / 3.0);
        // Pair order must not matter.
        let mut r = rng::stream(3, 3);
        let mut pairs: Vec<(f64, f64)> = lengths.iter().map(|&l| (l, l * 2.0)).collect();
        pairs.shuffle(&mut r);
        let ls: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ss: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let shuffled = quartile_eval(&ss, &ls).unwrap();
        let straight =
            quartile_eval(&lengths.iter().map(|l| l * 2.0).collect::<Vec<_>>(), &lengths).unwrap();
        assert_eq!(shuffled, straight);
        assert!(quartile_eval(&[1.0; 3], &[1.0, 2.0, 3.0]).is_err());
    }
}
