//! Receptive-field analysis: the closed-form frame span of the dilated
//! conv stack, and an empirical perturbation probe that measures which
//! input frames can actually move a chosen output frame.
//!
//! The probe is the ground truth the analytic numbers are checked
//! against: a purely convolutional masker in frame-norm mode is bitwise
//! invariant to changes outside its analytic window, while any
//! global-context block should light up every frame.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{no_grad, Tensor};

use super::{ContextSpec, ModelConfig, NormMode, SeparationModel};

/// A perturbed input frame counts as inside the measured support when
/// some mask logit at the probed output frame moves by more than this.
pub const PROBE_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceptiveField {
    /// Width of the conv stack's receptive field in encoder frames.
    pub frames: usize,
    /// The same width in seconds: `((frames-1)*hop + window) / sample_rate`.
    pub seconds: f64,
    /// True when a context block (GRU, transformer, dual-path) couples
    /// every frame to every other, making the effective field unbounded;
    /// `frames` then still describes the conv pathway alone.
    pub global: bool,
}

fn conv_spans(cfg: &ModelConfig) -> Vec<usize> {
    (0..cfg.base_blocks())
        .map(|b| (cfg.kernel - 1) * (1usize << (b % cfg.blocks_per_stack)))
        .collect()
}

pub fn receptive_field(cfg: &ModelConfig) -> ReceptiveField {
    let (frames, global) = match &cfg.context {
        ContextSpec::DualPath { .. } => (1, true),
        ctx => (
            1 + conv_spans(cfg).iter().sum::<usize>(),
            !matches!(ctx, ContextSpec::None),
        ),
    };
    let seconds = ((frames - 1) * cfg.hop + cfg.window) as f64 / cfg.sample_rate as f64;
    ReceptiveField { frames, seconds, global }
}

/// Frame window `[lo, hi)` that can influence output frame `t_out` of a
/// purely convolutional masker, mirroring the left-light split used by
/// same-padding. Configurations with a context block cover everything.
pub fn analytic_window(cfg: &ModelConfig, t_out: usize, n_frames: usize) -> (usize, usize) {
    if !matches!(cfg.context, ContextSpec::None) {
        return (0, n_frames);
    }
    let (mut left, mut right) = (0usize, 0usize);
    for span in conv_spans(cfg) {
        left += span / 2;
        right += span - span / 2;
    }
    ((t_out.saturating_sub(left)).min(n_frames), (t_out + right + 1).min(n_frames))
}

/// Perturbs each of `n_frames` input frames by `delta` (added to every
/// channel) and returns the frames whose perturbation changes any mask
/// logit at output frame `t_out` by more than [`PROBE_THRESHOLD`].
///
/// Requires frame normalization: global normalization couples every
/// frame through the map-wide statistics, so locality would be destroyed
/// by the norm rather than measured from the architecture.
pub fn empirical_rf_probe(
    model: &SeparationModel,
    t_out: usize,
    delta: f64,
    n_frames: usize,
) -> Result<Vec<usize>> {
    let cfg = model.config();
    if cfg.norm != NormMode::Frame {
        return Err(Error::invalid(
            "empirical_rf_probe",
            "probe requires norm = frame; global norm spreads every perturbation",
        ));
    }
    if n_frames == 0 || t_out >= n_frames {
        return Err(Error::invalid(
            "empirical_rf_probe",
            format!("t_out {t_out} out of range for {n_frames} frames"),
        ));
    }
    if !delta.is_finite() {
        return Err(Error::invalid("empirical_rf_probe", "delta must be finite"));
    }
    let n = cfg.n_filters;
    let mut r = rng::named_stream(0, "rf-probe", 0);
    let base: Vec<f64> = (0..n * n_frames).map(|_| r.random_range(-1.0..1.0)).collect();
    no_grad(|| {
        let logits_at = |data: Vec<f64>| -> Result<Vec<f64>> {
            let enc = Tensor::from_vec(data, &[n, n_frames])?;
            let raw = model.mask_logits(&enc)?;
            let f = raw.shape()[1];
            Ok(raw.data().iter().skip(t_out).step_by(f).copied().collect())
        };
        let reference = logits_at(base.clone())?;
        let mut support = Vec::new();
        for frame in 0..n_frames {
            let mut data = base.clone();
            for c in 0..n {
                data[c * n_frames + frame] += delta;
            }
            let probed = logits_at(data)?;
            let moved = probed
                .iter()
                .zip(&reference)
                .any(|(p, q)| (p - q).abs() > PROBE_THRESHOLD);
            if moved {
                support.push(frame);
            }
        }
        Ok(support)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::MaskActivation;

    fn frame_cfg(context: ContextSpec) -> ModelConfig {
        ModelConfig { norm: NormMode::Frame, context, ..ModelConfig::default() }
    }

    #[test]
    fn published_configuration_spans_1531_frames() {
        let cfg = ModelConfig {
            kernel: 3,
            blocks_per_stack: 8,
            repeats: 3,
            hop: 8,
            window: 16,
            sample_rate: 8000,
            ..ModelConfig::default()
        };
        let rf = receptive_field(&cfg);
        assert_eq!(rf.frames, 1531);
        assert!((rf.seconds - 1.532).abs() < 1e-12);
        assert!(!rf.global);
    }

    #[test]
    fn degenerate_stacks_have_tiny_fields() {
        let point = ModelConfig {
            kernel: 1,
            blocks_per_stack: 1,
            repeats: 1,
            ..ModelConfig::default()
        };
        assert_eq!(receptive_field(&point).frames, 1);
        let single = ModelConfig {
            kernel: 3,
            blocks_per_stack: 1,
            repeats: 1,
            ..ModelConfig::default()
        };
        assert_eq!(receptive_field(&single).frames, 3);
    }

    #[test]
    fn toy_config_spans_61_frames() {
        let rf = receptive_field(&ModelConfig::default());
        assert_eq!(rf.frames, 61);
        assert!((rf.seconds - (60.0 * 8.0 + 16.0) / 8000.0).abs() < 1e-15);
    }

    #[test]
    fn context_blocks_flag_global() {
        assert!(receptive_field(&frame_cfg(ContextSpec::Gru { position: 0 })).global);
        assert!(
            receptive_field(&frame_cfg(ContextSpec::Transformer {
                position: 0,
                heads: 4,
                ffn: 64
            }))
            .global
        );
        let dp = receptive_field(&frame_cfg(ContextSpec::DualPath {
            chunk: 16,
            heads: 4,
            ffn: 64,
            layers: 1,
        }));
        assert!(dp.global);
        assert_eq!(dp.frames, 1);
    }

    #[test]
    fn conv_probe_stays_inside_analytic_window() {
        let model = SeparationModel::new(frame_cfg(ContextSpec::None), 21).unwrap();
        let n_frames = 140;
        let t_out = 70;
        let support = empirical_rf_probe(&model, t_out, 1e-3, n_frames).unwrap();
        let (lo, hi) = analytic_window(model.config(), t_out, n_frames);
        assert_eq!((lo, hi), (40, 101));
        assert!(!support.is_empty());
        assert!(support.iter().all(|&f| (lo..hi).contains(&f)), "support {support:?}");
        assert!(support.contains(&t_out));
    }

    #[test]
    fn conv_model_is_bit_invariant_outside_window() {
        let model = SeparationModel::new(frame_cfg(ContextSpec::None), 22).unwrap();
        let n = model.config().n_filters;
        let n_frames = 100;
        let t_out = 50;
        let (lo, hi) = analytic_window(model.config(), t_out, n_frames);
        let mut r = rng::named_stream(3, "bit-invariance", 0);
        let base: Vec<f64> = (0..n * n_frames).map(|_| r.random_range(-1.0..1.0)).collect();
        let column = |data: Vec<f64>| -> Vec<f64> {
            no_grad(|| {
                let enc = Tensor::from_vec(data, &[n, n_frames]).unwrap();
                let raw = model.mask_logits(&enc).unwrap();
                raw.data().iter().skip(t_out).step_by(n_frames).copied().collect()
            })
        };
        let reference = column(base.clone());
        for frame in [lo - 1, hi, n_frames - 1, 0] {
            let mut data = base.clone();
            for c in 0..n {
                data[c * n_frames + frame] += 7.5;
            }
            assert_eq!(column(data), reference, "frame {frame} leaked");
        }
    }

    #[test]
    fn gru_probe_covers_every_frame() {
        let model = SeparationModel::new(frame_cfg(ContextSpec::Gru { position: 4 }), 23).unwrap();
        let n_frames = 100;
        let support = empirical_rf_probe(&model, 50, 0.5, n_frames).unwrap();
        assert_eq!(support, (0..n_frames).collect::<Vec<_>>());
    }

    #[test]
    fn zero_delta_has_empty_support() {
        let model = SeparationModel::new(frame_cfg(ContextSpec::None), 24).unwrap();
        assert!(empirical_rf_probe(&model, 10, 0.0, 40).unwrap().is_empty());
    }

    #[test]
    fn probe_rejects_global_norm_and_bad_frame() {
        let global = SeparationModel::new(
            ModelConfig { mask_activation: MaskActivation::Relu, ..ModelConfig::default() },
            25,
        )
        .unwrap();
        assert!(empirical_rf_probe(&global, 0, 0.1, 10).is_err());
        let framed = SeparationModel::new(frame_cfg(ContextSpec::None), 26).unwrap();
        assert!(empirical_rf_probe(&framed, 10, 0.1, 10).is_err());
    }
}
