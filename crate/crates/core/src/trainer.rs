//! Training loop, evaluation, and the context-block position sweep.
//!
//! The loop follows a fixed recipe: per epoch, build batches from the
//! sampler, minimize the permutation-invariant negative SI-SDR with Adam
//! under global gradient clipping, then score the validation set at full
//! length. The learning rate halves after `patience_epochs` consecutive
//! epochs without improvement, and the parameters that scored best on
//! validation are restored at the end.
//!
//! Every run is a pure function of (config, seed, corpus): epoch reports
//! and CSV outputs reproduce byte-identically, which is why wall-clock
//! times live in [`EpochReport`] but never in the CSV.

use std::path::Path;
use std::time::Instant;

use crate::adam::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::mixsim::{dynamic_mix, MixSpec, MixtureSet, SourcePool};
use crate::models::SeparationModel;
use crate::objectives::{upit_loss, upit_score};
use crate::ops;
use crate::sampling::{make_batches, quartile_eval, SamplerConfig, TrainExample};
use crate::tensor::Tensor;

/// An epoch must beat the best validation score by this many dB to count
/// as an improvement for the patience rule.
pub const IMPROVEMENT_DB: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub patience_epochs: usize,
    pub lr_halving_factor: f64,
    pub grad_clip: f64,
    /// Cropping/splitting recipe; its `batch_size` and `seed` are
    /// overridden by the fields above so one config cannot disagree with
    /// itself.
    pub sampler: SamplerConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            lr: 2e-4,
            batch_size: 4,
            patience_epochs: 3,
            lr_halving_factor: 0.5,
            grad_clip: 5.0,
            sampler: SamplerConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("train", format!("lr must be positive, got {}", self.lr)));
        }
        if self.patience_epochs == 0 {
            return Err(Error::invalid("train", "patience_epochs must be >= 1"));
        }
        if !(self.lr_halving_factor > 0.0 && self.lr_halving_factor < 1.0) {
            return Err(Error::invalid(
                "train",
                format!("lr_halving_factor must lie in (0,1), got {}", self.lr_halving_factor),
            ));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            return Err(Error::invalid("train", "grad_clip must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("train", "batch_size must be >= 1"));
        }
        self.sampler.validate()
    }

    fn effective_sampler(&self) -> SamplerConfig {
        SamplerConfig {
            batch_size: self.batch_size,
            seed: self.seed,
            ..self.sampler.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean batch loss (negative mean SI-SDR under the best permutation).
    pub train_loss: f64,
    pub val_delta_si_sdr_db: f64,
    /// Sum of emitted window lengths this epoch, in samples.
    pub samples_processed: usize,
    /// Wall-clock time; excluded from the CSV so outputs stay
    /// reproducible.
    pub wall_seconds: f64,
    /// Learning rate the epoch ran at.
    pub lr: f64,
}

/// Where each epoch's training mixtures come from: a fixed set, or fresh
/// re-simulation from a source pool every epoch (dynamic mixing).
#[derive(Clone, Copy)]
pub enum TrainSource<'a> {
    Fixed(&'a MixtureSet),
    Dynamic { pool: &'a SourcePool, spec: &'a MixSpec },
}

fn batch_loss(model: &SeparationModel, batch: &[TrainExample]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for ex in batch {
        let mix = ex.mixture.to_tensor();
        let refs: Vec<Tensor> = ex.refs.iter().map(|r| r.to_tensor()).collect();
        let ests = model.separate_tensors(&mix)?;
        let (loss, _) = upit_loss(&ests, &refs)?;
        total = Some(match total {
            None => loss,
            Some(t) => ops::add(&t, &loss)?,
        });
    }
    let total = total.ok_or_else(|| Error::invalid("train", "empty batch"))?;
    ops::scale(&total, 1.0 / batch.len() as f64)
}

fn snapshot(model: &SeparationModel) -> Vec<Vec<f64>> {
    model.params().iter().map(|(_, t)| t.to_vec()).collect()
}

fn restore(model: &mut SeparationModel, snap: &[Vec<f64>]) -> Result<()> {
    for ((_, slot), data) in model.params_mut().into_iter().zip(snap) {
        *slot = Tensor::param(data.clone(), slot.shape())?;
    }
    Ok(())
}

/// Trains against an arbitrary validation scorer. The scorer is called
/// once per epoch with the current model and epoch index and returns a
/// validation ΔSI-SDR in dB; [`train`] plugs in full-length corpus
/// evaluation, tests can plug in stubs to pin the schedule behavior.
pub fn train_with_validator(
    mut model: SeparationModel,
    source: TrainSource,
    cfg: &TrainConfig,
    validator: &mut dyn FnMut(&SeparationModel, usize) -> Result<f64>,
) -> Result<(SeparationModel, Vec<EpochReport>)> {
    cfg.validate()?;
    let sampler = cfg.effective_sampler();
    let mut adam = Adam::new(AdamConfig::new(cfg.lr).with_clip(cfg.grad_clip));
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::NEG_INFINITY;
    let mut best_params: Option<Vec<Vec<f64>>> = None;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let lr = adam.lr();
        let dynamic;
        let set: &MixtureSet = match source {
            TrainSource::Fixed(s) => s,
            TrainSource::Dynamic { pool, spec } => {
                dynamic = dynamic_mix(pool, spec, cfg.seed, epoch)?;
                &dynamic
            }
        };
        let batches = make_batches(set, &sampler, epoch as u64)?;
        let mut loss_sum = 0.0;
        let mut samples = 0usize;
        for (bi, batch) in batches.iter().enumerate() {
            let diverged = |e: Error| match e {
                Error::NonFinite { op } => Error::Diverged {
                    epoch,
                    batch: bi,
                    mixtures: batch
                        .iter()
                        .map(|ex| ex.mixture_id.as_str())
                        .collect::<Vec<_>>()
                        .join(","),
                    detail: format!("non-finite value produced by {op}"),
                },
                other => other,
            };
            let loss = batch_loss(&model, batch).map_err(diverged)?;
            let value = loss.item().map_err(diverged)?;
            loss.backward().map_err(diverged)?;
            let mut slots = model.params_mut();
            let mut pairs: Vec<(&str, &mut Tensor)> =
                slots.iter_mut().map(|(n, t)| (n.as_str(), &mut **t)).collect();
            adam.step(&mut pairs).map_err(diverged)?;
            loss_sum += value;
            samples += batch.iter().map(|ex| ex.mixture.len()).sum::<usize>();
        }
        let train_loss = loss_sum / batches.len() as f64;
        let val = validator(&model, epoch)?;
        reports.push(EpochReport {
            epoch,
            train_loss,
            val_delta_si_sdr_db: val,
            samples_processed: samples,
            wall_seconds: t0.elapsed().as_secs_f64(),
            lr,
        });
        if val > best_val + IMPROVEMENT_DB {
            best_val = val;
            best_params = Some(snapshot(&model));
            stale = 0;
        } else {
            stale += 1;
            if stale == cfg.patience_epochs {
                adam.set_lr(adam.lr() * cfg.lr_halving_factor);
                stale = 0;
            }
        }
    }
    if let Some(snap) = &best_params {
        restore(&mut model, snap)?;
    }
    Ok((model, reports))
}

/// Trains with validation on `val` at full signal length.
pub fn train(
    model: SeparationModel,
    source: TrainSource,
    val: &MixtureSet,
    cfg: &TrainConfig,
) -> Result<(SeparationModel, Vec<EpochReport>)> {
    train_with_validator(model, source, cfg, &mut |m, _| Ok(evaluate(m, val)?.mean_delta_db))
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub mixture_id: String,
    pub length_s: f64,
    pub delta_si_sdr_db: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub mean_delta_db: f64,
    /// Mean ΔSI-SDR by mixture-length quartile; absent for sets smaller
    /// than four mixtures.
    pub quartile_delta_db: Option<[f64; 4]>,
    pub rows: Vec<EvalRow>,
}

/// Scores every mixture at its native length: separates, picks the best
/// output-to-reference assignment, and reports the SI-SDR improvement
/// over the unprocessed mixture.
pub fn evaluate(model: &SeparationModel, set: &MixtureSet) -> Result<Evaluation> {
    if set.items.is_empty() {
        return Err(Error::invalid("evaluate", "empty mixture set"));
    }
    let mut rows = Vec::with_capacity(set.items.len());
    for item in &set.items {
        let ests = model.separate(&item.mixture)?;
        let score = upit_score(&ests, &item.refs, Some(&item.mixture))?;
        let delta = score
            .delta_si_sdr_db
            .expect("upit_score always yields a delta when given the mixture");
        rows.push(EvalRow {
            mixture_id: item.record.mixture_id.clone(),
            length_s: item.mixture.duration_secs(),
            delta_si_sdr_db: delta,
        });
    }
    let mean_delta_db = rows.iter().map(|r| r.delta_si_sdr_db).sum::<f64>() / rows.len() as f64;
    let quartile_delta_db = if rows.len() >= 4 {
        let scores: Vec<f64> = rows.iter().map(|r| r.delta_si_sdr_db).collect();
        let lengths: Vec<f64> = rows.iter().map(|r| r.length_s).collect();
        Some(quartile_eval(&scores, &lengths)?)
    } else {
        None
    };
    Ok(Evaluation { mean_delta_db, quartile_delta_db, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub position: usize,
    pub delta_si_sdr_db: f64,
    pub params: usize,
    pub rf_seconds: f64,
}

/// Trains one model per requested GRU-block position, everything else
/// held fixed (same seed, same corpus, same schedule), and reports the
/// best validation ΔSI-SDR per position.
pub fn sweep_gc_position(
    base: &crate::models::ModelConfig,
    positions: &[usize],
    source: TrainSource,
    val: &MixtureSet,
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if positions.is_empty() {
        return Err(Error::invalid("sweep", "no positions given"));
    }
    let mut rows = Vec::with_capacity(positions.len());
    for &position in positions {
        let mc = crate::models::ModelConfig {
            context: crate::models::ContextSpec::Gru { position },
            ..base.clone()
        };
        mc.validate()?;
        let model = SeparationModel::new(mc.clone(), cfg.seed)?;
        let params = model.num_params();
        let (_, reports) = train(model, source, val, cfg)?;
        let delta = reports
            .iter()
            .map(|r| r.val_delta_si_sdr_db)
            .fold(f64::NEG_INFINITY, f64::max);
        rows.push(SweepRow {
            position,
            delta_si_sdr_db: delta,
            params,
            rf_seconds: crate::models::receptive_field(&mc).seconds,
        });
    }
    rows.sort_by_key(|r| r.position);
    Ok(rows)
}

/// Epoch reports as CSV. Wall-clock time is deliberately left out so the
/// file is byte-identical across reruns.
pub fn write_reports_csv(path: impl AsRef<Path>, reports: &[EpochReport]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_delta_si_sdr_db,samples_processed,lr\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_delta_si_sdr_db, r.samples_processed, r.lr
        ));
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

pub fn write_eval_csv(path: impl AsRef<Path>, eval: &Evaluation) -> Result<()> {
    let mut out = String::from("mixture_id,length_s,delta_si_sdr_db\n");
    for r in &eval.rows {
        out.push_str(&format!("{},{},{}\n", r.mixture_id, r.length_s, r.delta_si_sdr_db));
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("position,delta_si_sdr_db,params,rf_seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.position, r.delta_si_sdr_db, r.params, r.rf_seconds
        ));
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}
