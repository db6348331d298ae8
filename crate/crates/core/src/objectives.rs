//! Separation objectives and metrics: scale-invariant SDR, the
//! permutation-invariant training loss built on it, improvement over the
//! input mixture, and the RMS-ratio SDR helpers.
//!
//! SI-SDR is computed in a P/Q form: after zero-meaning both signals,
//! `P = <e, r>^2` and `Q = |r|^2 |e|^2 - P`, so the value is
//! `10*log10(P/Q)`. The form matters: both the metric and the loss divide
//! exactly once, which is what makes the metric invariant to rescaling the
//! estimate (the scale factors of P and Q cancel in the quotient).

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

/// Clamp applied after the log; degenerate inputs hit the clamp exactly.
pub const SI_SDR_CLAMP_DB: f64 = 120.0;

/// Score bundle for one separated mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationScore {
    /// SI-SDR per reference speaker, in the reference order.
    pub per_speaker_db: Vec<f64>,
    /// `permutation[c]` is the estimate index paired with reference `c`.
    pub permutation: Vec<usize>,
    pub mean_si_sdr_db: f64,
    /// Improvement over the mixture, when a mixture was provided.
    pub delta_si_sdr_db: Option<f64>,
}

fn zero_mean(x: &[f64]) -> Vec<f64> {
    let mu = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mu).collect()
}

fn pq(est: &[f64], reference: &[f64]) -> (f64, f64) {
    let p_lin: f64 = est.iter().zip(reference).map(|(a, b)| a * b).sum();
    let rr: f64 = reference.iter().map(|v| v * v).sum();
    let ee: f64 = est.iter().map(|v| v * v).sum();
    let p = p_lin * p_lin;
    (p, rr * ee - p)
}

/// Scale-invariant SDR in dB. Both signals are zero-meaned first; the
/// result is clamped to +-120 dB. An estimate orthogonal to the reference
/// hits -120 exactly; an estimate proportional to it hits +120 exactly.
pub fn si_sdr_db(est: &AudioClip, reference: &AudioClip) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::invalid(
            "si_sdr_db",
            format!("length mismatch {} vs {}", est.len(), reference.len()),
        ));
    }
    let e = zero_mean(est.samples());
    let r = zero_mean(reference.samples());
    if r.iter().all(|v| *v == 0.0) {
        return Err(Error::invalid("si_sdr_db", "zero reference signal"));
    }
    let (p, q) = pq(&e, &r);
    if p == 0.0 {
        return Ok(-SI_SDR_CLAMP_DB);
    }
    if q <= 0.0 {
        return Ok(SI_SDR_CLAMP_DB);
    }
    Ok((10.0 * (p / q).log10()).clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB))
}

/// SI-SDR as a graph scalar for training. Epsilon guards on both sides of
/// the quotient reproduce the +-120 clamp without a kink: the numerator is
/// at least `P * 1e-12` away from zero and likewise for the denominator,
/// so the log stays within +-120 dB and keeps a usable gradient.
pub fn si_sdr_loss(est: &Tensor, reference: &Tensor) -> Result<Tensor> {
    if est.shape() != reference.shape() || est.shape().len() != 1 {
        return Err(Error::shape(
            "si_sdr_loss",
            format!("want equal vectors, got {:?} vs {:?}", est.shape(), reference.shape()),
        ));
    }
    let n = est.numel();
    let me = ops::mean(est)?;
    let mr = ops::mean(reference)?;
    let e = ops::sub(est, &ops::broadcast_scalar(&me, n)?)?;
    let r = ops::sub(reference, &ops::broadcast_scalar(&mr, n)?)?;
    let p_lin = ops::dot(&e, &r)?;
    let p = ops::mul(&p_lin, &p_lin)?;
    let rr = ops::dot(&r, &r)?;
    let ee = ops::dot(&e, &e)?;
    let q = ops::sub(&ops::mul(&rr, &ee)?, &p)?;
    let tiny = Tensor::scalar(f64::MIN_POSITIVE)?;
    let num = ops::maximum(&ops::maximum(&p, &ops::scale(&q, 1e-12)?)?, &tiny)?;
    let den = ops::maximum(&ops::maximum(&q, &ops::scale(&p, 1e-12)?)?, &tiny)?;
    ops::scale(&ops::log10(&ops::div(&num, &den)?)?, 10.0)
}

fn permutations(c: usize) -> Vec<Vec<usize>> {
    if c == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for sub in permutations(c - 1) {
        for pos in 0..c {
            let mut p = sub.clone();
            p.insert(pos, c - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

const MAX_SPEAKERS_FACTORIAL: usize = 6;

fn check_speaker_counts(op: &'static str, n_est: usize, n_ref: usize) -> Result<()> {
    if n_est == 0 || n_est != n_ref {
        return Err(Error::invalid(
            op,
            format!("speaker count mismatch: {n_est} estimates vs {n_ref} references"),
        ));
    }
    if n_est > MAX_SPEAKERS_FACTORIAL {
        return Err(Error::invalid(
            op,
            format!("{n_est} speakers exceeds the exhaustive-permutation limit"),
        ));
    }
    Ok(())
}

/// Permutation-invariant training loss:
/// `-(1/C) * max over permutations of sum_c si_sdr(est[perm[c]], ref[c])`.
/// Exhaustive search over all `C!` assignments. Returns the loss as a graph
/// scalar plus the winning permutation; the gradient flows through the
/// selected assignment only.
pub fn upit_loss(est: &[Tensor], refs: &[Tensor]) -> Result<(Tensor, Vec<usize>)> {
    check_speaker_counts("upit_loss", est.len(), refs.len())?;
    let c = est.len();
    let mut scores = Vec::with_capacity(c * c);
    for e in est {
        for r in refs {
            scores.push(si_sdr_loss(e, r)?);
        }
    }
    let mut vals = Vec::with_capacity(c * c);
    for s in &scores {
        vals.push(s.item()?);
    }
    let mut best_perm = None;
    let mut best_val = f64::NEG_INFINITY;
    for perm in permutations(c) {
        let total: f64 = (0..c).map(|r| vals[perm[r] * c + r]).sum();
        if total > best_val {
            best_val = total;
            best_perm = Some(perm);
        }
    }
    let perm = best_perm.expect("at least one permutation");
    let mut total = scores[perm[0] * c].clone();
    for (r, &e) in perm.iter().enumerate().skip(1) {
        total = ops::add(&total, &scores[e * c + r])?;
    }
    let loss = ops::neg(&ops::scale(&total, 1.0 / c as f64)?)?;
    Ok((loss, perm))
}

/// Metric-side permutation search over clips. Returns the score bundle
/// with per-speaker values under the best assignment; `mix`, when given,
/// adds the improvement over the mixture.
pub fn upit_score(
    est: &[AudioClip],
    refs: &[AudioClip],
    mix: Option<&AudioClip>,
) -> Result<SeparationScore> {
    check_speaker_counts("upit_score", est.len(), refs.len())?;
    let c = est.len();
    let mut table = vec![0.0; c * c];
    for (i, e) in est.iter().enumerate() {
        for (j, r) in refs.iter().enumerate() {
            table[i * c + j] = si_sdr_db(e, r)?;
        }
    }
    let mut best_perm = None;
    let mut best_total = f64::NEG_INFINITY;
    for perm in permutations(c) {
        let total: f64 = (0..c).map(|r| table[perm[r] * c + r]).sum();
        if total > best_total {
            best_total = total;
            best_perm = Some(perm);
        }
    }
    let permutation = best_perm.expect("at least one permutation");
    let per_speaker_db: Vec<f64> = (0..c).map(|r| table[permutation[r] * c + r]).collect();
    let mean_si_sdr_db = per_speaker_db.iter().sum::<f64>() / c as f64;
    let delta_si_sdr_db = match mix {
        None => None,
        Some(m) => {
            let base: f64 = refs
                .iter()
                .map(|r| si_sdr_db(m, r))
                .collect::<Result<Vec<_>>>()?
                .iter()
                .sum::<f64>()
                / c as f64;
            Some(mean_si_sdr_db - base)
        }
    };
    Ok(SeparationScore { per_speaker_db, permutation, mean_si_sdr_db, delta_si_sdr_db })
}

/// Improvement over the input mixture:
/// best-permutation mean SI-SDR minus the mean SI-SDR of the mixture
/// itself against each reference.
pub fn delta_si_sdr(est: &[AudioClip], refs: &[AudioClip], mix: &AudioClip) -> Result<f64> {
    let score = upit_score(est, refs, Some(mix))?;
    Ok(score.delta_si_sdr_db.expect("delta requested"))
}

/// RMS-ratio SDR, linear form: `1 / (ratio - 1)` where `ratio` is
/// `RMS(far) / RMS(direct)`. The pole at ratio 1 is an error.
pub fn rms_sdr(ratio: f64) -> Result<f64> {
    if !ratio.is_finite() || ratio <= 0.0 {
        return Err(Error::invalid("rms_sdr", format!("ratio must be positive, got {ratio}")));
    }
    if ratio == 1.0 {
        return Err(Error::invalid("rms_sdr", "ratio 1 is the singular point"));
    }
    Ok(1.0 / (ratio - 1.0))
}

/// RMS-ratio SDR in dB: `20*log10(1/(ratio-1))`. Requires ratio > 1 (the
/// far signal must carry more energy than the direct one for the dB form
/// to exist).
pub fn rms_sdr_db(ratio: f64) -> Result<f64> {
    let lin = rms_sdr(ratio)?;
    if lin <= 0.0 {
        return Err(Error::invalid(
            "rms_sdr_db",
            format!("ratio {ratio} < 1 gives a negative linear value; no dB form"),
        ));
    }
    Ok(20.0 * lin.log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(v: Vec<f64>) -> AudioClip {
        AudioClip::new(v, 8000).unwrap()
    }

    fn tensor(v: Vec<f64>) -> Tensor {
        let n = v.len();
        Tensor::from_vec(v, &[n]).unwrap()
    }

    #[test]
    fn perfect_estimate_clamps_high() {
        let r = clip(vec![0.1, -0.4, 0.3, 0.2, -0.2]);
        assert_eq!(si_sdr_db(&r, &r).unwrap(), SI_SDR_CLAMP_DB);
        let scaled = r.scaled(3.0).unwrap();
        assert_eq!(si_sdr_db(&scaled, &r).unwrap(), SI_SDR_CLAMP_DB);
    }

    #[test]
    fn orthogonal_estimate_clamps_low() {
        // Zero-mean and orthogonal by construction.
        let e = clip(vec![1.0, -1.0, 1.0, -1.0]);
        let r = clip(vec![1.0, 1.0, -1.0, -1.0]);
        assert_eq!(si_sdr_db(&e, &r).unwrap(), -SI_SDR_CLAMP_DB);
    }

    #[test]
    fn zero_reference_is_an_error() {
        let e = clip(vec![0.1, 0.2, -0.3, 0.0]);
        let r = clip(vec![0.0; 4]);
        assert!(si_sdr_db(&e, &r).is_err());
        // A constant reference zero-means to nothing as well.
        let r2 = clip(vec![0.5; 4]);
        assert!(si_sdr_db(&e, &r2).is_err());
    }

    #[test]
    fn metric_matches_direct_projection_formula() {
        let e = clip(vec![0.9, -0.2, 0.4, -0.6, 0.05, 0.3]);
        let r = clip(vec![1.0, -0.3, 0.5, -0.5, 0.0, 0.25]);
        let got = si_sdr_db(&e, &r).unwrap();
        // Direct evaluation: alpha = <e,r>/|r|^2; 10log10(|ar|^2/|ar-e|^2).
        let ez = zero_mean(e.samples());
        let rz = zero_mean(r.samples());
        let er: f64 = ez.iter().zip(&rz).map(|(a, b)| a * b).sum();
        let rr: f64 = rz.iter().map(|v| v * v).sum();
        let alpha = er / rr;
        let num: f64 = rz.iter().map(|v| (alpha * v) * (alpha * v)).sum();
        let den: f64 = rz.iter().zip(&ez).map(|(r, e)| (alpha * r - e) * (alpha * r - e)).sum();
        let want = 10.0 * (num / den).log10();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn scale_invariance_is_exact_for_power_of_two_gains() {
        let e = clip(vec![0.13, -0.71, 0.22, 0.4, -0.04, -0.33, 0.29]);
        let r = clip(vec![0.1, -0.6, 0.3, 0.35, 0.0, -0.4, 0.25]);
        let base = si_sdr_db(&e, &r).unwrap();
        for a in [0.5, 2.0, 0.25, 1024.0] {
            let got = si_sdr_db(&e.scaled(a).unwrap(), &r).unwrap();
            assert_eq!(got, base, "gain {a}");
        }
    }

    #[test]
    fn loss_value_agrees_with_metric_away_from_clamps() {
        let e = vec![0.9, -0.2, 0.4, -0.6, 0.05, 0.3];
        let r = vec![1.0, -0.3, 0.5, -0.5, 0.0, 0.25];
        let metric = si_sdr_db(&clip(e.clone()), &clip(r.clone())).unwrap();
        let graph = si_sdr_loss(&tensor(e), &tensor(r)).unwrap().item().unwrap();
        assert!((metric - graph).abs() < 1e-9);
    }

    #[test]
    fn loss_clamps_at_plus_and_minus_120() {
        // The epsilon guard pins the quotient to 1e+-12, so the log lands
        // on the clamp up to one ulp of libm slop.
        let r = vec![0.2, -0.1, 0.4, -0.5];
        let same = si_sdr_loss(&tensor(r.clone()), &tensor(r.clone())).unwrap().item().unwrap();
        assert!((same - SI_SDR_CLAMP_DB).abs() < 1e-9, "{same}");
        let orth = si_sdr_loss(
            &tensor(vec![1.0, -1.0, 1.0, -1.0]),
            &tensor(vec![1.0, 1.0, -1.0, -1.0]),
        )
        .unwrap()
        .item().unwrap();
        assert!((orth + SI_SDR_CLAMP_DB).abs() < 1e-9, "{orth}");
    }

    #[test]
    fn loss_gradient_pushes_estimate_toward_reference() {
        let e = Tensor::param(vec![0.5, -0.1, 0.2, 0.3], &[4]).unwrap();
        let r = tensor(vec![1.0, -0.5, 0.4, 0.6]);
        let v = si_sdr_loss(&e, &r).unwrap();
        let loss = ops::neg(&v).unwrap();
        loss.backward().unwrap();
        let g = e.grad().unwrap();
        // Stepping against the gradient must raise SI-SDR.
        let step: Vec<f64> = e.data().iter().zip(&g).map(|(v, gi)| v - 1e-4 * gi).collect();
        let before = v.item().unwrap();
        let after = si_sdr_loss(&tensor(step), &r).unwrap().item().unwrap();
        assert!(after > before, "{after} !> {before}");
    }

    #[test]
    fn upit_picks_the_swapped_assignment() {
        let a = vec![0.4, -0.2, 0.6, -0.7, 0.1];
        let b = vec![-0.3, 0.5, 0.2, 0.1, -0.6];
        let est = [tensor(b.clone()), tensor(a.clone())];
        let refs = [tensor(a.clone()), tensor(b.clone())];
        let (loss, perm) = upit_loss(&est, &refs).unwrap();
        assert_eq!(perm, vec![1, 0]);
        assert!((loss.item().unwrap() + SI_SDR_CLAMP_DB).abs() < 1e-9);
    }

    #[test]
    fn upit_agrees_with_brute_force_for_three_speakers() {
        let sigs: Vec<Vec<f64>> = (0..3)
            .map(|k| (0..32).map(|i| ((i * (k + 2)) as f64 * 0.31).sin()).collect())
            .collect();
        let ests: Vec<Tensor> = (0..3)
            .map(|k| {
                tensor(
                    (0..32)
                        .map(|i| sigs[k][i] * 0.8 + ((i * (k + 5)) as f64 * 0.17).cos() * 0.3)
                        .collect(),
                )
            })
            .collect();
        let refs: Vec<Tensor> = sigs.iter().map(|s| tensor(s.clone())).collect();
        let (loss, perm) = upit_loss(&ests, &refs).unwrap();
        // Brute force over all 6 assignments with the scalar metric.
        let mut best = f64::NEG_INFINITY;
        let mut best_perm = vec![];
        for p in permutations(3) {
            let tot: f64 = (0..3)
                .map(|r| si_sdr_loss(&ests[p[r]], &refs[r]).unwrap().item().unwrap())
                .sum();
            if tot > best {
                best = tot;
                best_perm = p;
            }
        }
        assert_eq!(perm, best_perm);
        assert!((loss.item().unwrap() - (-best / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn upit_symmetric_under_common_relabeling() {
        let a = vec![0.4, -0.2, 0.6, -0.7, 0.1, 0.3];
        let b = vec![-0.3, 0.5, 0.2, 0.1, -0.6, 0.2];
        let ea = tensor(a.iter().map(|v| v * 0.9 + 0.01).collect());
        let eb = tensor(b.iter().map(|v| v * 1.1 - 0.02).collect());
        let (l1, _) = upit_loss(&[ea.clone(), eb.clone()], &[tensor(a.clone()), tensor(b.clone())]).unwrap();
        let (l2, _) = upit_loss(&[eb, ea], &[tensor(b), tensor(a)]).unwrap();
        assert!((l1.item().unwrap() - l2.item().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn delta_is_zero_for_mixture_passthrough() {
        let r1 = clip((0..64).map(|i| (i as f64 * 0.3).sin() * 0.3).collect());
        let r2 = clip((0..64).map(|i| (i as f64 * 0.11).cos() * 0.2).collect());
        let mix = clip(
            r1.samples()
                .iter()
                .zip(r2.samples())
                .map(|(a, b)| a + b)
                .collect(),
        );
        let d = delta_si_sdr(&[mix.clone(), mix.clone()], &[r1, r2], &mix).unwrap();
        assert!(d.abs() < 1e-9, "delta {d}");
    }

    #[test]
    fn score_mean_is_arithmetic_mean_and_perm_is_bijection() {
        let r1 = clip((0..50).map(|i| (i as f64 * 0.4).sin() * 0.3).collect());
        let r2 = clip((0..50).map(|i| (i as f64 * 0.09).cos() * 0.25).collect());
        let e1 = clip(r1.samples().iter().map(|v| v * 0.7 + 0.01).collect());
        let e2 = clip(r2.samples().iter().map(|v| v * 1.2 - 0.03).collect());
        let s = upit_score(&[e2, e1], &[r1, r2], None).unwrap();
        let mut seen = s.permutation.clone();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1]);
        let mean = s.per_speaker_db.iter().sum::<f64>() / 2.0;
        assert_eq!(mean, s.mean_si_sdr_db);
    }

    #[test]
    fn rms_sdr_pinned_values() {
        assert!((rms_sdr(2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(rms_sdr_db(2.0).unwrap().abs() < 1e-12);
        assert!((rms_sdr(1.1).unwrap() - 10.0).abs() < 1e-12);
        assert!((rms_sdr_db(1.1).unwrap() - 20.0).abs() < 1e-9);
        assert!(rms_sdr(1.0).is_err());
        assert!(rms_sdr_db(0.5).is_err());
    }
}
