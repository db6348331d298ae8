//! Mono audio container used throughout the toolkit.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A non-empty, finite, single-channel signal with a sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<AudioClip> {
        if samples.is_empty() {
            return Err(Error::invalid("audio_clip", "empty signal"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("audio_clip", "sample rate is zero"));
        }
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "audio_clip" });
        }
        Ok(AudioClip { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // by construction
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean square of the samples (signal power).
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |a, &v| a.max(v.abs()))
    }

    /// Window of `len` samples starting at `start`.
    pub fn slice(&self, start: usize, len: usize) -> Result<AudioClip> {
        if len == 0 || start + len > self.samples.len() {
            return Err(Error::invalid(
                "audio_slice",
                format!("window {start}..{} outside clip of {}", start + len, self.samples.len()),
            ));
        }
        AudioClip::new(self.samples[start..start + len].to_vec(), self.sample_rate)
    }

    pub fn scaled(&self, g: f64) -> Result<AudioClip> {
        AudioClip::new(self.samples.iter().map(|v| v * g).collect(), self.sample_rate)
    }

    /// Constant 1-D tensor `[L]` view of the samples.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.samples.clone(), &[self.samples.len()])
            .expect("clip invariants guarantee a valid tensor")
    }

    pub fn from_tensor(t: &Tensor, sample_rate: u32) -> Result<AudioClip> {
        AudioClip::new(t.to_vec(), sample_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_enforced() {
        assert!(AudioClip::new(vec![], 8000).is_err());
        assert!(AudioClip::new(vec![0.0], 0).is_err());
        assert!(AudioClip::new(vec![f64::NAN], 8000).is_err());
    }

    #[test]
    fn power_and_duration() {
        let c = AudioClip::new(vec![1.0, -1.0, 1.0, -1.0], 2).unwrap();
        assert_eq!(c.power(), 1.0);
        assert_eq!(c.rms(), 1.0);
        assert_eq!(c.duration_secs(), 2.0);
    }

    #[test]
    fn slice_bounds() {
        let c = AudioClip::new(vec![0.0, 1.0, 2.0, 3.0], 4).unwrap();
        assert_eq!(c.slice(1, 2).unwrap().samples(), &[1.0, 2.0]);
        assert!(c.slice(3, 2).is_err());
        assert!(c.slice(0, 0).is_err());
    }
}
