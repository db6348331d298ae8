//! Desk-scale toolkit for time-domain speech-separation experiments:
//! mixture simulation, masking separation models with exchangeable
//! temporal-context blocks, scale-invariant objectives, length-limited
//! sampling, and a deterministic trainer. Everything runs on plain f64
//! CPU math with a small built-in autodiff engine.

pub mod adam;
pub mod audio;
pub mod cli;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod mixsim;
pub mod models;
pub mod objectives;
pub mod ops;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod trainer;
pub mod wav;

pub use audio::AudioClip;
pub use error::{Error, Result};
pub use tensor::{no_grad, Tensor};
