//! Finite-difference validation of every differentiable op.
//!
//! Each case draws random small inputs, runs the op, scalarizes the
//! output with a fixed random weighting, and compares the autodiff
//! gradient of every input element against a central difference. Inputs
//! are drawn away from kinks (relu at 0, ties in maximum) so both sides
//! of the difference sit on the same smooth branch.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::models::{chunk, overlap_add, ModelConfig, SeparationModel};
use crate::objectives::{si_sdr_loss, upit_loss};
use crate::ops;
use crate::ops::{Direction, Pad};
use crate::rng;
use crate::tensor::Tensor;

/// Central-difference step used by default.
pub const FD_STEP: f64 = 1e-5;
/// A case passes when every comparison has relative error below this.
pub const GRAD_TOL: f64 = 1e-4;

/// Fixed so every run of a case sees the same draws.
const SEED: u64 = 0x6ad5_eed;

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub name: String,
    pub trials: usize,
    /// Total gradient elements compared across all trials.
    pub comparisons: usize,
    pub max_rel_err: f64,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRAD_TOL
    }
}

type Eval = Box<dyn Fn(&[Tensor]) -> Result<Tensor>>;

struct Trial {
    /// Differentiable inputs as (data, shape).
    inputs: Vec<(Vec<f64>, Vec<usize>)>,
    eval: Eval,
}

fn smooth(r: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..=1.0)).collect()
}

/// Uniform magnitude in [margin, 1] with random sign; keeps draws off
/// the kink at zero by more than any finite-difference step.
fn off_zero(r: &mut ChaCha12Rng, n: usize, margin: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = r.random_range(margin..=1.0);
            if r.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn positive(r: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(0.5..=1.5)).collect()
}

/// Adds a distinct offset per leading-dim slice so per-frame and per-row
/// variances stay bounded away from zero.
fn spread(mut data: Vec<f64>, rows: usize, row_major: bool) -> Vec<f64> {
    let n = data.len();
    let cols = n / rows;
    for (i, v) in data.iter_mut().enumerate() {
        let row = if row_major { i / cols } else { i % cols };
        *v += 0.8 * row as f64;
    }
    data
}

fn input(data: Vec<f64>, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    (data, shape.to_vec())
}

fn trial_for(name: &str, r: &mut ChaCha12Rng) -> Result<Trial> {
    let t = match name {
        "add" => Trial {
            inputs: vec![input(smooth(r, 12), &[3, 4]), input(smooth(r, 12), &[3, 4])],
            eval: Box::new(|i| ops::add(&i[0], &i[1])),
        },
        "sub" => Trial {
            inputs: vec![input(smooth(r, 12), &[3, 4]), input(smooth(r, 12), &[3, 4])],
            eval: Box::new(|i| ops::sub(&i[0], &i[1])),
        },
        "mul" => Trial {
            inputs: vec![input(smooth(r, 12), &[3, 4]), input(smooth(r, 12), &[3, 4])],
            eval: Box::new(|i| ops::mul(&i[0], &i[1])),
        },
        "div" => Trial {
            inputs: vec![input(smooth(r, 12), &[3, 4]), input(off_zero(r, 12, 0.4), &[3, 4])],
            eval: Box::new(|i| ops::div(&i[0], &i[1])),
        },
        "add_scalar" => {
            let c = r.random_range(-1.0..=1.0);
            Trial {
                inputs: vec![input(smooth(r, 12), &[3, 4])],
                eval: Box::new(move |i| ops::add_scalar(&i[0], c)),
            }
        }
        "scale" => {
            let c = r.random_range(-2.0..=2.0);
            Trial {
                inputs: vec![input(smooth(r, 12), &[3, 4])],
                eval: Box::new(move |i| ops::scale(&i[0], c)),
            }
        }
        "neg" => Trial {
            inputs: vec![input(smooth(r, 12), &[3, 4])],
            eval: Box::new(|i| ops::neg(&i[0])),
        },
        "relu" => Trial {
            inputs: vec![input(off_zero(r, 12, 0.05), &[3, 4])],
            eval: Box::new(|i| ops::relu(&i[0])),
        },
        "prelu" => Trial {
            inputs: vec![
                input(off_zero(r, 12, 0.05), &[3, 4]),
                input(positive(r, 3), &[3]),
            ],
            eval: Box::new(|i| ops::prelu(&i[0], &i[1])),
        },
        "sigmoid" => Trial {
            inputs: vec![input(smooth(r, 12), &[3, 4])],
            eval: Box::new(|i| ops::sigmoid(&i[0])),
        },
        "tanh" => Trial {
            inputs: vec![input(smooth(r, 12), &[3, 4])],
            eval: Box::new(|i| ops::tanh(&i[0])),
        },
        "ln" => Trial {
            inputs: vec![input(positive(r, 12), &[3, 4])],
            eval: Box::new(|i| ops::ln(&i[0])),
        },
        "log10" => Trial {
            inputs: vec![input(positive(r, 12), &[3, 4])],
            eval: Box::new(|i| ops::log10(&i[0])),
        },
        "maximum" => {
            // Keep each pair separated so the winner cannot flip inside
            // the finite-difference step.
            let a = smooth(r, 12);
            let gap = off_zero(r, 12, 0.1);
            let b: Vec<f64> = a.iter().zip(&gap).map(|(x, g)| x + g).collect();
            Trial {
                inputs: vec![input(a, &[3, 4]), input(b, &[3, 4])],
                eval: Box::new(|i| ops::maximum(&i[0], &i[1])),
            }
        }
        "conv1d" => {
            let dilation = r.random_range(1..=2usize);
            let pad = if r.random_bool(0.5) { Pad::Same } else { Pad::None };
            Trial {
                inputs: vec![input(smooth(r, 24), &[3, 8]), input(smooth(r, 18), &[2, 3, 3])],
                eval: Box::new(move |i| ops::conv1d(&i[0], &i[1], dilation, pad)),
            }
        }
        "depthwise_conv1d" => {
            let dilation = r.random_range(1..=2usize);
            Trial {
                inputs: vec![input(smooth(r, 24), &[3, 8]), input(smooth(r, 9), &[3, 3])],
                eval: Box::new(move |i| ops::depthwise_conv1d(&i[0], &i[1], dilation, Pad::Same)),
            }
        }
        "strided_conv1d" => Trial {
            inputs: vec![input(smooth(r, 20), &[2, 10]), input(smooth(r, 24), &[3, 2, 4])],
            eval: Box::new(|i| ops::strided_conv1d(&i[0], &i[1], 2)),
        },
        "transposed_conv1d" => Trial {
            inputs: vec![input(smooth(r, 15), &[3, 5]), input(smooth(r, 24), &[3, 2, 4])],
            eval: Box::new(|i| ops::transposed_conv1d(&i[0], &i[1], 2)),
        },
        "matmul" => Trial {
            inputs: vec![input(smooth(r, 12), &[3, 4]), input(smooth(r, 8), &[4, 2])],
            eval: Box::new(|i| ops::matmul(&i[0], &i[1])),
        },
        "transpose2" => Trial {
            inputs: vec![input(smooth(r, 12), &[3, 4])],
            eval: Box::new(|i| ops::transpose2(&i[0])),
        },
        "transpose3" => {
            const PERMS: [[usize; 3]; 6] =
                [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let perm = PERMS[r.random_range(0..PERMS.len())];
            Trial {
                inputs: vec![input(smooth(r, 24), &[2, 3, 4])],
                eval: Box::new(move |i| ops::transpose3(&i[0], perm)),
            }
        }
        "reshape" => Trial {
            inputs: vec![input(smooth(r, 12), &[3, 4])],
            eval: Box::new(|i| ops::reshape(&i[0], &[2, 6])),
        },
        "slice_rows" => {
            let lo = r.random_range(0..=2usize);
            Trial {
                inputs: vec![input(smooth(r, 15), &[5, 3])],
                eval: Box::new(move |i| ops::slice_rows(&i[0], lo, lo + 3)),
            }
        }
        "slice_cols" => {
            let lo = r.random_range(0..=3usize);
            Trial {
                inputs: vec![input(smooth(r, 18), &[3, 6])],
                eval: Box::new(move |i| ops::slice_cols(&i[0], lo, lo + 2)),
            }
        }
        "concat_rows" => Trial {
            inputs: vec![input(smooth(r, 8), &[2, 4]), input(smooth(r, 12), &[3, 4])],
            eval: Box::new(|i| ops::concat_rows(i)),
        },
        "concat_cols" => Trial {
            inputs: vec![input(smooth(r, 6), &[3, 2]), input(smooth(r, 9), &[3, 3])],
            eval: Box::new(|i| ops::concat_cols(i)),
        },
        "fit_length" => {
            let len = if r.random_bool(0.5) { 4 } else { 11 };
            Trial {
                inputs: vec![input(smooth(r, 14), &[2, 7])],
                eval: Box::new(move |i| ops::fit_length(&i[0], len)),
            }
        }
        "add_col_vector" => Trial {
            inputs: vec![input(smooth(r, 12), &[3, 4]), input(smooth(r, 3), &[3])],
            eval: Box::new(|i| ops::add_col_vector(&i[0], &i[1])),
        },
        "add_row_vector" => Trial {
            inputs: vec![input(smooth(r, 12), &[3, 4]), input(smooth(r, 4), &[4])],
            eval: Box::new(|i| ops::add_row_vector(&i[0], &i[1])),
        },
        "broadcast_scalar" => Trial {
            inputs: vec![input(smooth(r, 1), &[1])],
            eval: Box::new(|i| ops::broadcast_scalar(&i[0], 5)),
        },
        "slice3_first" => {
            let idx = r.random_range(0..3usize);
            Trial {
                inputs: vec![input(smooth(r, 24), &[3, 2, 4])],
                eval: Box::new(move |i| ops::slice3_first(&i[0], idx)),
            }
        }
        "stack3_first" => Trial {
            inputs: vec![
                input(smooth(r, 8), &[2, 4]),
                input(smooth(r, 8), &[2, 4]),
                input(smooth(r, 8), &[2, 4]),
            ],
            eval: Box::new(|i| ops::stack3_first(i)),
        },
        "softmax_rows" => Trial {
            inputs: vec![input(smooth(r, 15), &[3, 5])],
            eval: Box::new(|i| ops::softmax_rows(&i[0])),
        },
        "dot" => Trial {
            inputs: vec![input(smooth(r, 7), &[7]), input(smooth(r, 7), &[7])],
            eval: Box::new(|i| ops::dot(&i[0], &i[1])),
        },
        "sum" => Trial {
            inputs: vec![input(smooth(r, 12), &[3, 4])],
            eval: Box::new(|i| ops::sum(&i[0])),
        },
        "mean" => Trial {
            inputs: vec![input(smooth(r, 12), &[3, 4])],
            eval: Box::new(|i| ops::mean(&i[0])),
        },
        "global_layer_norm" => Trial {
            inputs: vec![
                input(spread(smooth(r, 18), 3, true), &[3, 6]),
                input(positive(r, 3), &[3]),
                input(smooth(r, 3), &[3]),
            ],
            eval: Box::new(|i| ops::global_layer_norm(&i[0], &i[1], &i[2], 1e-8)),
        },
        "frame_layer_norm" => Trial {
            inputs: vec![
                input(spread(smooth(r, 18), 3, true), &[3, 6]),
                input(positive(r, 3), &[3]),
                input(smooth(r, 3), &[3]),
            ],
            eval: Box::new(|i| ops::frame_layer_norm(&i[0], &i[1], &i[2], 1e-8)),
        },
        "row_layer_norm" => Trial {
            inputs: vec![
                input(spread(smooth(r, 12), 4, false), &[3, 4]),
                input(positive(r, 4), &[4]),
                input(smooth(r, 4), &[4]),
            ],
            eval: Box::new(|i| ops::row_layer_norm(&i[0], &i[1], &i[2], 1e-8)),
        },
        "gru_forward" | "gru_backward" => {
            let dir = if name == "gru_forward" { Direction::Forward } else { Direction::Backward };
            Trial {
                inputs: vec![
                    input(smooth(r, 12), &[4, 3]),
                    input(smooth(r, 18), &[6, 3]),
                    input(smooth(r, 12), &[6, 2]),
                    input(smooth(r, 6), &[6]),
                    input(smooth(r, 6), &[6]),
                ],
                eval: Box::new(move |i| ops::gru(&i[0], &i[1], &i[2], &i[3], &i[4], dir)),
            }
        }
        "multihead_attention" => Trial {
            inputs: vec![
                input(smooth(r, 16), &[4, 4]),
                input(smooth(r, 16), &[4, 4]),
                input(smooth(r, 4), &[4]),
                input(smooth(r, 16), &[4, 4]),
                input(smooth(r, 4), &[4]),
                input(smooth(r, 16), &[4, 4]),
                input(smooth(r, 4), &[4]),
                input(smooth(r, 16), &[4, 4]),
                input(smooth(r, 4), &[4]),
            ],
            eval: Box::new(|i| {
                ops::multihead_attention(
                    &i[0], &i[1], &i[2], &i[3], &i[4], &i[5], &i[6], &i[7], &i[8], 2,
                )
            }),
        },
        "chunk" => Trial {
            inputs: vec![input(smooth(r, 18), &[2, 9])],
            eval: Box::new(|i| chunk(&i[0], 4)),
        },
        "overlap_add" => {
            let len = r.random_range(5..=8usize);
            Trial {
                inputs: vec![input(smooth(r, 24), &[2, 4, 3])],
                eval: Box::new(move |i| overlap_add(&i[0], len)),
            }
        }
        "si_sdr_loss" => Trial {
            inputs: vec![input(smooth(r, 16), &[16]), input(off_zero(r, 16, 0.1), &[16])],
            eval: Box::new(|i| si_sdr_loss(&i[0], &i[1])),
        },
        "upit_loss" => Trial {
            inputs: vec![
                input(smooth(r, 12), &[12]),
                input(smooth(r, 12), &[12]),
                input(off_zero(r, 12, 0.1), &[12]),
                input(off_zero(r, 12, 0.1), &[12]),
            ],
            eval: Box::new(|i| {
                let (loss, _) =
                    upit_loss(&[i[0].clone(), i[1].clone()], &[i[2].clone(), i[3].clone()])?;
                Ok(loss)
            }),
        },
        other => return Err(Error::invalid("gradcheck", format!("unknown case '{other}'"))),
    };
    Ok(t)
}

/// Every checkable case, in a stable order.
pub fn all_cases() -> Vec<&'static str> {
    vec![
        "add",
        "sub",
        "mul",
        "div",
        "add_scalar",
        "scale",
        "neg",
        "relu",
        "prelu",
        "sigmoid",
        "tanh",
        "ln",
        "log10",
        "maximum",
        "conv1d",
        "depthwise_conv1d",
        "strided_conv1d",
        "transposed_conv1d",
        "matmul",
        "transpose2",
        "transpose3",
        "reshape",
        "slice_rows",
        "slice_cols",
        "concat_rows",
        "concat_cols",
        "fit_length",
        "add_col_vector",
        "add_row_vector",
        "broadcast_scalar",
        "slice3_first",
        "stack3_first",
        "softmax_rows",
        "dot",
        "sum",
        "mean",
        "global_layer_norm",
        "frame_layer_norm",
        "row_layer_norm",
        "gru_forward",
        "gru_backward",
        "multihead_attention",
        "chunk",
        "overlap_add",
        "si_sdr_loss",
        "upit_loss",
    ]
}

/// Runs one case: `trials` independent draws, each comparing the
/// autodiff gradient of every input element against a central difference
/// with step `h`.
pub fn check_case(name: &str, trials: usize, h: f64) -> Result<CaseReport> {
    if trials == 0 {
        return Err(Error::invalid("gradcheck", "trials must be >= 1"));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid("gradcheck", format!("step must be positive, got {h}")));
    }
    let mut max_rel_err: f64 = 0.0;
    let mut comparisons = 0usize;
    for trial_idx in 0..trials {
        let mut r = rng::named_stream(SEED, name, trial_idx as u64);
        let trial = trial_for(name, &mut r)?;

        let params: Vec<Tensor> = trial
            .inputs
            .iter()
            .map(|(data, shape)| Tensor::param(data.clone(), shape))
            .collect::<Result<_>>()?;
        let out = (trial.eval)(&params)?;
        let weights: Vec<f64> = smooth(&mut r, out.numel());
        let w = Tensor::from_vec(weights.clone(), out.shape())?;
        let loss = ops::dot(&out, &w)?;
        loss.backward()?;
        let grads: Vec<Vec<f64>> = params.iter().map(|p| p.grad_or_zeros()).collect();

        let scalar_at = |pi: usize, ei: usize, v: f64| -> Result<f64> {
            let tensors: Vec<Tensor> = trial
                .inputs
                .iter()
                .enumerate()
                .map(|(pj, (data, shape))| {
                    let mut d = data.clone();
                    if pj == pi {
                        d[ei] = v;
                    }
                    Tensor::from_vec(d, shape)
                })
                .collect::<Result<_>>()?;
            let out = crate::tensor::no_grad(|| (trial.eval)(&tensors))?;
            Ok(out.data().iter().zip(&weights).map(|(a, b)| a * b).sum())
        };

        for (pi, (data, _)) in trial.inputs.iter().enumerate() {
            for (ei, &x0) in data.iter().enumerate() {
                let numeric = (scalar_at(pi, ei, x0 + h)? - scalar_at(pi, ei, x0 - h)?) / (2.0 * h);
                let analytic = grads[pi][ei];
                let denom = analytic.abs().max(numeric.abs()).max(0.01);
                max_rel_err = max_rel_err.max((analytic - numeric).abs() / denom);
                comparisons += 1;
            }
        }
    }
    Ok(CaseReport { name: name.to_string(), trials, comparisons, max_rel_err })
}

/// Checks every case; any failure is visible in the returned reports
/// rather than an error, so callers can print a full table.
pub fn check_all(trials: usize, h: f64) -> Result<Vec<CaseReport>> {
    all_cases().into_iter().map(|name| check_case(name, trials, h)).collect()
}

/// Replaces one element of one parameter tensor, returning the value it
/// held before.
fn poke(model: &mut SeparationModel, ti: usize, ei: usize, v: f64) -> Result<f64> {
    let mut params = model.params_mut();
    let slot = &mut params[ti].1;
    let mut data = slot.data().to_vec();
    let old = data[ei];
    data[ei] = v;
    let shape = slot.shape().to_vec();
    **slot = Tensor::param(data, &shape)?;
    Ok(old)
}

/// Finite-difference check of the whole toy model end to end: fresh
/// random parameters each trial, a random mixture and reference pair,
/// loss = uPIT over the separated estimates. Checking all ~46k
/// parameters needs ~93k forward passes per trial, so each trial samples
/// `samples_per_trial` coordinates uniformly across the parameter
/// tensors instead and perturbs those.
pub fn check_model(trials: usize, h: f64, samples_per_trial: usize) -> Result<CaseReport> {
    if trials == 0 || samples_per_trial == 0 {
        return Err(Error::invalid("gradcheck", "trials and samples must be >= 1"));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid("gradcheck", format!("step must be positive, got {h}")));
    }
    let len = 128usize;
    let mut max_rel_err: f64 = 0.0;
    let mut comparisons = 0usize;
    for trial_idx in 0..trials {
        let mut r = rng::named_stream(SEED, "toy_model", trial_idx as u64);
        let mut model = SeparationModel::new(ModelConfig::default(), r.random())?;
        let x = Tensor::from_vec(smooth(&mut r, len), &[len])?;
        let refs = [
            Tensor::from_vec(smooth(&mut r, len), &[len])?,
            Tensor::from_vec(smooth(&mut r, len), &[len])?,
        ];

        let ests = model.separate_tensors(&x)?;
        let (loss, _) = upit_loss(&ests, &refs)?;
        loss.backward()?;
        let grads: Vec<Vec<f64>> =
            model.params().iter().map(|(_, p)| p.grad_or_zeros()).collect();
        let sizes: Vec<usize> = model.params().iter().map(|(_, p)| p.numel()).collect();
        let total: usize = sizes.iter().sum();

        let loss_value = |m: &SeparationModel| -> Result<f64> {
            crate::tensor::no_grad(|| {
                let ests = m.separate_tensors(&x)?;
                let (l, _) = upit_loss(&ests, &refs)?;
                Ok(l.data()[0])
            })
        };

        for _ in 0..samples_per_trial {
            let mut ei = r.random_range(0..total);
            let mut ti = 0usize;
            while ei >= sizes[ti] {
                ei -= sizes[ti];
                ti += 1;
            }
            let x0 = model.params()[ti].1.data()[ei];
            poke(&mut model, ti, ei, x0 + h)?;
            let fp = loss_value(&model)?;
            poke(&mut model, ti, ei, x0 - h)?;
            let fm = loss_value(&model)?;
            poke(&mut model, ti, ei, x0)?;
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = grads[ti][ei];
            let denom = analytic.abs().max(numeric.abs()).max(0.01);
            max_rel_err = max_rel_err.max((analytic - numeric).abs() / denom);
            comparisons += 1;
        }
    }
    Ok(CaseReport { name: "toy_model".to_string(), trials, comparisons, max_rel_err })
}
