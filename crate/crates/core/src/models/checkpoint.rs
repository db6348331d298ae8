//! Checkpoint files: a text manifest (versioned magic line, model
//! configuration, optional trainer state, named parameter shapes)
//! followed by every parameter's data as little-endian float64 in
//! manifest order. Text header and binary payload meet at a `[data]`
//! line, so the header stays greppable while the payload round-trips
//! parameters bit for bit.

use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{ModelConfig, SeparationModel};

const MAGIC: &str = "sepkit-checkpoint v1";
const DATA_MARKER: &[u8] = b"\n[data]\n";

/// Optimizer-loop state carried alongside the model so an interrupted
/// run can resume with the same schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerMeta {
    pub epoch: usize,
    pub lr: f64,
    pub best_val_db: f64,
}

pub struct Checkpoint {
    pub model: SeparationModel,
    pub trainer: Option<TrainerMeta>,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &SeparationModel,
    trainer: Option<&TrainerMeta>,
) -> Result<()> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push_str("\n[model]\n");
    for line in model.config().to_config_lines() {
        header.push_str(&line);
        header.push('\n');
    }
    if let Some(t) = trainer {
        header.push_str("[trainer]\n");
        header.push_str(&format!("epoch = {}\n", t.epoch));
        header.push_str(&format!("lr = {}\n", t.lr));
        header.push_str(&format!("best_val_db = {}\n", t.best_val_db));
    }
    header.push_str("[params]");
    let params = model.params();
    for (name, t) in &params {
        header.push('\n');
        header.push_str(name);
        for d in t.shape() {
            header.push_str(&format!(" {d}"));
        }
    }
    let total: usize = params.iter().map(|(_, t)| t.numel()).sum();
    let mut bytes = Vec::with_capacity(header.len() + DATA_MARKER.len() + total * 8);
    bytes.extend_from_slice(header.as_bytes());
    bytes.extend_from_slice(DATA_MARKER);
    for (_, t) in &params {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path.as_ref(), bytes)?;
    Ok(())
}

fn find_marker(bytes: &[u8]) -> Option<usize> {
    bytes
        .windows(DATA_MARKER.len())
        .position(|w| w == DATA_MARKER)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let err = |detail: String| Error::Checkpoint(format!("{}: {detail}", path.display()));
    let pos = find_marker(&bytes).ok_or_else(|| err("missing [data] section".into()))?;
    let header = std::str::from_utf8(&bytes[..pos])
        .map_err(|_| err("manifest is not UTF-8".into()))?;
    let payload = &bytes[pos + DATA_MARKER.len()..];

    let mut lines = header.lines();
    match lines.next() {
        Some(MAGIC) => {}
        Some(other) => return Err(err(format!("unsupported format `{other}`"))),
        None => return Err(err("empty manifest".into())),
    }

    #[derive(PartialEq)]
    enum Section {
        Preamble,
        Model,
        Trainer,
        Params,
    }
    let mut section = Section::Preamble;
    let mut model_lines = String::new();
    let mut trainer_lines = String::new();
    let mut manifest: Vec<(String, Vec<usize>)> = Vec::new();
    for line in lines {
        match line {
            "[model]" => section = Section::Model,
            "[trainer]" => section = Section::Trainer,
            "[params]" => section = Section::Params,
            _ => match section {
                Section::Preamble => return Err(err(format!("unexpected line `{line}`"))),
                Section::Model => {
                    model_lines.push_str(line);
                    model_lines.push('\n');
                }
                Section::Trainer => {
                    trainer_lines.push_str(line);
                    trainer_lines.push('\n');
                }
                Section::Params => {
                    let mut parts = line.split_whitespace();
                    let name = parts
                        .next()
                        .ok_or_else(|| err("empty parameter line".into()))?
                        .to_string();
                    let dims: Vec<usize> = parts
                        .map(|p| {
                            p.parse::<usize>()
                                .map_err(|_| err(format!("bad dimension `{p}` for `{name}`")))
                        })
                        .collect::<Result<_>>()?;
                    if dims.is_empty() {
                        return Err(err(format!("parameter `{name}` has no shape")));
                    }
                    manifest.push((name, dims));
                }
            },
        }
    }
    if model_lines.is_empty() {
        return Err(err("missing [model] section".into()));
    }

    let model_cfg = Config::parse(&model_lines).map_err(|e| err(e.to_string()))?;
    let cfg = ModelConfig::from_config(&model_cfg)?;
    model_cfg.reject_unknown().map_err(|e| err(e.to_string()))?;

    let trainer = if trainer_lines.is_empty() {
        None
    } else {
        let tc = Config::parse(&trainer_lines).map_err(|e| err(e.to_string()))?;
        let meta = TrainerMeta {
            epoch: tc.require("epoch")?,
            lr: tc.require("lr")?,
            best_val_db: tc.require("best_val_db")?,
        };
        tc.reject_unknown().map_err(|e| err(e.to_string()))?;
        Some(meta)
    };

    let total: usize = manifest.iter().map(|(_, d)| d.iter().product::<usize>()).sum();
    if payload.len() != total * 8 {
        return Err(err(format!(
            "payload holds {} bytes, manifest wants {}",
            payload.len(),
            total * 8
        )));
    }

    let mut model = SeparationModel::new(cfg, 0)?;
    let mut slots = model.params_mut();
    if slots.len() != manifest.len() {
        return Err(err(format!(
            "manifest lists {} parameters, model has {}",
            manifest.len(),
            slots.len()
        )));
    }
    let mut offset = 0usize;
    for ((name, dims), (want_name, slot)) in manifest.iter().zip(slots.iter_mut()) {
        if name != want_name {
            return Err(err(format!("parameter `{name}` where `{want_name}` expected")));
        }
        if dims.as_slice() != slot.shape() {
            return Err(err(format!(
                "parameter `{name}` has shape {dims:?}, model wants {:?}",
                slot.shape()
            )));
        }
        let numel: usize = dims.iter().product();
        let mut values = Vec::with_capacity(numel);
        for i in 0..numel {
            let a = offset + i * 8;
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&payload[a..a + 8]);
            values.push(f64::from_le_bytes(buf));
        }
        offset += numel * 8;
        **slot = Tensor::param(values, dims).map_err(|e| err(format!("`{name}`: {e}")))?;
    }
    Ok(Checkpoint { model, trainer })
}
