//! Minimal RIFF/WAVE reader and writer.
//!
//! Scope is deliberately narrow: mono 16-bit PCM and mono 32-bit float
//! are read; 32-bit float is written. Everything else (multichannel,
//! extensible format, compressed codecs) is rejected with a clear error
//! rather than guessed at.

use std::path::Path;

use crate::audio::AudioClip;
use crate::error::{Error, Result};

fn wav_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Wav {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

/// Rounds to the nearest value representable as f32. Corpus synthesis
/// snaps sources to this grid before mixing so that mixtures recomputed
/// from the on-disk sources match bit for bit.
pub fn f32_grid(v: f64) -> f64 {
    v as f32 as f64
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(wav_err(path, "not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut off = 12usize;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = u32_at(&bytes, off + 4) as usize;
        let body_start = off + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            return Err(wav_err(path, format!("chunk {:?} overruns file", String::from_utf8_lossy(id))));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(wav_err(path, "fmt chunk too short"));
                }
                fmt = Some((u16_at(body, 0), u16_at(body, 2), u32_at(body, 4), u16_at(body, 14)));
            }
            b"data" => data = Some(body),
            _ => {} // fact, LIST, cue, ... are fine to skip
        }
        off = body_end + (size & 1); // chunks are word-aligned
    }

    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| wav_err(path, "missing fmt chunk"))?;
    let data = data.ok_or_else(|| wav_err(path, "missing data chunk"))?;
    if channels != 1 {
        return Err(wav_err(path, format!("expected mono, got {channels} channels")));
    }

    let samples: Vec<f64> = match (format, bits) {
        (1, 16) => {
            if data.len() % 2 != 0 {
                return Err(wav_err(path, "odd-sized 16-bit data chunk"));
            }
            data.chunks_exact(2)
                .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
                .collect()
        }
        (3, 32) => {
            if data.len() % 4 != 0 {
                return Err(wav_err(path, "data chunk not a multiple of 4 bytes"));
            }
            data.chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect()
        }
        _ => {
            return Err(wav_err(
                path,
                format!("unsupported encoding: format tag {format}, {bits}-bit"),
            ))
        }
    };

    AudioClip::new(samples, rate).map_err(|e| wav_err(path, e.to_string()))
}

/// Writes a mono 32-bit float WAV. Samples are cast to f32; values on the
/// f32 grid (see [`f32_grid`]) survive a write/read round trip exactly.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let n = clip.len();
    let data_len = 4 * n;
    // RIFF size counts everything after the first 8 bytes:
    // "WAVE" + fmt(8+16) + fact(8+4) + data header(8) + payload.
    let riff_len = 4 + 24 + 12 + 8 + data_len;

    let mut out = Vec::with_capacity(8 + riff_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(riff_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");

    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&3u16.to_le_bytes()); // IEEE float
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * 4).to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&32u16.to_le_bytes());

    // Non-PCM encodings carry a fact chunk with the frame count.
    out.extend_from_slice(b"fact");
    out.extend_from_slice(&4u32.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());

    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in clip.samples() {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }

    std::fs::write(path, out)?;
    Ok(())
}
