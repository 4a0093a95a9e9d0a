//! `EMB1` embedding files.
//!
//! Layout, little-endian: magic `EMB1`, u32 `d`, u32 `t`, u32 `window_ms`,
//! u16 frontend id length `L`, `L` bytes of UTF-8 frontend id, then `d·t`
//! f32 values with frame 0's `d` values first.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8; 4] = b"EMB1";
const FIXED_HEADER: usize = 18;

/// Stacked frame embeddings, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    d: usize,
    t: usize,
    data: Vec<f32>,
    pub window_ms: u32,
    pub frontend_id: String,
}

impl EmbeddingMatrix {
    /// `data` holds `t` frames of `d` values each.
    pub fn new(d: usize, t: usize, data: Vec<f32>, window_ms: u32, frontend_id: impl Into<String>) -> Result<Self> {
        if d == 0 || t == 0 {
            return Err(Error::Config(format!("empty embedding matrix {d} x {t}")));
        }
        if data.len() != d * t {
            return Err(Error::Config(format!(
                "{d} x {t} matrix needs {} values, got {}",
                d * t,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("embedding matrix contains non-finite values".into()));
        }
        let frontend_id = frontend_id.into();
        if frontend_id.len() > u16::MAX as usize {
            return Err(Error::Config("frontend id longer than 65535 bytes".into()));
        }
        Ok(EmbeddingMatrix {
            d,
            t,
            data,
            window_ms,
            frontend_id,
        })
    }

    pub fn from_frames(frames: &[Vec<f32>], window_ms: u32, frontend_id: impl Into<String>) -> Result<Self> {
        let d = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != d) {
            return Err(Error::Frontend("frames have inconsistent dimensions".into()));
        }
        Self::new(d, frames.len(), frames.concat(), window_ms, frontend_id)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, tau: usize) -> &[f32] {
        &self.data[tau * self.d..(tau + 1) * self.d]
    }

    /// Embedding dimension along rows, time along columns: `[d, t]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let mut out = vec![0.0; self.data.len()];
        for tau in 0..self.t {
            for i in 0..self.d {
                out[i * self.t + tau] = self.data[tau * self.d + i];
            }
        }
        Tensor::new([self.d, self.t], out).expect("consistent dims")
    }
}

pub fn encode_embedding(m: &EmbeddingMatrix) -> Vec<u8> {
    let id = m.frontend_id.as_bytes();
    let mut out = Vec::with_capacity(FIXED_HEADER + id.len() + 4 * m.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.d as u32).to_le_bytes());
    out.extend_from_slice(&(m.t as u32).to_le_bytes());
    out.extend_from_slice(&m.window_ms.to_le_bytes());
    out.extend_from_slice(&(id.len() as u16).to_le_bytes());
    out.extend_from_slice(id);
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses `EMB1` bytes; `path` only labels errors.
pub fn decode_embedding(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix> {
    let err = |offset: usize, msg: String| Error::format(path, offset as u64, msg);
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(err(0, "missing EMB1 magic".into()));
    }
    if bytes.len() < FIXED_HEADER {
        return Err(err(bytes.len(), "truncated header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let (d, t, window_ms) = (u32_at(4) as usize, u32_at(8) as usize, u32_at(12));
    let id_len = u16::from_le_bytes([bytes[16], bytes[17]]) as usize;
    if d == 0 || t == 0 {
        return Err(err(4, format!("empty matrix {d} x {t}")));
    }
    let id_end = FIXED_HEADER + id_len;
    if bytes.len() < id_end {
        return Err(err(bytes.len(), "truncated frontend id".into()));
    }
    let frontend_id = std::str::from_utf8(&bytes[FIXED_HEADER..id_end])
        .map_err(|e| err(FIXED_HEADER + e.valid_up_to(), "frontend id is not UTF-8".into()))?
        .to_string();
    let payload = &bytes[id_end..];
    let expected = d
        .checked_mul(t)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| err(4, "dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(err(
            id_end,
            format!(
                "header declares {d} x {t} = {} floats but payload holds {} bytes ({} floats)",
                d * t,
                payload.len(),
                payload.len() / 4
            ),
        ));
    }
    let mut data = Vec::with_capacity(d * t);
    for (i, c) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().unwrap());
        if !v.is_finite() {
            return Err(err(id_end + 4 * i, "non-finite value".into()));
        }
        data.push(v);
    }
    EmbeddingMatrix::new(d, t, data, window_ms, frontend_id)
}

pub fn write_embedding_file(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    std::fs::write(path, encode_embedding(m)).map_err(|e| Error::io(path, e))
}

pub fn read_embedding_file(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embedding(&bytes, path)
}
