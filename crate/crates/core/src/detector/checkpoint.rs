//! `CKPT` checkpoint files.
//!
//! Layout, little-endian: magic `CKPT`, u32 format version, u32 length of
//! the UTF-8 config block, the config block (`key=value` lines: `detector.*`,
//! optional `adam.*` and `meta.*`), u32 entry count, then per entry a u16 name
//! length, the name, a u32 element count and that many f32 values.
//!
//! Parameters come first in enumeration order. Batch-norm running
//! statistics use names prefixed `@bn/`; Adam moments use `@adam.m/` and
//! `@adam.v/` followed by the parameter name.

use std::path::Path;

use super::config::DetectorConfig;
use super::model::DetectorModel;
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::nn::AdamState;

const MAGIC: &[u8; 4] = b"CKPT";
pub const FORMAT_VERSION: u32 = 1;

const BN_PREFIX: &str = "@bn/";
const ADAM_M_PREFIX: &str = "@adam.m/";
const ADAM_V_PREFIX: &str = "@adam.v/";

/// Model weights with optional optimizer state and free-form metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: DetectorModel<f32>,
    pub adam: Option<AdamState<f32>>,
    pub meta: KvConfig,
}

impl Checkpoint {
    pub fn new(model: DetectorModel<f32>) -> Self {
        Checkpoint {
            model,
            adam: None,
            meta: KvConfig::new(),
        }
    }
}

fn push_entry(out: &mut Vec<u8>, name: &str, values: &[f32]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let model = &ckpt.model;
    let mut header = KvConfig::new();
    for key in DetectorConfig::KEYS {
        let kv = model.config().to_kv();
        header.set(&format!("detector.{key}"), kv.get(key).unwrap_or_default());
    }
    if let Some(adam) = &ckpt.adam {
        header.set("adam.step", adam.step);
        header.set("adam.beta1", adam.beta1);
        header.set("adam.beta2", adam.beta2);
        header.set("adam.eps", adam.eps);
    }
    for key in ckpt.meta.keys() {
        header.set(&format!("meta.{key}"), ckpt.meta.get(key).unwrap_or_default());
    }
    let text = header.to_text();

    let mut entries = Vec::new();
    let mut count = 0u32;
    for p in model.params().iter() {
        push_entry(&mut entries, &p.name, p.value.data());
        count += 1;
    }
    for (name, values) in model.running_stats() {
        push_entry(&mut entries, &format!("{BN_PREFIX}{name}"), values);
        count += 1;
    }
    if let Some(adam) = &ckpt.adam {
        for (p, m) in model.params().iter().zip(&adam.m) {
            push_entry(&mut entries, &format!("{ADAM_M_PREFIX}{}", p.name), m);
            count += 1;
        }
        for (p, v) in model.params().iter().zip(&adam.v) {
            push_entry(&mut entries, &format!("{ADAM_V_PREFIX}{}", p.name), v);
            count += 1;
        }
    }

    let mut out = Vec::with_capacity(16 + text.len() + entries.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend(entries);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, self.pos as u64, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn err(&self, at: usize, msg: impl Into<String>) -> Error {
        Error::format(self.path, at as u64, msg)
    }
}

/// Parses checkpoint bytes; `path` only labels errors.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut cur = Cursor { bytes, pos: 0, path };
    if cur.take(4, "magic")? != MAGIC {
        return Err(cur.err(0, "missing CKPT magic"));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(cur.err(4, format!("unsupported checkpoint version {version}")));
    }
    let text_len = cur.u32("config length")? as usize;
    let text_at = cur.pos;
    let text = std::str::from_utf8(cur.take(text_len, "config block")?)
        .map_err(|_| cur.err(text_at, "config block is not UTF-8"))?;
    let header = KvConfig::parse(text).map_err(|e| cur.err(text_at, e.to_string()))?;
    let config = DetectorConfig::from_kv(&header.section("detector"))
        .map_err(|e| cur.err(text_at, e.to_string()))?;
    let mut model = DetectorModel::<f32>::new(config)?;

    let adam_hp = header.section("adam");
    let mut adam = match adam_hp.get_parsed::<u64>("step").map_err(|e| cur.err(text_at, e.to_string()))? {
        Some(step) => {
            let get = |k: &str| -> Result<f64> {
                adam_hp
                    .get_parsed(k)
                    .map_err(|e| cur.err(text_at, e.to_string()))?
                    .ok_or_else(|| cur.err(text_at, format!("missing adam.{k}")))
            };
            let mut st = AdamState::with_hyperparams(model.params(), get("beta1")?, get("beta2")?, get("eps")?);
            st.step = step;
            Some(st)
        }
        None => None,
    };

    let count = cur.u32("entry count")? as usize;
    let mut seen = vec![false; model.params().len()];
    for _ in 0..count {
        let entry_at = cur.pos;
        let name_len = cur.u16("entry name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "entry name")?)
            .map_err(|_| cur.err(entry_at, "entry name is not UTF-8"))?
            .to_string();
        let n = cur.u32("element count")? as usize;
        let values_at = cur.pos;
        let raw = cur.take(n.checked_mul(4).ok_or_else(|| cur.err(values_at, "element count overflow"))?, "values")?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let slot: Option<&mut [f32]> = if let Some(bn) = name.strip_prefix(BN_PREFIX) {
            model.running_stats_mut(bn).map(|v| v.as_mut_slice())
        } else if let Some(p) = name.strip_prefix(ADAM_M_PREFIX) {
            let id = model.params().id_of(p);
            match (&mut adam, id) {
                (Some(a), Some(id)) => Some(a.m[id.index()].as_mut_slice()),
                _ => None,
            }
        } else if let Some(p) = name.strip_prefix(ADAM_V_PREFIX) {
            let id = model.params().id_of(p);
            match (&mut adam, id) {
                (Some(a), Some(id)) => Some(a.v[id.index()].as_mut_slice()),
                _ => None,
            }
        } else {
            match model.params().id_of(&name) {
                Some(id) => {
                    seen[id.index()] = true;
                    Some(model.params_mut().get_mut(id).value.data_mut())
                }
                None => None,
            }
        };
        let slot = slot.ok_or_else(|| cur.err(entry_at, format!("unexpected entry {name:?}")))?;
        if slot.len() != values.len() {
            return Err(cur.err(
                entry_at,
                format!("entry {name:?} has {} values, expected {}", values.len(), slot.len()),
            ));
        }
        slot.copy_from_slice(&values);
    }
    if cur.pos != bytes.len() {
        return Err(cur.err(cur.pos, "trailing bytes after last entry"));
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let name = &model.params().iter().nth(i).unwrap().name;
        return Err(cur.err(cur.pos, format!("missing parameter {name:?}")));
    }
    Ok(Checkpoint {
        model,
        adam,
        meta: header.section("meta"),
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
