//! Flat `key=value` configuration text with dotted keys.
//!
//! ```text
//! # comment
//! detector.lstm_hidden=256
//! train.epochs=50
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered key/value map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = KvConfig::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            cfg.apply_override(line)
                .map_err(|e| Error::Usage(format!("line {}: {e}", no + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Applies a single `key=value` assignment.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("expected key=value, got {assignment:?}")))?;
        let k = k.trim();
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(Error::Usage(format!("invalid key {k:?}")));
        }
        self.entries.insert(k.to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Typed lookup; `Ok(None)` when the key is absent.
    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| Error::Usage(format!("{key}: cannot parse {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Entries whose key starts with `prefix.`, with the prefix removed.
    pub fn section(&self, prefix: &str) -> KvConfig {
        let p = format!("{prefix}.");
        KvConfig {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|k| (k.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn merge(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Fails on any key outside `known`.
    pub fn reject_unknown(&self, known: &[&str], context: &str) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(Error::Usage(format!("unknown {context} key {k:?}"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut cfg = KvConfig::parse("# x\n\ndetector.lstm_hidden = 16\ntrain.lr0=1e-4\n").unwrap();
        assert_eq!(cfg.get_parsed::<usize>("detector.lstm_hidden").unwrap(), Some(16));
        cfg.apply_override("detector.lstm_hidden=32").unwrap();
        assert_eq!(cfg.section("detector").get("lstm_hidden"), Some("32"));
        assert_eq!(cfg.get_parsed::<f64>("train.lr0").unwrap(), Some(1e-4));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KvConfig::parse("novalue\n").is_err());
        assert!(KvConfig::parse("a b=1\n").is_err());
        let cfg = KvConfig::parse("x=abc").unwrap();
        assert!(cfg.get_parsed::<u32>("x").is_err());
    }

    #[test]
    fn text_round_trip() {
        let cfg = KvConfig::parse("b=2\na.c=x y\n").unwrap();
        assert_eq!(KvConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
