use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::KvConfig;
use crate::error::{Error, Result};

use super::Common;

/// Resolves each run setting from its flag, then the config file, then a
/// default, and records the outcome for the snapshot.
#[derive(Debug)]
pub struct Settings {
    given: KvConfig,
    used: BTreeSet<String>,
    resolved: KvConfig,
}

impl Settings {
    pub fn new(common: &Common) -> Result<Self> {
        let mut given = match &common.config {
            Some(p) => KvConfig::load(p)?,
            None => KvConfig::new(),
        };
        for o in &common.overrides {
            given.apply_override(o)?;
        }
        Ok(Settings {
            given,
            used: BTreeSet::new(),
            resolved: KvConfig::new(),
        })
    }

    fn lookup<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.given.get_parsed(key),
        }
    }

    pub fn or<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.lookup(key, flag)?.unwrap_or(default);
        self.resolved.set(key, &v);
        Ok(v)
    }

    pub fn require<T>(&mut self, key: &str, flag: Option<T>, flag_name: &str) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self
            .lookup(key, flag)?
            .ok_or_else(|| Error::Usage(format!("missing {flag_name} (or {key} in --config)")))?;
        self.resolved.set(key, &v);
        Ok(v)
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.lookup(key, flag)?;
        if let Some(v) = &v {
            self.resolved.set(key, v);
        }
        Ok(v)
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>, flag_name: &str) -> Result<PathBuf> {
        let s = flag.map(|p| p.to_string_lossy().into_owned());
        self.require::<String>(key, s, flag_name).map(PathBuf::from)
    }

    pub fn optional_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let s = flag.map(|p| p.to_string_lossy().into_owned());
        Ok(self.optional::<String>(key, s)?.map(PathBuf::from))
    }

    /// Comma-separated list setting; the flag wins when non-empty.
    pub fn list<T>(&mut self, key: &str, flag: Vec<T>, default: Vec<T>) -> Result<Vec<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        let v = if !flag.is_empty() {
            flag
        } else if let Some(text) = self.given.get(key) {
            text.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|e| Error::Usage(format!("{key}: cannot parse {s:?}: {e}")))
                })
                .collect::<Result<_>>()?
        } else {
            default
        };
        if v.is_empty() {
            return Err(Error::Usage(format!("{key} must not be empty")));
        }
        self.resolved
            .set(key, v.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
        Ok(v)
    }

    /// Keys under `prefix.` with the prefix stripped; the section is
    /// validated by its consumer.
    pub fn section(&mut self, prefix: &str) -> KvConfig {
        let s = self.given.section(prefix);
        for k in s.keys() {
            self.used.insert(format!("{prefix}.{k}"));
        }
        s
    }

    /// Adds a fully resolved section to the snapshot.
    pub fn record_section(&mut self, prefix: &str, kv: &KvConfig) {
        for k in kv.keys() {
            self.resolved.set(&format!("{prefix}.{k}"), kv.get(k).unwrap_or_default());
        }
    }

    /// Fails on config keys nothing asked for.
    pub fn reject_unused(&self) -> Result<()> {
        let unused: Vec<&str> = self.given.keys().filter(|k| !self.used.contains(*k)).collect();
        if unused.is_empty() {
            Ok(())
        } else {
            Err(Error::Usage(format!("unknown config keys: {}", unused.join(", "))))
        }
    }

    pub fn snapshot(&self) -> &KvConfig {
        &self.resolved
    }

    pub fn write_snapshot(&self, dir: &Path, command: &str) -> Result<()> {
        let path = dir.join(format!("{command}.resolved.cfg"));
        let text = format!("# nonsem {command}\n{}", self.resolved.to_text());
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// `--seed` values, else `run.seeds`, else `NONSEM_SEED`, else 0.
pub fn resolve_seeds(s: &mut Settings, flag: Vec<u64>) -> Result<Vec<u64>> {
    let fallback = match std::env::var("NONSEM_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("NONSEM_SEED must be an integer, got {v:?}")))?,
        Err(_) => 0,
    };
    let seeds = s.list("run.seeds", flag, vec![fallback])?;
    let unique: BTreeSet<_> = seeds.iter().collect();
    if unique.len() != seeds.len() {
        return Err(Error::Usage(format!("duplicate seeds in {seeds:?}")));
    }
    Ok(seeds)
}
