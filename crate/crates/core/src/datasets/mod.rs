//! Trial lists, dataset manifests and the synthetic stand-in corpus.

mod batch;
mod manifest;
mod protocol;
mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

pub use batch::{batch_iterator, epoch_order, load_matrix, load_split, stack_matrices, Batch, BatchIter};
pub use manifest::{format_manifest, parse_manifest, read_manifest, write_manifest, MANIFEST_HEADER};
pub use protocol::{parse_asvspoof_protocol, read_asvspoof_protocol};
pub use synthetic::{generate_synthetic_dataset, synthetic_direction, SyntheticSpec, SYNTHETIC_GAUSS_ID};

use crate::error::{Error, Result};

/// Attack id recorded for spoofed trials whose generator is not documented.
pub const UNKNOWN_ATTACK: &str = "unknown";

/// Ground-truth class. Discriminants are the class indices used by the
/// detector's logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Spoof = 0,
    Bonafide = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Spoof => "spoof",
            Label::Bonafide => "bonafide",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// One utterance of a dataset split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRecord {
    pub utt_id: String,
    pub label: Label,
    /// Generator of a spoofed trial; `None` for bonafide.
    pub attack_id: Option<String>,
    pub speaker_id: Option<String>,
    pub embedding_path: PathBuf,
    /// Extra protocol columns kept verbatim.
    pub condition: Option<String>,
}

/// Records sorted by `utt_id`, ids unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: String,
    records: Vec<TrialRecord>,
}

impl DatasetSplit {
    pub fn new(name: impl Into<String>, mut records: Vec<TrialRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        if let Some(w) = records.windows(2).find(|w| w[0].utt_id == w[1].utt_id) {
            return Err(Error::Validation(format!("duplicate utt_id {}", w[0].utt_id)));
        }
        for r in &records {
            if r.label == Label::Bonafide && r.attack_id.is_some() {
                return Err(Error::Validation(format!(
                    "{} is bonafide but carries attack {:?}",
                    r.utt_id, r.attack_id
                )));
            }
        }
        Ok(DatasetSplit {
            name: name.into(),
            records,
        })
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, utt_id: &str) -> Option<&TrialRecord> {
        self.records
            .binary_search_by(|r| r.utt_id.as_str().cmp(utt_id))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Distinct attack ids of spoofed trials, sorted.
    pub fn attack_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .records
            .iter()
            .filter_map(|r| r.attack_id.clone())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        ids.sort();
        ids
    }

    /// True when at least one spoofed trial names its generator.
    pub fn has_labeled_attacks(&self) -> bool {
        self.records
            .iter()
            .any(|r| r.attack_id.as_deref().is_some_and(|a| a != UNKNOWN_ATTACK))
    }

    /// All bonafide trials plus the spoofed trials of `attack`.
    pub fn attack_subset(&self, attack: &str) -> Vec<&TrialRecord> {
        self.records
            .iter()
            .filter(|r| r.label == Label::Bonafide || r.attack_id.as_deref() == Some(attack))
            .collect()
    }
}
