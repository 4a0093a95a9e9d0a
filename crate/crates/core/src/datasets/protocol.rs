use std::path::Path;

use super::{Label, TrialRecord, UNKNOWN_ATTACK};
use crate::error::{Error, Result};

/// Parses ASVspoof-style protocol lines:
/// `speaker utt_id <unused> attack_or_dash key [extra columns...]`.
///
/// Embedding paths are set to `<embedding_dir>/<utt_id>.emb`. Blank lines are
/// skipped; every malformed line is reported in one error.
pub fn parse_asvspoof_protocol(text: &str, embedding_dir: &Path) -> Result<Vec<TrialRecord>> {
    parse(text, embedding_dir, Path::new("<protocol>"))
}

pub fn read_asvspoof_protocol(path: &Path, embedding_dir: &Path) -> Result<Vec<TrialRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, embedding_dir, path)
}

fn parse(text: &str, embedding_dir: &Path, source: &Path) -> Result<Vec<TrialRecord>> {
    let mut records = Vec::new();
    let mut problems = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 5 {
            problems.push(format!("line {}: expected 5 fields, got {}", no + 1, fields.len()));
            continue;
        }
        let (speaker, utt, attack, key) = (fields[0], fields[1], fields[3], fields[4]);
        let label = match key {
            "bonafide" => Label::Bonafide,
            "spoof" => Label::Spoof,
            other => {
                problems.push(format!("line {}: unknown key {other:?}", no + 1));
                continue;
            }
        };
        let attack_id = match (label, attack) {
            (Label::Bonafide, _) => None,
            (Label::Spoof, "-") => Some(UNKNOWN_ATTACK.to_string()),
            (Label::Spoof, a) => Some(a.to_string()),
        };
        let condition = (fields.len() > 5).then(|| fields[5..].join(" "));
        records.push(TrialRecord {
            utt_id: utt.to_string(),
            label,
            attack_id,
            speaker_id: Some(speaker.to_string()),
            embedding_path: embedding_dir.join(format!("{utt}.emb")),
            condition,
        });
    }
    if !problems.is_empty() {
        return Err(Error::Parse {
            path: source.to_path_buf(),
            message: problems.join("; "),
        });
    }
    Ok(records)
}
