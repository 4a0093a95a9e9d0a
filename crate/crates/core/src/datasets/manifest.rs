use std::path::{Path, PathBuf};

use super::{DatasetSplit, Label, TrialRecord, UNKNOWN_ATTACK};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "utt_id\tlabel\tattack\tembedding_path";

/// Parses a manifest. Paths are kept exactly as written.
pub fn parse_manifest(text: &str, name: &str) -> Result<DatasetSplit> {
    parse(text, name, Path::new("<manifest>"), None)
}

/// Reads a manifest file; relative embedding paths are resolved against
/// the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<DatasetSplit> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "split".into());
    parse(&text, &name, path, path.parent())
}

fn parse(text: &str, name: &str, source: &Path, base: Option<&Path>) -> Result<DatasetSplit> {
    let perr = |message: String| Error::Parse {
        path: source.to_path_buf(),
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == MANIFEST_HEADER => {}
        Some((no, h)) => return Err(perr(format!("line {}: expected header {MANIFEST_HEADER:?}, got {h:?}", no + 1))),
        None => return Err(perr("empty manifest".into())),
    }
    let mut records = Vec::new();
    for (no, line) in lines {
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if fields.len() != 4 {
            return Err(perr(format!("line {}: expected 4 tab-separated fields, got {}", no + 1, fields.len())));
        }
        let label: Label = fields[1].parse().map_err(|e| perr(format!("line {}: {e}", no + 1)))?;
        let attack_id = match (label, fields[2]) {
            (Label::Bonafide, "-") => None,
            (Label::Bonafide, a) => {
                return Err(perr(format!("line {}: bonafide trial with attack {a:?}", no + 1)));
            }
            (Label::Spoof, "-") => Some(UNKNOWN_ATTACK.to_string()),
            (Label::Spoof, a) => Some(a.to_string()),
        };
        let raw = PathBuf::from(fields[3]);
        let embedding_path = match base {
            Some(b) if raw.is_relative() => b.join(raw),
            _ => raw,
        };
        records.push(TrialRecord {
            utt_id: fields[0].to_string(),
            label,
            attack_id,
            speaker_id: None,
            embedding_path,
            condition: None,
        });
    }
    DatasetSplit::new(name, records)
}

/// Manifest text for `split`, one line per record in split order.
pub fn format_manifest(split: &DatasetSplit) -> String {
    let mut out = format!("{MANIFEST_HEADER}\n");
    for r in split.records() {
        let attack = match r.attack_id.as_deref() {
            None | Some(UNKNOWN_ATTACK) => "-",
            Some(a) => a,
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.utt_id,
            r.label,
            attack,
            r.embedding_path.display()
        ));
    }
    out
}

pub fn write_manifest(split: &DatasetSplit, path: &Path) -> Result<()> {
    std::fs::write(path, format_manifest(split)).map_err(|e| Error::io(path, e))
}
