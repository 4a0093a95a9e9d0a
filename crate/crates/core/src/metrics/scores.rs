use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

/// One detection score; higher means more bonafide.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEntry {
    pub utt_id: String,
    pub score: f64,
}

/// Scores with unique ids and finite values, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreFile {
    entries: Vec<ScoreEntry>,
}

impl ScoreFile {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.utt_id.as_str()) {
                return Err(Error::Validation(format!("duplicate score for {}", e.utt_id)));
            }
            if !e.score.is_finite() {
                return Err(Error::Validation(format!("non-finite score for {}", e.utt_id)));
            }
            if e.utt_id.is_empty() || e.utt_id.contains(['\t', '\n', '\r']) {
                return Err(Error::Validation(format!("invalid utt_id {:?}", e.utt_id)));
            }
        }
        Ok(ScoreFile { entries })
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `utt_id<TAB>score` lines. Scores use the shortest exponent form that
/// parses back to the same `f64`.
pub fn format_scores(scores: &ScoreFile) -> String {
    scores
        .entries
        .iter()
        .map(|e| format!("{}\t{:e}\n", e.utt_id, e.score))
        .collect()
}

/// `path` only labels errors.
pub fn parse_scores(text: &str, path: &Path) -> Result<ScoreFile> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (id, score) = line
            .split_once('\t')
            .ok_or_else(|| perr(no + 1, "expected utt_id<TAB>score".into()))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| perr(no + 1, format!("unparseable score {score:?}")))?;
        if !score.is_finite() {
            return Err(perr(no + 1, format!("non-finite score for {id}")));
        }
        if !seen.insert(id.to_string()) {
            return Err(perr(no + 1, format!("duplicate utt_id {id}")));
        }
        entries.push(ScoreEntry {
            utt_id: id.to_string(),
            score,
        });
    }
    if entries.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "no scored trials".into(),
        });
    }
    ScoreFile::new(entries)
}

pub fn write_scores(scores: &ScoreFile, path: &Path) -> Result<()> {
    std::fs::write(path, format_scores(scores)).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<ScoreFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nan_and_empty_rejected() {
        let p = Path::new("s.txt");
        assert!(matches!(parse_scores("x\tNaN\n", p), Err(Error::Parse { message, .. }) if message.contains("line 1")));
        assert!(parse_scores("", p).is_err());
        assert!(parse_scores("a\t1\nb\tfoo\n", p).is_err());
        assert!(matches!(parse_scores("a\t1\na\t2\n", p), Err(Error::Parse { message, .. }) if message.contains("line 2")));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.txt");
        let s = ScoreFile::new(vec![
            ScoreEntry { utt_id: "b".into(), score: 0.1 },
            ScoreEntry { utt_id: "a".into(), score: -3.5e-12 },
        ])
        .unwrap();
        write_scores(&s, &p).unwrap();
        assert_eq!(read_scores(&p).unwrap(), s);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn bit_exact_round_trip(raw in proptest::collection::vec(("[A-Za-z0-9_.-]{1,16}", any::<u64>()), 1..1000)) {
            let mut seen = HashSet::new();
            let entries: Vec<ScoreEntry> = raw
                .into_iter()
                .filter(|(id, _)| seen.insert(id.clone()))
                .map(|(utt_id, bits)| {
                    let v = f64::from_bits(bits);
                    ScoreEntry { utt_id, score: if v.is_finite() { v } else { 1.0 } }
                })
                .collect();
            let s = ScoreFile::new(entries).unwrap();
            let back = parse_scores(&format_scores(&s), Path::new("p")).unwrap();
            prop_assert_eq!(back.len(), s.len());
            for (a, b) in back.entries().iter().zip(s.entries()) {
                prop_assert_eq!(&a.utt_id, &b.utt_id);
                prop_assert_eq!(a.score.to_bits(), b.score.to_bits());
            }
        }
    }
}
