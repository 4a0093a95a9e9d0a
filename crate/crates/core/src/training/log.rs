use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_eer: f64,
    /// Wall time. Kept out of the main log file so that reruns compare
    /// byte for byte.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

const HEADER: &str = "epoch\tlr\ttrain_loss\tdev_eer";

impl TrainLog {
    /// Lowest dev EER; the earliest such epoch wins.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs
            .iter()
            .fold(None, |acc: Option<&EpochRecord>, r| match acc {
                Some(b) if b.dev_eer <= r.dev_eer => Some(b),
                _ => Some(r),
            })
    }

    /// Deterministic columns only; floats in shortest round-trip form.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{HEADER}\n");
        for r in &self.epochs {
            out.push_str(&format!("{}\t{:e}\t{:e}\t{:e}\n", r.epoch, r.lr, r.train_loss, r.dev_eer));
        }
        out
    }

    pub fn timing_tsv(&self) -> String {
        let mut out = String::from("epoch\tseconds\n");
        for r in &self.epochs {
            out.push_str(&format!("{}\t{:.3}\n", r.epoch, r.seconds));
        }
        out
    }
}

/// `path` only labels errors. Wall times are not part of the text and read
/// back as zero.
pub fn parse_train_log(text: &str, path: &Path) -> Result<TrainLog> {
    let perr = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(perr(format!("expected header {HEADER:?}")));
    }
    let mut log = TrainLog::default();
    for (no, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || perr(format!("line {}: malformed record {line:?}", no + 2));
        if f.len() != 4 {
            return Err(bad());
        }
        log.epochs.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad())?,
            lr: f[1].parse().map_err(|_| bad())?,
            train_loss: f[2].parse().map_err(|_| bad())?,
            dev_eer: f[3].parse().map_err(|_| bad())?,
            seconds: 0.0,
        });
    }
    Ok(log)
}

/// Writes the log to `path` and wall times to `<path>.timing`.
pub fn write_train_log(log: &TrainLog, path: &Path) -> Result<()> {
    std::fs::write(path, log.to_tsv()).map_err(|e| Error::io(path, e))?;
    let mut timing = path.as_os_str().to_owned();
    timing.push(".timing");
    let timing = Path::new(&timing);
    std::fs::write(timing, log.timing_tsv()).map_err(|e| Error::io(timing, e))
}

pub fn read_train_log(path: &Path) -> Result<TrainLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_train_log(&text, path)
}
