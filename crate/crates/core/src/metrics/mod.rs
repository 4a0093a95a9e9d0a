//! Equal error rate, per-attack decomposition, score files and report tables.

mod eer;
mod report;
mod scores;

pub use eer::{compute_eer, per_attack_eer, pooled_eer, EerResult};
pub use report::ReportTable;
pub use scores::{format_scores, parse_scores, read_scores, write_scores, ScoreEntry, ScoreFile};
