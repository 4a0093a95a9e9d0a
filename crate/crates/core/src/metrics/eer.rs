use std::collections::BTreeMap;
use std::fmt;

use super::scores::ScoreFile;
use crate::datasets::{DatasetSplit, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    /// Fraction in `[0, 1]`.
    pub eer: f64,
    pub threshold: f64,
    pub n_bonafide: usize,
    pub n_spoof: usize,
}

impl fmt::Display for EerResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "EER {:.4}% at threshold {:.6} ({} bonafide, {} spoof)",
            100.0 * self.eer,
            self.threshold,
            self.n_bonafide,
            self.n_spoof
        )
    }
}

/// EER with acceptance `score >= θ`. θ sweeps the distinct scores plus one
/// point above the maximum; FAR − FRR falls from 1 to −1 along the sweep and
/// the EER is read off where it first reaches zero, interpolating linearly
/// between the two sweep points around a sign flip.
pub fn compute_eer(bonafide: &[f64], spoof: &[f64]) -> Result<EerResult> {
    if bonafide.is_empty() || spoof.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "EER needs both classes, got {} bonafide and {} spoof scores",
            bonafide.len(),
            spoof.len()
        )));
    }
    if bonafide.iter().chain(spoof).any(|s| !s.is_finite()) {
        return Err(Error::UndefinedMetric("non-finite score".into()));
    }
    let mut b = bonafide.to_vec();
    let mut s = spoof.to_vec();
    b.sort_by(f64::total_cmp);
    s.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = b.iter().chain(&s).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(thresholds[thresholds.len() - 1] + 1.0);

    let (nb, ns) = (b.len() as f64, s.len() as f64);
    // number of scores strictly below θ, advanced monotonically
    let (mut bi, mut si) = (0usize, 0usize);
    let mut prev: Option<(f64, f64, f64)> = None;
    for &theta in &thresholds {
        while bi < b.len() && b[bi] < theta {
            bi += 1;
        }
        while si < s.len() && s[si] < theta {
            si += 1;
        }
        let frr = bi as f64 / nb;
        let far = (s.len() - si) as f64 / ns;
        let diff = far - frr;
        if diff <= 0.0 {
            let (eer, threshold) = match prev {
                Some((p_theta, p_far, p_frr)) if diff < 0.0 => {
                    let p_diff = p_far - p_frr;
                    let lambda = p_diff / (p_diff - diff);
                    (p_far + lambda * (far - p_far), p_theta + lambda * (theta - p_theta))
                }
                _ => (far, theta),
            };
            return Ok(EerResult {
                eer,
                threshold,
                n_bonafide: b.len(),
                n_spoof: s.len(),
            });
        }
        prev = Some((theta, far, frr));
    }
    unreachable!("FAR - FRR is -1 above the maximum score")
}

fn split_scores<'a>(
    scores: &ScoreFile,
    split: &DatasetSplit,
    keep: impl Fn(&crate::datasets::TrialRecord) -> bool + 'a,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut bona, mut spoof) = (Vec::new(), Vec::new());
    for e in scores.entries() {
        let rec = split.get(&e.utt_id).ok_or_else(|| {
            Error::Validation(format!("scored trial {} is not in split {}", e.utt_id, split.name))
        })?;
        if !keep(rec) {
            continue;
        }
        match rec.label {
            Label::Bonafide => bona.push(e.score),
            Label::Spoof => spoof.push(e.score),
        }
    }
    Ok((bona, spoof))
}

/// EER over every scored trial of `split`.
pub fn pooled_eer(scores: &ScoreFile, split: &DatasetSplit) -> Result<EerResult> {
    let (b, s) = split_scores(scores, split, |_| true)?;
    compute_eer(&b, &s)
}

/// For each attack id: EER over all bonafide trials plus that attack's spoofs.
pub fn per_attack_eer(scores: &ScoreFile, split: &DatasetSplit) -> Result<BTreeMap<String, EerResult>> {
    let (bona, _) = split_scores(scores, split, |_| true)?;
    let mut by_attack: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for e in scores.entries() {
        // presence already checked above
        let rec = split.get(&e.utt_id).expect("checked");
        if let Some(a) = &rec.attack_id {
            by_attack.entry(a.clone()).or_default().push(e.score);
        }
    }
    by_attack
        .into_iter()
        .map(|(a, s)| compute_eer(&bona, &s).map(|r| (a, r)))
        .collect()
}
