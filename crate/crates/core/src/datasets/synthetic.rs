use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::manifest::write_manifest;
use super::{DatasetSplit, Label, TrialRecord};
use crate::error::{Error, Result};
use crate::features::{write_embedding_file, EmbeddingMatrix};

pub const SYNTHETIC_GAUSS_ID: &str = "synthetic-gauss";

/// Parameters of a Gaussian two-class corpus. Bonafide frames are drawn
/// around `+separation·u`, spoof frames around `-separation·u`, unit noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub split: String,
    pub n_bonafide: usize,
    pub n_spoof: usize,
    pub d: usize,
    pub t: usize,
    pub separation: f64,
    pub window_ms: u32,
    /// Assigned to spoofed trials round-robin.
    pub attacks: Vec<String>,
}

impl SyntheticSpec {
    pub fn new(seed: u64, split: &str, n_bonafide: usize, n_spoof: usize, d: usize, t: usize, separation: f64) -> Self {
        SyntheticSpec {
            seed,
            split: split.to_string(),
            n_bonafide,
            n_spoof,
            d,
            t,
            separation,
            window_ms: 200,
            attacks: (7..=19).map(|i| format!("A{i:02}")).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config(format!("separation must be >= 0, got {}", self.separation)));
        }
        if self.d == 0 || self.t == 0 {
            return Err(Error::Config(format!("empty synthetic matrices {} x {}", self.d, self.t)));
        }
        if self.n_bonafide + self.n_spoof == 0 {
            return Err(Error::Config("synthetic split needs at least one trial".into()));
        }
        if self.attacks.is_empty() && self.n_spoof > 0 {
            return Err(Error::Config("synthetic spoof trials need at least one attack id".into()));
        }
        if self.split.is_empty() || !self.split.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::Config(format!("split name {:?} must be [A-Za-z0-9_-]+", self.split)));
        }
        Ok(())
    }
}

/// The class direction `u` for a seed. Shared by every split generated with
/// that seed so train, dev and eval agree on it.
pub fn synthetic_direction(seed: u64, d: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn noise_seed(seed: u64, split: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(split.as_bytes());
    h.finalize().into()
}

/// Writes one `EMB1` file per trial and `manifest.tsv` into `out_dir`.
/// The manifest stores file names relative to `out_dir`; the returned
/// split carries the full paths.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, out_dir: &Path) -> Result<DatasetSplit> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let u = synthetic_direction(spec.seed, spec.d);
    let mut rng = ChaCha8Rng::from_seed(noise_seed(spec.seed, &spec.split));

    let mut relative = Vec::with_capacity(spec.n_bonafide + spec.n_spoof);
    let mut full = Vec::with_capacity(relative.capacity());
    let trials = (0..spec.n_bonafide)
        .map(|i| (Label::Bonafide, i))
        .chain((0..spec.n_spoof).map(|i| (Label::Spoof, i)));
    for (label, i) in trials {
        let (tag, sign, attack_id) = match label {
            Label::Bonafide => ('B', 1.0, None),
            Label::Spoof => ('S', -1.0, Some(spec.attacks[i % spec.attacks.len()].clone())),
        };
        let utt_id = format!("{}_{tag}_{i:05}", spec.split);
        let data: Vec<f32> = (0..spec.t * spec.d)
            .map(|k| {
                let z: f64 = rng.sample(StandardNormal);
                (sign * spec.separation * u[k % spec.d] + z) as f32
            })
            .collect();
        let m = EmbeddingMatrix::new(spec.d, spec.t, data, spec.window_ms, SYNTHETIC_GAUSS_ID)?;
        let file = format!("{utt_id}.emb");
        write_embedding_file(&m, &out_dir.join(&file))?;
        let rec = TrialRecord {
            utt_id,
            label,
            attack_id,
            speaker_id: None,
            embedding_path: file.clone().into(),
            condition: None,
        };
        full.push(TrialRecord {
            embedding_path: out_dir.join(&file),
            ..rec.clone()
        });
        relative.push(rec);
    }
    write_manifest(&DatasetSplit::new(&spec.split, relative)?, &out_dir.join("manifest.tsv"))?;
    DatasetSplit::new(&spec.split, full)
}
