use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::settings::Settings;
use super::{create_dir, with_workers, Common};
use crate::datasets::{
    format_manifest, generate_synthetic_dataset, read_asvspoof_protocol, DatasetSplit, Label, SyntheticSpec,
    TrialRecord, UNKNOWN_ATTACK,
};
use crate::error::{Error, Result};
use crate::features::{encode_embedding, FrontendSpec, PadMode, MAX_SECONDS};

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory of 16 kHz mono 16-bit WAV files; the file stem is the utt_id.
    #[arg(long)]
    pub audio_dir: Option<PathBuf>,
    /// Output directory for `<utt_id>.emb` files and `manifest.tsv`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Chunk duration; must divide 6000.
    #[arg(long)]
    pub window_ms: Option<u32>,
    /// `synthetic` or `precomputed`.
    #[arg(long)]
    pub frontend: Option<String>,
    /// Seed of the synthetic frontend's projection.
    #[arg(long)]
    pub frontend_seed: Option<u64>,
    /// Embedding dimension of the synthetic frontend.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Directory of externally extracted `<utt_id>.emb` files.
    #[arg(long)]
    pub precomputed_root: Option<PathBuf>,
    /// ASVspoof protocol file supplying labels and attack ids.
    #[arg(long)]
    pub protocol: Option<PathBuf>,
    /// Label for every file when no protocol is given.
    #[arg(long)]
    pub label: Option<String>,
    /// `cyclic` or `zero` padding for clips shorter than 6 s.
    #[arg(long)]
    pub pad: Option<PadMode>,
    #[command(flatten)]
    pub common: Common,
}

/// What `extract` did to the output directory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractStats {
    pub written: usize,
    pub unchanged: usize,
    pub failed: usize,
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Writes `bytes` unless the file already holds exactly them.
fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool> {
    if let Ok(existing) = std::fs::read(path) {
        if Sha256::digest(&existing) == Sha256::digest(bytes) {
            return Ok(false);
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(true)
}

pub fn extract(args: ExtractArgs) -> Result<ExtractStats> {
    let mut s = Settings::new(&args.common)?;
    let audio_dir = s.path("run.audio_dir", args.audio_dir, "--audio-dir")?;
    let out_dir = s.path("run.out_dir", args.out_dir, "--out-dir")?;
    let window_ms = s.require("run.window_ms", args.window_ms, "--window-ms")?;
    let pad = s.or("run.pad", args.pad, PadMode::Cyclic)?;
    let kind = s.or("run.frontend", args.frontend, "synthetic".to_string())?;
    let frontend = match kind.as_str() {
        "synthetic" => FrontendSpec::Synthetic {
            seed: s.or("run.frontend_seed", args.frontend_seed, 0)?,
            dim: s.require("run.dim", args.dim, "--dim")?,
        },
        "precomputed" => FrontendSpec::Precomputed {
            root: s.path("run.precomputed_root", args.precomputed_root, "--precomputed-root")?,
        },
        other => return Err(Error::Usage(format!("--frontend must be synthetic or precomputed, got {other:?}"))),
    };
    let protocol = s.optional_path("run.protocol", args.protocol)?;
    let label: Option<String> = s.optional("run.label", args.label)?;
    let workers = s.optional("run.workers", args.common.workers)?;
    s.reject_unused()?;

    if 6000 % window_ms != 0 || window_ms == 0 {
        return Err(Error::Usage(format!(
            "--window-ms {window_ms} does not divide {} ms",
            MAX_SECONDS * 1000
        )));
    }
    let fixed_label = match (&protocol, label) {
        (Some(_), Some(_)) => return Err(Error::Usage("give either --protocol or --label, not both".into())),
        (None, None) => return Err(Error::Usage("missing --protocol or --label".into())),
        (None, Some(l)) => Some(l.parse::<Label>().map_err(Error::Usage)?),
        (Some(_), None) => None,
    };
    let labels: Option<HashMap<String, TrialRecord>> = match &protocol {
        Some(p) => Some(
            read_asvspoof_protocol(p, Path::new(""))?
                .into_iter()
                .map(|r| (r.utt_id.clone(), r))
                .collect(),
        ),
        None => None,
    };

    let files = wav_files(&audio_dir)?;
    if files.is_empty() {
        return Err(Error::Validation(format!("no input files in {}", audio_dir.display())));
    }
    create_dir(&out_dir)?;
    s.write_snapshot(&out_dir, "extract")?;

    let one = |path: &PathBuf| -> Result<(TrialRecord, bool)> {
        let utt_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let (label, attack_id, speaker_id, condition) = match (&labels, fixed_label) {
            (Some(map), _) => {
                let r = map
                    .get(&utt_id)
                    .ok_or_else(|| Error::Validation(format!("{utt_id} is not in the protocol")))?;
                (r.label, r.attack_id.clone(), r.speaker_id.clone(), r.condition.clone())
            }
            (None, Some(Label::Spoof)) => (Label::Spoof, Some(UNKNOWN_ATTACK.to_string()), None, None),
            (None, l) => (l.unwrap_or(Label::Bonafide), None, None, None),
        };
        let m = frontend.embed_utterance(&utt_id, Some(path), window_ms, pad)?;
        let file = format!("{utt_id}.emb");
        let wrote = write_if_changed(&out_dir.join(&file), &encode_embedding(&m))?;
        let rec = TrialRecord {
            utt_id,
            label,
            attack_id,
            speaker_id,
            embedding_path: file.into(),
            condition,
        };
        Ok((rec, wrote))
    };
    let results: Vec<Result<(TrialRecord, bool)>> = with_workers(workers, || files.par_iter().map(one).collect())?;

    let mut stats = ExtractStats::default();
    let mut records = Vec::new();
    for (path, r) in files.iter().zip(results) {
        match r {
            Ok((rec, wrote)) => {
                if wrote {
                    stats.written += 1;
                } else {
                    stats.unchanged += 1;
                }
                records.push(rec);
            }
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                stats.failed += 1;
            }
        }
    }
    if !records.is_empty() {
        let split = DatasetSplit::new(out_dir.file_name().map_or("split".into(), |n| n.to_string_lossy()), records)?;
        let manifest = out_dir.join("manifest.tsv");
        write_if_changed(&manifest, format_manifest(&split).as_bytes())?;
    }
    println!(
        "extract: {} written, {} unchanged, {} failed",
        stats.written, stats.unchanged, stats.failed
    );
    if stats.failed > 0 {
        return Err(Error::Validation(format!("{} of {} files failed", stats.failed, files.len())));
    }
    Ok(stats)
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    /// Output directory of the split.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Split name, also the utt_id prefix (train, dev, eval, ...).
    #[arg(long)]
    pub split: Option<String>,
    /// Seed of the class direction (shared across splits) and the noise.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_bonafide: Option<usize>,
    #[arg(long)]
    pub n_spoof: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Frames per utterance (default: 6000 / window_ms).
    #[arg(long)]
    pub frames: Option<usize>,
    /// Half the distance between class means along the class direction.
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub window_ms: Option<u32>,
    #[command(flatten)]
    pub common: Common,
}

pub fn gen_synthetic(args: GenSyntheticArgs) -> Result<()> {
    let mut s = Settings::new(&args.common)?;
    let out_dir = s.path("run.out_dir", args.out_dir, "--out-dir")?;
    let split = s.require("run.split", args.split, "--split")?;
    let env_seed = std::env::var("NONSEM_SEED").ok().and_then(|v| v.trim().parse().ok()).unwrap_or(0);
    let seed = s.or("run.seed", args.seed, env_seed)?;
    let n_bonafide = s.or("run.n_bonafide", args.n_bonafide, 200)?;
    let n_spoof = s.or("run.n_spoof", args.n_spoof, 200)?;
    let d = s.or("run.dim", args.dim, 16)?;
    let window_ms: u32 = s.or("run.window_ms", args.window_ms, 200)?;
    if window_ms == 0 {
        return Err(Error::Usage("--window-ms must be >= 1".into()));
    }
    let t = s.or("run.frames", args.frames, (6000 / window_ms).max(1) as usize)?;
    let separation = s.or("run.separation", args.separation, 5.0)?;
    s.reject_unused()?;

    let mut spec = SyntheticSpec::new(seed, &split, n_bonafide, n_spoof, d, t, separation);
    spec.window_ms = window_ms;
    let out = generate_synthetic_dataset(&spec, &out_dir)?;
    s.write_snapshot(&out_dir, "gen-synthetic")?;
    println!(
        "gen-synthetic: {} trials ({} bonafide, {} spoof), {d} x {t}, in {}",
        out.len(),
        n_bonafide,
        n_spoof,
        out_dir.display()
    );
    Ok(())
}
