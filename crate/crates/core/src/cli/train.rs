use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;

use super::settings::{resolve_seeds, Settings};
use super::{create_dir, with_workers, write_text, Common};
use crate::config::KvConfig;
use crate::datasets::{load_matrix, read_manifest, DatasetSplit};
use crate::detector::{load_checkpoint, save_checkpoint, Checkpoint, DetectorConfig, DetectorModel};
use crate::error::{Error, Result};
use crate::features::STANDARD_WINDOWS_MS;
use crate::metrics::{per_attack_eer, pooled_eer, write_scores, EerResult, ReportTable};
use crate::training::{evaluate_checkpoint, train, write_train_log, TrainConfig, TrainLog};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Dev manifest used for model selection.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Seed for initialization and shuffling. Repeat for several runs.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Base detector shape: `full` or `tiny`; `detector.*` keys refine it.
    #[arg(long)]
    pub preset: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

/// Detector and training recipe resolved from presets and config sections.
struct Recipe {
    detector: DetectorConfig,
    train: TrainConfig,
}

fn resolve_recipe(s: &mut Settings, preset: Option<String>, data_dim: usize) -> Result<Recipe> {
    let preset = s.or("run.preset", preset, "full".to_string())?;
    let base = match preset.as_str() {
        "full" => DetectorConfig::new(data_dim),
        "tiny" => DetectorConfig::tiny(data_dim),
        other => return Err(Error::Usage(format!("--preset must be full or tiny, got {other:?}"))),
    };
    let mut dkv = s.section("detector");
    // the seed is a run setting, applied per run below
    if dkv.get("seed").is_some() {
        return Err(Error::Usage("set seeds with --seed or run.seeds, not detector.seed".into()));
    }
    let detector = base.apply_kv(&dkv)?;
    detector.validate()?;
    let tkv = s.section("train");
    if tkv.get("seed").is_some() {
        return Err(Error::Usage("set seeds with --seed or run.seeds, not train.seed".into()));
    }
    let train = TrainConfig::default().apply_kv(&tkv)?;
    dkv = detector.to_kv();
    s.record_section("detector", &without(&dkv, "seed"));
    s.record_section("train", &without(&train.to_kv(), "seed"));
    Ok(Recipe { detector, train })
}

fn without(kv: &KvConfig, key: &str) -> KvConfig {
    let mut out = KvConfig::new();
    for k in kv.keys().filter(|k| *k != key) {
        out.set(k, kv.get(k).unwrap_or_default());
    }
    out
}

fn split_dim(split: &DatasetSplit) -> Result<usize> {
    let first = split
        .records()
        .first()
        .ok_or_else(|| Error::Validation(format!("split {} is empty", split.name)))?;
    Ok(load_matrix(first)?.dim())
}

struct SeedRun {
    seed: u64,
    log: TrainLog,
    best: Checkpoint,
}

/// One training run per seed, each in `out_dir/seed-<seed>`.
fn train_seeds(recipe: &Recipe, train_split: &DatasetSplit, dev: &DatasetSplit, seeds: &[u64], out_dir: &Path) -> Result<Vec<SeedRun>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let dir = out_dir.join(format!("seed-{seed}"));
            let mut dcfg = recipe.detector.clone();
            dcfg.seed = seed;
            let tcfg = TrainConfig {
                seed,
                checkpoint_dir: Some(dir.clone()),
                ..recipe.train.clone()
            };
            let mut model = DetectorModel::new(dcfg)?;
            let out = train(&mut model, train_split, dev, &tcfg)?;
            write_train_log(&out.log, &dir.join("train_log.tsv"))?;
            Ok(SeedRun {
                seed,
                log: out.log,
                best: out.best,
            })
        })
        .collect()
}

/// Lowest best-dev-EER run; the earlier seed in the list wins ties.
fn best_run(runs: &[SeedRun]) -> &SeedRun {
    runs.iter()
        .fold(None, |acc: Option<&SeedRun>, r| match acc {
            Some(b) if b.log.best().map(|x| x.dev_eer) <= r.log.best().map(|x| x.dev_eer) => Some(b),
            _ => Some(r),
        })
        .expect("at least one seed")
}

fn seed_summary(runs: &[SeedRun]) -> String {
    let mut out = String::from("seed\tbest_epoch\tbest_dev_eer\n");
    for r in runs {
        let b = r.log.best().expect("non-empty log");
        out.push_str(&format!("{}\t{}\t{:e}\n", r.seed, b.epoch, b.dev_eer));
    }
    out.push_str(&format!("# best seed {}\n", best_run(runs).seed));
    out
}

pub fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut s = Settings::new(&args.common)?;
    let train_path = s.path("run.train", args.train, "--train")?;
    let dev_path = s.path("run.dev", args.dev, "--dev")?;
    let out_dir = s.path("run.out_dir", args.out_dir, "--out-dir")?;
    let seeds = resolve_seeds(&mut s, args.seeds)?;
    let workers = s.optional("run.workers", args.common.workers)?;
    let train_split = read_manifest(&train_path)?;
    let dev = read_manifest(&dev_path)?;
    let recipe = resolve_recipe(&mut s, args.preset, split_dim(&train_split)?)?;
    s.reject_unused()?;

    create_dir(&out_dir)?;
    s.write_snapshot(&out_dir, "train")?;
    let runs = with_workers(workers, || train_seeds(&recipe, &train_split, &dev, &seeds, &out_dir))??;
    let best = best_run(&runs);
    save_checkpoint(&best.best, &out_dir.join("best.ckpt"))?;
    let summary = seed_summary(&runs);
    write_text(&out_dir.join("summary.tsv"), &summary)?;
    print!("{summary}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Manifest of the trials to score.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Row label in reports (default: checkpoint file stem).
    #[arg(long)]
    pub model_name: Option<String>,
    /// Column label in reports (default: manifest directory name).
    #[arg(long)]
    pub dataset_name: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

fn file_label(path: &Path, parent: bool) -> String {
    let p = if parent { path.parent().unwrap_or(path) } else { path };
    let name = if parent { p.file_name() } else { p.file_stem() };
    name.map_or_else(|| "unnamed".into(), |n| n.to_string_lossy().into_owned())
}

/// Pooled and, when attacks are labeled, per-attack EER text and CSV.
fn eval_report(model: &str, dataset: &str, pooled: &EerResult, per_attack: Option<&[(String, EerResult)]>) -> (String, String) {
    let mut pooled_t = ReportTable::new("Pooled EER", "model", vec![dataset.to_string()]);
    pooled_t.push_row(model, vec![Some(pooled.eer)]);
    let mut text = format!("{dataset}: {pooled}\n\n{}", pooled_t.to_text());
    let mut csv = pooled_t.to_csv();
    if let Some(per) = per_attack {
        let mut t = ReportTable::new("Per-attack EER", "model", per.iter().map(|(a, _)| a.clone()).collect());
        t.push_row(model, per.iter().map(|(_, r)| Some(r.eer)).collect());
        text.push('\n');
        text.push_str(&t.to_text());
        csv.push('\n');
        csv.push_str(&t.to_csv());
    }
    (text, csv)
}

pub fn eval_cmd(args: EvalArgs) -> Result<()> {
    let mut s = Settings::new(&args.common)?;
    let ckpt_path = s.path("run.checkpoint", args.checkpoint, "--checkpoint")?;
    let manifest = s.path("run.manifest", args.manifest, "--manifest")?;
    let out_dir = s.path("run.out_dir", args.out_dir, "--out-dir")?;
    let batch_size = s.or("run.batch_size", args.batch_size, 64)?;
    let model_name = s.or("run.model_name", args.model_name, file_label(&ckpt_path, false))?;
    let dataset_name = s.or("run.dataset_name", args.dataset_name, file_label(&manifest, true))?;
    let workers = s.optional("run.workers", args.common.workers)?;
    s.reject_unused()?;

    let ckpt = load_checkpoint(&ckpt_path)?;
    let split = read_manifest(&manifest)?;
    create_dir(&out_dir)?;
    s.write_snapshot(&out_dir, "eval")?;
    let scores = with_workers(workers, || evaluate_checkpoint(&ckpt.model, &split, batch_size))??;
    write_scores(&scores, &out_dir.join("scores.tsv"))?;

    let pooled = pooled_eer(&scores, &split)?;
    let per: Option<Vec<(String, EerResult)>> = if split.has_labeled_attacks() {
        Some(per_attack_eer(&scores, &split)?.into_iter().collect())
    } else {
        None
    };
    let (text, csv) = eval_report(&model_name, &dataset_name, &pooled, per.as_deref());
    write_text(&out_dir.join("report.txt"), &text)?;
    write_text(&out_dir.join("report.csv"), &csv)?;

    let mut summary = KvConfig::new();
    summary.set("model", &model_name);
    summary.set("dataset", &dataset_name);
    summary.set("pooled.eer", format!("{:e}", pooled.eer));
    summary.set("pooled.threshold", format!("{:e}", pooled.threshold));
    summary.set("pooled.n_bonafide", pooled.n_bonafide);
    summary.set("pooled.n_spoof", pooled.n_spoof);
    for (a, r) in per.iter().flatten() {
        summary.set(&format!("attack.{a}"), format!("{:e}", r.eer));
    }
    write_text(&out_dir.join("eval_summary.cfg"), &summary.to_text())?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Root holding `<w>ms/{train,dev,eval}/manifest.tsv` per window.
    #[arg(long)]
    pub root: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Windows in ms, comma-separated (default: 50,100,200,300).
    #[arg(long, value_delimiter = ',')]
    pub windows: Vec<u32>,
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub preset: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

/// One (window, delta) cell's result; `None` when its inputs are missing.
fn sweep_cell(
    s_recipe: &Recipe,
    root: &Path,
    out_dir: &Path,
    window: u32,
    delta: bool,
    seeds: &[u64],
) -> Result<Option<f64>> {
    let base = root.join(format!("{window}ms"));
    let paths: Vec<PathBuf> = ["train", "dev", "eval"].iter().map(|s| base.join(s).join("manifest.tsv")).collect();
    if let Some(missing) = paths.iter().find(|p| !p.is_file()) {
        eprintln!("sweep: {window}ms {} absent: {} not found", if delta { "delta" } else { "direct" }, missing.display());
        return Ok(None);
    }
    let train_split = read_manifest(&paths[0])?;
    let dev = read_manifest(&paths[1])?;
    let eval = read_manifest(&paths[2])?;
    let d = split_dim(&train_split)?;
    let recipe = Recipe {
        detector: DetectorConfig {
            input_dim: d,
            conv_channels: if s_recipe.detector.conv_channels == s_recipe.detector.input_dim {
                d
            } else {
                s_recipe.detector.conv_channels
            },
            use_delta: delta,
            ..s_recipe.detector.clone()
        },
        train: s_recipe.train.clone(),
    };
    let cell_dir = out_dir.join(format!("{window}ms-{}", if delta { "delta" } else { "direct" }));
    create_dir(&cell_dir)?;
    let runs = train_seeds(&recipe, &train_split, &dev, seeds, &cell_dir)?;
    let best = best_run(&runs);
    write_text(&cell_dir.join("summary.tsv"), &seed_summary(&runs))?;
    save_checkpoint(&best.best, &cell_dir.join("best.ckpt"))?;
    let scores = evaluate_checkpoint(&best.best.model, &eval, recipe.train.batch_size)?;
    write_scores(&scores, &cell_dir.join("scores.tsv"))?;
    Ok(Some(pooled_eer(&scores, &eval)?.eer))
}

/// The Direct/Delta by window grid for the given cell results.
pub fn sweep_table(windows: &[u32], cells: &[(u32, bool, Option<f64>)]) -> ReportTable {
    let mut t = ReportTable::new(
        "Window sweep",
        "type",
        windows.iter().map(|w| format!("{w}ms")).collect(),
    );
    for (name, delta) in [("Direct", false), ("Delta", true)] {
        let row = windows
            .iter()
            .map(|w| {
                cells
                    .iter()
                    .find(|c| c.0 == *w && c.1 == delta)
                    .and_then(|c| c.2)
            })
            .collect();
        t.push_row(name, row);
    }
    t
}

pub fn sweep_cmd(args: SweepArgs) -> Result<()> {
    let mut s = Settings::new(&args.common)?;
    let root = s.path("run.root", args.root, "--root")?;
    let out_dir = s.path("run.out_dir", args.out_dir, "--out-dir")?;
    let windows = s.list("run.windows", args.windows, STANDARD_WINDOWS_MS.to_vec())?;
    let seeds = resolve_seeds(&mut s, args.seeds)?;
    let workers = s.optional("run.workers", args.common.workers)?;
    // input_dim is set per window from the data
    let recipe = resolve_recipe(&mut s, args.preset, 1)?;
    s.reject_unused()?;
    if let Some(w) = windows.iter().find(|w| **w == 0 || 6000 % **w != 0) {
        return Err(Error::Usage(format!("window {w} ms does not divide 6000 ms")));
    }

    create_dir(&out_dir)?;
    s.write_snapshot(&out_dir, "sweep")?;
    let jobs: Vec<(u32, bool)> = windows.iter().flat_map(|&w| [(w, false), (w, true)]).collect();
    let cells: Vec<(u32, bool, Option<f64>)> = with_workers(workers, || {
        jobs.par_iter()
            .map(|&(w, delta)| sweep_cell(&recipe, &root, &out_dir, w, delta, &seeds).map(|r| (w, delta, r)))
            .collect::<Result<Vec<_>>>()
    })??;
    let table = sweep_table(&windows, &cells);
    write_text(&out_dir.join("sweep.txt"), &table.to_text())?;
    write_text(&out_dir.join("sweep.csv"), &table.to_csv())?;
    print!("{}", table.to_text());
    Ok(())
}
