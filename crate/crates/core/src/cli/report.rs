use std::path::PathBuf;

use clap::Args;

use super::{create_dir, write_text, Common};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::metrics::ReportTable;
use crate::training::read_train_log;

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of a `train` run (one row per seed). Repeatable.
    #[arg(long = "train-dir")]
    pub train_dirs: Vec<PathBuf>,
    /// Output directory of an `eval` run (model by dataset grid). Repeatable.
    #[arg(long = "eval-dir")]
    pub eval_dirs: Vec<PathBuf>,
    /// Also write `report.txt` and `report.csv` here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

fn seed_dirs(dir: &std::path::Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out: Vec<(u64, PathBuf)> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let seed = name.strip_prefix("seed-")?.parse().ok()?;
            Some((seed, e.path()))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Best dev EER per seed for each train directory.
pub fn train_table(dirs: &[PathBuf]) -> Result<ReportTable> {
    let mut t = ReportTable::new("Best dev EER per seed", "run", vec!["dev".into()]);
    for dir in dirs {
        let seeds = seed_dirs(dir)?;
        if seeds.is_empty() {
            return Err(Error::Validation(format!("{} has no seed-* runs", dir.display())));
        }
        for (seed, path) in seeds {
            let log = read_train_log(&path.join("train_log.tsv"))?;
            let best = log
                .best()
                .ok_or_else(|| Error::Validation(format!("{} has an empty train log", path.display())))?;
            t.push_row(format!("{} seed {seed} (epoch {})", dir.display(), best.epoch), vec![Some(best.dev_eer)]);
        }
    }
    Ok(t)
}

/// Pooled EER grid, rows = models and columns = datasets, from eval runs.
pub fn eval_table(dirs: &[PathBuf]) -> Result<ReportTable> {
    let mut cells: Vec<(String, String, f64)> = Vec::new();
    for dir in dirs {
        let path = dir.join("eval_summary.cfg");
        let kv = KvConfig::load(&path)?;
        let field = |k: &str| {
            kv.get(k)
                .map(str::to_string)
                .ok_or_else(|| Error::Parse {
                    path: path.clone(),
                    message: format!("missing {k}"),
                })
        };
        let eer: f64 = field("pooled.eer")?.parse().map_err(|_| Error::Parse {
            path: path.clone(),
            message: "pooled.eer is not a number".into(),
        })?;
        cells.push((field("model")?, field("dataset")?, eer));
    }
    let mut models: Vec<String> = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    for (m, d, _) in &cells {
        if !models.contains(m) {
            models.push(m.clone());
        }
        if !datasets.contains(d) {
            datasets.push(d.clone());
        }
    }
    let mut t = ReportTable::new("Pooled EER", "model", datasets.clone());
    for m in &models {
        let row = datasets
            .iter()
            .map(|d| cells.iter().find(|c| &c.0 == m && &c.1 == d).map(|c| c.2))
            .collect();
        t.push_row(m.clone(), row);
    }
    Ok(t)
}

pub fn report_cmd(args: ReportArgs) -> Result<()> {
    if args.common.config.is_some() || !args.common.overrides.is_empty() {
        return Err(Error::Usage("report takes no configuration".into()));
    }
    if args.train_dirs.is_empty() && args.eval_dirs.is_empty() {
        return Err(Error::Usage("give at least one --train-dir or --eval-dir".into()));
    }
    let mut tables = Vec::new();
    if !args.train_dirs.is_empty() {
        tables.push(train_table(&args.train_dirs)?);
    }
    if !args.eval_dirs.is_empty() {
        tables.push(eval_table(&args.eval_dirs)?);
    }
    let text: Vec<String> = tables.iter().map(ReportTable::to_text).collect();
    let text = text.join("\n");
    print!("{text}");
    if let Some(dir) = &args.out_dir {
        create_dir(dir)?;
        write_text(&dir.join("report.txt"), &text)?;
        let csv: Vec<String> = tables.iter().map(ReportTable::to_csv).collect();
        write_text(&dir.join("report.csv"), &csv.join("\n"))?;
    }
    Ok(())
}
