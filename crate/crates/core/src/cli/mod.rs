//! Command-line front end. Every command writes a `<command>.resolved.cfg`
//! snapshot next to its outputs; passing that file back with `--config`
//! repeats the run.

mod data;
mod report;
mod settings;
mod train;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};

pub use data::{extract, gen_synthetic, ExtractArgs, ExtractStats, GenSyntheticArgs};
pub use report::ReportArgs;
pub use settings::Settings;
pub use train::{sweep_table, EvalArgs, SweepArgs, TrainArgs};

/// Exit code for a successful run.
pub const EXIT_OK: i32 = 0;
/// Bad flags, missing inputs or inconsistent configuration.
pub const EXIT_USAGE: i32 = 1;
/// Unreadable or malformed data.
pub const EXIT_DATA: i32 = 2;
/// NaN/Inf during training or scoring.
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "nonsem", version, about = "Audio deepfake detection on frame embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every command.
#[derive(Debug, Args, Default)]
pub struct Common {
    /// Key/value config file, e.g. a previous run's `.resolved.cfg`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk WAV files and write one EMB1 embedding file per utterance plus a manifest.
    Extract(data::ExtractArgs),
    /// Write a Gaussian two-class split (EMB1 files and manifest).
    GenSynthetic(data::GenSyntheticArgs),
    /// Train one detector per seed and keep the best checkpoint on dev EER.
    Train(train::TrainArgs),
    /// Score a manifest with a checkpoint and report pooled and per-attack EER.
    Eval(train::EvalArgs),
    /// Train and evaluate the Direct/Delta by window grid.
    Sweep(train::SweepArgs),
    /// Summarize finished train or eval runs as EER tables.
    Report(report::ReportArgs),
}

/// Exit code for an error, per the documented contract.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) => EXIT_USAGE,
        Error::Numeric(_) | Error::DegenerateBatch(_) | Error::DegenerateSequence(_) => EXIT_NUMERIC,
        Error::Load { source, .. } => exit_code(source),
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are printed to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract(a) => data::extract(a).map(|_| ()),
        Command::GenSynthetic(a) => data::gen_synthetic(a),
        Command::Train(a) => train::train_cmd(a),
        Command::Eval(a) => train::eval_cmd(a),
        Command::Sweep(a) => train::sweep_cmd(a),
        Command::Report(a) => report::report_cmd(a),
    }
}

/// Runs `f` on a pool with the requested number of workers.
fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::Usage("--workers must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start {n} workers: {e}")))
            .map(|pool| pool.install(f)),
    }
}

fn create_dir(path: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &std::path::Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
