#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nonsem::cli::run;

pub fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("nonsem").chain(args.iter().copied()))
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Writes train/dev/eval splits under `root` with the CLI.
pub fn gen_splits(root: &Path, seed: u64, d: usize, t: usize, sep: f64, sizes: [(usize, usize); 3], window_ms: u32) {
    for (name, (nb, ns)) in ["train", "dev", "eval"].into_iter().zip(sizes) {
        let code = cli(&[
            "gen-synthetic",
            "--out-dir",
            p(&root.join(name)),
            "--split",
            name,
            "--seed",
            &seed.to_string(),
            "--n-bonafide",
            &nb.to_string(),
            "--n-spoof",
            &ns.to_string(),
            "--dim",
            &d.to_string(),
            "--frames",
            &t.to_string(),
            "--separation",
            &sep.to_string(),
            "--window-ms",
            &window_ms.to_string(),
        ]);
        assert_eq!(code, 0, "gen-synthetic {name}");
    }
}

/// gen-synthetic, train (tiny preset) and eval through the CLI. Returns the
/// eval output directory.
pub fn pipeline(work: &Path, seed: u64, sep: f64, epochs: usize) -> PathBuf {
    let data = work.join("data");
    gen_splits(&data, seed, 16, 10, sep, [(200, 200), (50, 50), (100, 100)], 200);
    let run_dir = work.join("run");
    let code = cli(&[
        "train",
        "--train",
        p(&data.join("train/manifest.tsv")),
        "--dev",
        p(&data.join("dev/manifest.tsv")),
        "--out-dir",
        p(&run_dir),
        "--seed",
        &seed.to_string(),
        "--preset",
        "tiny",
        "--set",
        &format!("train.epochs={epochs}"),
    ]);
    assert_eq!(code, 0, "train");
    let eval_dir = work.join("eval");
    let code = cli(&[
        "eval",
        "--checkpoint",
        p(&run_dir.join("best.ckpt")),
        "--manifest",
        p(&data.join("eval/manifest.tsv")),
        "--out-dir",
        p(&eval_dir),
    ]);
    assert_eq!(code, 0, "eval");
    eval_dir
}

pub fn pooled_eer(eval_dir: &Path) -> f64 {
    let kv = nonsem::config::KvConfig::load(&eval_dir.join("eval_summary.cfg")).unwrap();
    kv.get("pooled.eer").unwrap().parse().unwrap()
}

/// Mono 16 kHz 16-bit WAV.
pub fn write_wav(path: &Path, samples: &[f32]) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16_000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0) as i16).unwrap();
    }
    w.finalize().unwrap();
}
