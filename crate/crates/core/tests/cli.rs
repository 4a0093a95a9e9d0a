mod common;

use std::path::Path;
use std::process::Command;

use common::{cli, gen_splits, p, pipeline, write_wav};
use nonsem::cli::{exit_code, extract, Cli, Command as Sub, ExtractStats, EXIT_DATA, EXIT_USAGE};
use nonsem::datasets::read_manifest;
use nonsem::features::read_embedding_file;

fn extract_with(args: &[&str]) -> nonsem::Result<ExtractStats> {
    use clap::Parser;
    let cli = Cli::try_parse_from(std::iter::once("nonsem").chain(std::iter::once("extract")).chain(args.iter().copied())).unwrap();
    match cli.command {
        Sub::Extract(a) => extract(a),
        _ => unreachable!(),
    }
}

fn tone(seconds: f32, freq: f32) -> Vec<f32> {
    (0..(seconds * 16000.0) as usize)
        .map(|i| 0.4 * (i as f32 * freq * std::f32::consts::TAU / 16000.0).sin())
        .collect()
}

#[test]
fn extract_ten_wavs_then_rerun_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let audio = dir.path().join("audio");
    std::fs::create_dir(&audio).unwrap();
    for i in 0..10 {
        write_wav(&audio.join(format!("utt{i:02}.wav")), &tone(2.0 + i as f32 * 0.5, 100.0 + 50.0 * i as f32));
    }
    let out = dir.path().join("emb");
    let args = [
        "--audio-dir", p(&audio), "--out-dir", p(&out), "--window-ms", "200", "--dim", "16", "--label", "bonafide",
    ];
    let first = extract_with(&args).unwrap();
    assert_eq!(first, ExtractStats { written: 10, unchanged: 0, failed: 0 });
    let split = read_manifest(&out.join("manifest.tsv")).unwrap();
    assert_eq!(split.len(), 10);
    for r in split.records() {
        let m = read_embedding_file(&r.embedding_path).unwrap();
        assert_eq!((m.dim(), m.frames(), m.window_ms), (16, 30, 200));
        assert_eq!(m.frontend_id, "synthetic-v1");
    }
    let again = extract_with(&args).unwrap();
    assert_eq!(again, ExtractStats { written: 0, unchanged: 10, failed: 0 });
    assert!(out.join("extract.resolved.cfg").exists());
}

#[test]
fn extract_uses_protocol_labels_and_reports_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let audio = dir.path().join("audio");
    std::fs::create_dir(&audio).unwrap();
    write_wav(&audio.join("LA_T_1.wav"), &tone(1.0, 300.0));
    write_wav(&audio.join("LA_T_2.wav"), &tone(1.0, 500.0));
    std::fs::write(audio.join("LA_T_3.wav"), b"not a wav").unwrap();
    let protocol = dir.path().join("protocol.txt");
    std::fs::write(
        &protocol,
        "LA_0079 LA_T_1 - - bonafide\nLA_0080 LA_T_2 - A11 spoof\nLA_0081 LA_T_3 - A12 spoof\n",
    )
    .unwrap();
    let out = dir.path().join("emb");
    let err = extract_with(&[
        "--audio-dir", p(&audio), "--out-dir", p(&out), "--window-ms", "300", "--dim", "4", "--protocol", p(&protocol),
    ])
    .unwrap_err();
    assert_eq!(exit_code(&err), EXIT_DATA);
    let split = read_manifest(&out.join("manifest.tsv")).unwrap();
    assert_eq!(split.len(), 2);
    assert_eq!(split.get("LA_T_2").unwrap().attack_id.as_deref(), Some("A11"));
}

#[test]
fn extract_empty_dir_and_bad_window() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let err = extract_with(&["--audio-dir", p(dir.path()), "--out-dir", p(&out), "--window-ms", "200", "--dim", "4", "--label", "spoof"])
        .unwrap_err();
    assert!(err.to_string().contains("no input files"), "{err}");
    let err = extract_with(&["--audio-dir", p(dir.path()), "--out-dir", p(&out), "--window-ms", "70", "--dim", "4", "--label", "spoof"])
        .unwrap_err();
    assert_eq!(exit_code(&err), EXIT_USAGE);
}

#[test]
fn missing_dev_manifest_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    gen_splits(dir.path(), 1, 4, 3, 1.0, [(4, 4), (2, 2), (2, 2)], 200);
    let code = cli(&["train", "--train", p(&dir.path().join("train/manifest.tsv")), "--out-dir", p(&dir.path().join("r"))]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn dim_mismatch_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    gen_splits(dir.path(), 1, 4, 3, 1.0, [(4, 4), (2, 2), (2, 2)], 200);
    let run = dir.path().join("r");
    let code = cli(&[
        "train", "--train", p(&dir.path().join("train/manifest.tsv")), "--dev", p(&dir.path().join("dev/manifest.tsv")),
        "--out-dir", p(&run), "--preset", "tiny", "--set", "detector.input_dim=5",
    ]);
    assert_eq!(code, EXIT_USAGE);
    assert!(!run.join("seed-0/last.ckpt").exists());
}

#[test]
fn corrupt_embedding_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    gen_splits(dir.path(), 1, 4, 3, 1.0, [(4, 4), (3, 3), (2, 2)], 200);
    let victim = dir.path().join("dev/dev_B_00001.emb");
    let mut bytes = std::fs::read(&victim).unwrap();
    bytes.truncate(bytes.len() - 4);
    std::fs::write(&victim, bytes).unwrap();
    let code = cli(&[
        "train", "--train", p(&dir.path().join("train/manifest.tsv")), "--dev", p(&dir.path().join("dev/manifest.tsv")),
        "--out-dir", p(&dir.path().join("r")), "--preset", "tiny", "--set", "train.epochs=1",
    ]);
    assert_eq!(code, EXIT_DATA);
}

#[test]
fn unknown_config_keys_rejected() {
    let dir = tempfile::tempdir().unwrap();
    gen_splits(dir.path(), 1, 4, 3, 1.0, [(4, 4), (2, 2), (2, 2)], 200);
    let (tr, dv, out) = (dir.path().join("train/manifest.tsv"), dir.path().join("dev/manifest.tsv"), dir.path().join("r"));
    let base = ["train", "--train", p(&tr), "--dev", p(&dv), "--out-dir", p(&out), "--set"];
    for bad in ["train.epoch=3", "detector.lstm=3", "run.nope=1", "train.seed=4"] {
        let mut args = base.to_vec();
        args.push(bad);
        assert_eq!(cli(&args), EXIT_USAGE, "{bad}");
    }
}

#[test]
fn eval_without_attack_labels_reports_pooled_only_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let eval_dir = pipeline(dir.path(), 3, 5.0, 2);
    // rewrite the eval manifest as an ItW-style list with undocumented attacks
    let manifest = dir.path().join("data/eval/manifest.tsv");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let itw: String = text
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split('\t').collect();
            if f[1] == "spoof" {
                f[2] = "-";
            }
            format!("{}\n", f.join("\t"))
        })
        .collect();
    let itw_manifest = dir.path().join("data/eval/itw.tsv");
    std::fs::write(&itw_manifest, itw).unwrap();
    let out = dir.path().join("itw");
    let ckpt = dir.path().join("run/best.ckpt");
    let args = ["eval", "--checkpoint", p(&ckpt), "--manifest", p(&itw_manifest), "--out-dir", p(&out)];
    assert_eq!(cli(&args), 0);
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("Pooled EER") && !report.contains("Per-attack"), "{report}");
    let first = std::fs::read(out.join("scores.tsv")).unwrap();
    assert_eq!(cli(&args), 0);
    assert_eq!(std::fs::read(out.join("scores.tsv")).unwrap(), first);
    // same checkpoint and trials as the labeled run
    assert_eq!(std::fs::read(eval_dir.join("scores.tsv")).unwrap(), first);
}

#[test]
fn report_picks_best_seed_and_builds_dataset_grid() {
    let dir = tempfile::tempdir().unwrap();
    gen_splits(&dir.path().join("data"), 4, 6, 4, 1.0, [(20, 20), (10, 10), (10, 10)], 200);
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let code = cli(&[
        "train", "--train", p(&data.join("train/manifest.tsv")), "--dev", p(&data.join("dev/manifest.tsv")),
        "--out-dir", p(&run), "--seed", "1", "--seed", "2", "--seed", "3", "--preset", "tiny", "--set", "train.epochs=2",
    ]);
    assert_eq!(code, 0);
    let summary = std::fs::read_to_string(run.join("summary.tsv")).unwrap();
    assert_eq!(summary.lines().count(), 5, "{summary}");
    for s in 1..=3 {
        assert!(run.join(format!("seed-{s}/train_log.tsv")).exists());
    }
    let mut evals = Vec::new();
    for split in ["dev", "eval"] {
        let out = dir.path().join(format!("ev-{split}"));
        let code = cli(&[
            "eval", "--checkpoint", p(&run.join("best.ckpt")), "--manifest", p(&data.join(format!("{split}/manifest.tsv"))),
            "--out-dir", p(&out), "--model-name", "M_T3",
        ]);
        assert_eq!(code, 0);
        evals.push(out);
    }
    let rep = dir.path().join("rep");
    let code = cli(&[
        "report", "--train-dir", p(&run), "--eval-dir", p(&evals[0]), "--eval-dir", p(&evals[1]), "--out-dir", p(&rep),
    ]);
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(rep.join("report.csv")).unwrap();
    assert!(csv.contains("model,dev,eval"), "{csv}");
    assert!(csv.lines().any(|l| l.starts_with("M_T3,")), "{csv}");
    assert_eq!(cli(&["report"]), EXIT_USAGE);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nonsem"))
}

fn run_bin_pipeline(work: &Path, seed_env: &str) {
    let data = work.join("data");
    for (split, n) in [("train", "30"), ("dev", "10"), ("eval", "10")] {
        let st = bin()
            .env("NONSEM_SEED", seed_env)
            .args(["gen-synthetic", "--out-dir", p(&data.join(split)), "--split", split, "--n-bonafide", n, "--n-spoof", n])
            .args(["--dim", "6", "--frames", "4", "--separation", "2"])
            .output()
            .unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    }
    let st = bin()
        .env("NONSEM_SEED", seed_env)
        .args(["train", "--train", p(&data.join("train/manifest.tsv")), "--dev", p(&data.join("dev/manifest.tsv"))])
        .args(["--out-dir", p(&work.join("run")), "--preset", "tiny", "--set", "train.epochs=3"])
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let st = bin()
        .args(["eval", "--checkpoint", p(&work.join("run/best.ckpt")), "--manifest", p(&data.join("eval/manifest.tsv"))])
        .args(["--out-dir", p(&work.join("eval"))])
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
}

#[test]
fn separate_processes_agree_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    run_bin_pipeline(&dir.path().join("a"), "42");
    run_bin_pipeline(&dir.path().join("b"), "42");
    for f in ["eval/scores.tsv", "run/seed-42/train_log.tsv", "run/train.resolved.cfg", "data/train/train_B_00003.emb"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let mut b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        if f.ends_with(".cfg") {
            // the snapshot names its own output directory
            b = String::from_utf8(b).unwrap().replace("/b/", "/a/").into_bytes();
        }
        assert_eq!(a, b, "{f}");
    }
    let snapshot = std::fs::read_to_string(dir.path().join("a/run/train.resolved.cfg")).unwrap();
    assert!(snapshot.contains("run.seeds=42"), "{snapshot}");
}

#[test]
fn binary_exit_codes() {
    let st = bin().args(["train", "--no-such-flag"]).output().unwrap();
    assert_eq!(st.status.code(), Some(1));
    let st = bin().arg("--help").output().unwrap();
    assert_eq!(st.status.code(), Some(0));
    let text = String::from_utf8_lossy(&st.stdout);
    for sub in ["extract", "gen-synthetic", "train", "eval", "sweep", "report"] {
        assert!(text.contains(sub), "{text}");
    }
    let dir = tempfile::tempdir().unwrap();
    let st = bin()
        .args(["eval", "--checkpoint", p(&dir.path().join("none.ckpt")), "--manifest", "x", "--out-dir", p(dir.path())])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
}
