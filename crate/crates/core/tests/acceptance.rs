//! One PASS/FAIL line per acceptance criterion, written straight to stderr
//! so it shows up without `--nocapture`.

mod common;

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{cli, gen_splits, p, pipeline, pooled_eer};
use nonsem::datasets::{format_manifest, parse_manifest, DatasetSplit, Label, TrialRecord};
use nonsem::detector::{decode_checkpoint, encode_checkpoint, Checkpoint, DetectorConfig, DetectorModel, Mode};
use nonsem::features::{chunk_waveform, decode_embedding, encode_embedding, normalize_length, EmbeddingMatrix, PadMode, STANDARD_WINDOWS_MS};
use nonsem::metrics::{compute_eer, format_scores, parse_scores, ScoreEntry, ScoreFile};
use nonsem::nn::{AdamState, CeReduction, Graph, Tensor};
use nonsem::training::read_train_log;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- gradients

fn detector_loss(model: &mut DetectorModel<f64>, x: &Tensor<f64>, labels: &[usize], grad: bool) -> f64 {
    let mut g = if grad { Graph::new() } else { Graph::no_grad() };
    let xv = g.input(x.clone());
    let logits = model.forward(&mut g, xv, Mode::Train).unwrap();
    let loss = g
        .weighted_cross_entropy(logits, labels, &[0.1, 0.9], CeReduction::WeightedMean)
        .unwrap();
    let value = g.value(loss).data()[0];
    if grad {
        model.params_mut().zero_grad();
        g.backward(loss, model.params_mut()).unwrap();
    }
    value
}

/// Worst relative error over `coords` random parameter coordinates.
fn gradcheck_detector(use_delta: bool, coords: usize, seed: u64) -> f64 {
    let cfg = DetectorConfig {
        use_delta,
        seed,
        ..DetectorConfig::tiny(8)
    };
    let mut model = DetectorModel::<f64>::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, t) = (4, 8, 5);
    let x = Tensor::new([n, d, t], (0..n * d * t).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let labels = [0, 1, 1, 0];
    detector_loss(&mut model, &x, &labels, true);
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.data().to_vec()).collect();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let n_params = model.params().len();
    for _ in 0..coords {
        let pi = rng.random_range(0..n_params);
        let len = analytic[pi].len();
        let ci = rng.random_range(0..len);
        let id = model.params().iter().nth(pi).map(|p| p.name.clone()).unwrap();
        let id = model.params().id_of(&id).unwrap();
        let orig = model.params().get(id).value.data()[ci];
        model.params_mut().get_mut(id).value.data_mut()[ci] = orig + h;
        let up = detector_loss(&mut model, &x, &labels, false);
        model.params_mut().get_mut(id).value.data_mut()[ci] = orig - h;
        let down = detector_loss(&mut model, &x, &labels, false);
        model.params_mut().get_mut(id).value.data_mut()[ci] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[pi][ci];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let direct = gradcheck_detector(false, 24, 11);
    let delta = gradcheck_detector(true, 24, 12);
    let secs = start.elapsed().as_secs_f64();
    let worst = direct.max(delta);
    ensure(worst <= 1e-3, || format!("worst relative error {worst:.3e} > 1e-3"))?;
    ensure(secs < 30.0, || format!("took {secs:.1}s >= 30s"))?;
    Ok(format!("48 coordinates (direct + delta), worst rel err {worst:.2e}, {secs:.2}s"))
}

// ---------------------------------------------------------------- delta

fn delta_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..200 {
        let (n, c, t) = (rng.random_range(1..4), rng.random_range(1..6), rng.random_range(2..12));
        let data: Vec<f32> = (0..n * c * t).map(|_| rng.random_range(-100.0..100.0)).collect();
        let mut g = Graph::<f32>::no_grad();
        let x = g.constant(Tensor::new([n, c, t], data.clone()).unwrap());
        let y = g.delta(x).map_err(|e| e.to_string())?;
        ensure(g.shape(y) == [n, c, t - 1], || format!("case {case}: shape {:?}", g.shape(y)))?;
        let out = g.value(y).data();
        for b in 0..n * c {
            for tau in 0..t - 1 {
                let want = data[b * t + tau + 1] - data[b * t + tau];
                ensure(out[b * (t - 1) + tau].to_bits() == want.to_bits(), || {
                    format!("case {case}: row {b} column {tau} differs")
                })?;
            }
        }
    }
    let mut g = Graph::<f32>::no_grad();
    let x = g.constant(Tensor::zeros([1, 2, 1]));
    ensure(g.delta(x).is_err(), || "single frame accepted".into())?;
    Ok("200 random tensors: exact differences, t shrinks by 1; t = 1 rejected".into())
}

// ---------------------------------------------------------------- EER

/// Brute force: FAR/FRR counted directly at every distinct score, every
/// midpoint and beyond both ends; linear interpolation at the first
/// non-positive FAR - FRR.
fn oracle_eer(b: &[f64], s: &[f64]) -> f64 {
    let mut pts: Vec<f64> = b.iter().chain(s).copied().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut grid = vec![pts[0] - 1.0];
    for w in pts.windows(2) {
        grid.extend([w[0], 0.5 * (w[0] + w[1])]);
    }
    grid.extend([pts[pts.len() - 1], pts[pts.len() - 1] + 1.0]);
    let rates = |th: f64| {
        (
            s.iter().filter(|&&x| x >= th).count() as f64 / s.len() as f64,
            b.iter().filter(|&&x| x < th).count() as f64 / b.len() as f64,
        )
    };
    let mut prev = rates(grid[0]);
    for &th in &grid[1..] {
        let (far, frr) = rates(th);
        let d = far - frr;
        if d == 0.0 {
            return far;
        }
        if d < 0.0 {
            let pd = prev.0 - prev.1;
            return prev.0 + pd / (pd - d) * (far - prev.0);
        }
        prev = (far, frr);
    }
    unreachable!()
}

fn eer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (nb, ns) = (rng.random_range(1..=50), rng.random_range(1..=50));
        let levels = rng.random_range(2..60) as f64;
        let b: Vec<f64> = (0..nb).map(|_| (rng.random::<f64>() * levels).floor() / levels + 0.1).collect();
        let s: Vec<f64> = (0..ns).map(|_| (rng.random::<f64>() * levels).floor() / levels).collect();
        let got = compute_eer(&b, &s).map_err(|e| e.to_string())?.eer;
        worst = worst.max((got - oracle_eer(&b, &s)).abs());
    }
    ensure(worst <= 1e-9, || format!("max deviation from oracle {worst:.3e}"))?;

    let mut max_shift: f64 = 0.0;
    for _ in 0..100 {
        let b: Vec<f64> = (0..rng.random_range(1..=50)).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s: Vec<f64> = (0..rng.random_range(1..=50)).map(|_| rng.random_range(-3.0..3.0)).collect();
        // random increasing piecewise-linear map through knots on [-3, 3]
        let mut xs: Vec<f64> = (0..rng.random_range(1..6)).map(|_| rng.random_range(-3.0..3.0)).collect();
        xs.extend([-3.0, 3.0]);
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let mut ys = vec![rng.random_range(-10.0..10.0)];
        for _ in 1..xs.len() {
            let last = *ys.last().unwrap();
            ys.push(last + rng.random_range(0.01..5.0));
        }
        let f = |v: f64| {
            let i = xs.partition_point(|&k| k <= v).clamp(1, xs.len() - 1);
            ys[i - 1] + (v - xs[i - 1]) * (ys[i] - ys[i - 1]) / (xs[i] - xs[i - 1])
        };
        let e0 = compute_eer(&b, &s).unwrap().eer;
        let fb: Vec<f64> = b.iter().map(|&v| f(v)).collect();
        let fs: Vec<f64> = s.iter().map(|&v| f(v)).collect();
        max_shift = max_shift.max((e0 - compute_eer(&fb, &fs).unwrap().eer).abs());
    }
    ensure(max_shift <= 1e-9, || format!("monotone map moved EER by {max_shift:.3e}"))?;
    Ok(format!("1000 instances, max |eer - oracle| {worst:.1e}; 100 monotone maps, max shift {max_shift:.1e}"))
}

// ---------------------------------------------------------------- end to end

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sep5 = pooled_eer(&pipeline(&dir.path().join("sep5"), 1, 5.0, 10));
    let sep0 = pooled_eer(&pipeline(&dir.path().join("sep0"), 1, 0.0, 10));
    let secs = start.elapsed().as_secs_f64();
    ensure(sep5 == 0.0, || format!("separation 5: eval EER {sep5}"))?;
    ensure((0.35..=0.65).contains(&sep0), || format!("separation 0: eval EER {sep0}"))?;
    ensure(secs < 300.0, || format!("took {secs:.0}s"))?;
    Ok(format!("separation 5 eval EER {sep5}, separation 0 eval EER {sep0}, {secs:.1}s"))
}

fn recipe_fidelity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    gen_splits(&data, 5, 4, 3, 1.0, [(8, 8), (4, 4), (4, 4)], 200);
    let code = cli(&[
        "train",
        "--train",
        p(&data.join("train/manifest.tsv")),
        "--dev",
        p(&data.join("dev/manifest.tsv")),
        "--out-dir",
        p(&dir.path().join("run")),
        "--seed",
        "5",
        "--preset",
        "tiny",
    ]);
    ensure(code == 0, || format!("train exited {code}"))?;
    let log = read_train_log(&dir.path().join("run/seed-5/train_log.tsv")).map_err(|e| e.to_string())?;
    ensure(log.epochs.len() == 50, || format!("{} epochs logged", log.epochs.len()))?;
    let mut expected = 1e-4f64;
    let mut worst: f64 = 0.0;
    for (e, r) in log.epochs.iter().enumerate() {
        ensure(r.epoch == e, || format!("epoch column {} at row {e}", r.epoch))?;
        worst = worst.max((r.lr - expected).abs() / expected);
        expected *= 0.95;
    }
    ensure(worst <= 1e-12, || format!("lr relative error {worst:.3e}"))?;

    let mut g = Graph::<f32>::new();
    let logits = g.input(Tensor::zeros([1, 2]));
    let loss = g
        .weighted_cross_entropy(logits, &[Label::Bonafide.index()], &[0.1, 0.9], CeReduction::WeightedMean)
        .map_err(|e| e.to_string())?;
    let v = g.value(loss).data()[0] as f64;
    let err = (v - std::f64::consts::LN_2).abs();
    ensure(err <= 1e-6, || format!("weighted CE {v} vs ln 2"))?;
    Ok(format!("lr column for e = 0..49 within {worst:.1e} relative; weighted CE {v:.7} (|err| {err:.1e})"))
}

fn chunk_arithmetic() -> Outcome {
    let expected = [(50u32, 120usize), (100, 60), (200, 30), (300, 20)];
    ensure(STANDARD_WINDOWS_MS.to_vec() == expected.map(|e| e.0).to_vec(), || "window set differs".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for len in [1usize, 8000, 95_999, 96_000, 140_000] {
        let wave: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        for pad in [PadMode::Cyclic, PadMode::Zero] {
            let norm = normalize_length(&wave, pad).map_err(|e| e.to_string())?;
            for (w, t) in expected {
                let chunks = chunk_waveform(&norm, w).map_err(|e| e.to_string())?;
                let total: usize = chunks.iter().map(|c| c.len()).sum();
                ensure(chunks.len() == t && chunks.len() * chunks[0].len() == 96_000 && total == 96_000, || {
                    format!("{w} ms on {len} samples: {} chunks of {}", chunks.len(), chunks[0].len())
                })?;
            }
        }
    }
    Ok("50/100/200/300 ms -> t = 120/60/30/20, count x size = 96000 for 5 input lengths x 2 pad modes".into())
}

// ---------------------------------------------------------------- formats

fn run_cases<S: Strategy>(name: &str, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: 200,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn format_round_trips() -> Outcome {
    run_cases(
        "EMB1",
        (1usize..=32, 1usize..=32, any::<u32>(), "[a-z0-9-]{0,12}", any::<u64>()),
        |(d, t, window, id, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..d * t)
                .map(|_| f32::from_bits(rng.random::<u32>()))
                .map(|v| if v.is_finite() { v } else { -0.0 })
                .collect();
            let m = EmbeddingMatrix::new(d, t, data, window, id).unwrap();
            let bytes = encode_embedding(&m);
            let back = decode_embedding(&bytes, Path::new("m")).unwrap();
            prop_assert_eq!(encode_embedding(&back), bytes);
            Ok(())
        },
    )?;

    run_cases(
        "checkpoint",
        (any::<u64>(), 1usize..6, 1usize..3, any::<bool>(), 0u64..1000),
        |(seed, d, heads, delta, step)| {
            let cfg = DetectorConfig {
                lstm_hidden: 3,
                projection_dim: 2 * heads,
                attention_heads: heads,
                mlp_hidden: 3,
                use_delta: delta,
                seed,
                ..DetectorConfig::new(d)
            };
            let mut model = DetectorModel::<f32>::new(cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for p in model.params_mut().iter_mut() {
                for v in p.value.data_mut() {
                    *v = rng.random_range(-3.0..3.0);
                }
            }
            for name in ["conv_block.bn1.running_mean", "conv_block.bn2.running_var"] {
                for v in model.running_stats_mut(name).unwrap() {
                    *v = rng.random_range(0.0..4.0);
                }
            }
            let mut adam = AdamState::new(model.params());
            adam.step = step;
            for m in adam.m.iter_mut().chain(adam.v.iter_mut()) {
                for v in m {
                    *v = rng.random();
                }
            }
            let mut ck = Checkpoint::new(model);
            ck.adam = Some(adam);
            ck.meta.set("epoch", step);
            let bytes = encode_checkpoint(&ck);
            let back = decode_checkpoint(&bytes, Path::new("c")).unwrap();
            prop_assert_eq!(back.adam.as_ref(), ck.adam.as_ref());
            for (a, b) in back.model.params().iter().zip(ck.model.params().iter()) {
                prop_assert_eq!(&a.name, &b.name);
                let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(&a.value), bits(&b.value));
            }
            prop_assert_eq!(encode_checkpoint(&back), bytes);
            Ok(())
        },
    )?;

    run_cases(
        "scores",
        proptest::collection::vec(("[A-Za-z0-9_]{1,12}", any::<u64>()), 1..300),
        |raw| {
            let mut seen = HashSet::new();
            let entries: Vec<ScoreEntry> = raw
                .into_iter()
                .filter(|(id, _)| seen.insert(id.clone()))
                .map(|(utt_id, bits)| {
                    let v = f64::from_bits(bits);
                    ScoreEntry {
                        utt_id,
                        score: if v.is_finite() { v } else { 0.25 },
                    }
                })
                .collect();
            let s = ScoreFile::new(entries).unwrap();
            let text = format_scores(&s);
            let back = parse_scores(&text, Path::new("s")).unwrap();
            prop_assert_eq!(format_scores(&back), text);
            for (a, b) in back.entries().iter().zip(s.entries()) {
                prop_assert_eq!(a.score.to_bits(), b.score.to_bits());
            }
            Ok(())
        },
    )?;

    run_cases(
        "manifest",
        proptest::collection::vec(
            ("[A-Za-z0-9_]{1,12}", 0u8..3, "A[0-9]{2}", "[a-z0-9_/]{1,16}\\.emb"),
            1..60,
        ),
        |raw| {
            let mut seen = HashSet::new();
            let records: Vec<TrialRecord> = raw
                .into_iter()
                .filter(|r| seen.insert(r.0.clone()))
                .map(|(utt_id, kind, attack, path)| TrialRecord {
                    utt_id,
                    label: if kind == 0 { Label::Bonafide } else { Label::Spoof },
                    attack_id: match kind {
                        0 => None,
                        1 => Some(attack),
                        _ => Some(nonsem::datasets::UNKNOWN_ATTACK.to_string()),
                    },
                    speaker_id: None,
                    embedding_path: path.into(),
                    condition: None,
                })
                .collect();
            let split = DatasetSplit::new("m", records).unwrap();
            let text = format_manifest(&split);
            let back = parse_manifest(&text, "m").unwrap();
            prop_assert_eq!(&back, &split);
            prop_assert_eq!(format_manifest(&back), text);
            Ok(())
        },
    )?;
    Ok("EMB1, checkpoint, score file, manifest: 200 random cases each, bit-exact".into())
}

// ---------------------------------------------------------------- tables

fn table_shapes() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().join("root");
    for w in STANDARD_WINDOWS_MS {
        gen_splits(&root.join(format!("{w}ms")), 2, 8, (6000 / w) as usize, 3.0, [(24, 24), (8, 8), (13, 13)], w);
    }
    let out = dir.path().join("sweep");
    let code = cli(&[
        "sweep", "--root", p(&root), "--out-dir", p(&out), "--seed", "2", "--preset", "tiny", "--set", "train.epochs=2",
    ]);
    ensure(code == 0, || format!("sweep exited {code}"))?;
    let csv = std::fs::read_to_string(out.join("sweep.csv")).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = csv.lines().collect();
    ensure(lines.len() == 3 && lines[0] == "type,50ms,100ms,200ms,300ms", || format!("grid header/rows: {csv}"))?;
    ensure(lines[1].starts_with("Direct,") && lines[2].starts_with("Delta,"), || format!("row labels: {csv}"))?;
    ensure(lines[1..].iter().all(|l| l.split(',').count() == 5 && !l.contains(",-")), || format!("cells: {csv}"))?;
    ensure(csv.matches('*').count() == 1, || "best cell not marked once".into())?;

    let eval = dir.path().join("eval");
    let code = cli(&[
        "eval",
        "--checkpoint",
        p(&out.join("200ms-direct/best.ckpt")),
        "--manifest",
        p(&root.join("200ms/eval/manifest.tsv")),
        "--out-dir",
        p(&eval),
    ]);
    ensure(code == 0, || format!("eval exited {code}"))?;
    let report = std::fs::read_to_string(eval.join("report.csv")).map_err(|e| e.to_string())?;
    let header = report
        .lines()
        .find(|l| l.contains("A07"))
        .ok_or_else(|| format!("no per-attack table: {report}"))?;
    let attacks: Vec<&str> = header.split(',').skip(1).collect();
    let want: Vec<String> = (7..=19).map(|i| format!("A{i:02}")).collect();
    ensure(attacks == want, || format!("per-attack columns {attacks:?}"))?;
    Ok("sweep grid 2 x 4 (Direct/Delta x 50/100/200/300 ms), per-attack table with 13 columns A07..A19".into())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = pipeline(&dir.path().join("a"), 7, 5.0, 4);
    let b = pipeline(&dir.path().join("b"), 7, 5.0, 4);
    let read = |path: &Path| std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()));
    ensure(read(&a.join("scores.tsv"))? == read(&b.join("scores.tsv"))?, || "score files differ".into())?;
    let log = |root: &Path| root.parent().unwrap().join("run/seed-7/train_log.tsv");
    ensure(read(&log(&a))? == read(&log(&b))?, || "train logs differ".into())?;
    Ok("two seed-7 pipelines: identical scores.tsv and train_log.tsv".into())
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("gradient correctness", gradient_correctness),
        ("delta contract", delta_contract),
        ("EER oracle equivalence", eer_oracle),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("recipe fidelity", recipe_fidelity),
        ("chunk arithmetic", chunk_arithmetic),
        ("format round trips", format_round_trips),
        ("table shapes", table_shapes),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let line = match &outcome {
            Ok(detail) => format!("[PASS] {name}: {detail}\n"),
            Err(why) => {
                failed.push(name);
                format!("[FAIL] {name}: {why}\n")
            }
        };
        let _ = err.write_all(line.as_bytes());
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
