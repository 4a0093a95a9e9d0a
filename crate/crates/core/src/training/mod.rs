//! The training recipe: weighted cross-entropy, Adam with exponential
//! learning-rate decay, per-epoch checkpoints and dev-EER model selection.

mod log;

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

pub use log::{parse_train_log, read_train_log, write_train_log, EpochRecord, TrainLog};

use crate::config::KvConfig;
use crate::datasets::{batch_iterator, load_matrix, stack_matrices, DatasetSplit, Label};
use crate::detector::{save_checkpoint, Checkpoint, DetectorModel, Mode};
use crate::error::{Error, Result};
use crate::metrics::{compute_eer, ScoreEntry, ScoreFile};
use crate::nn::{adam_step, AdamState, CeReduction, Graph};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Fractional decay applied after each epoch.
    pub decay: f64,
    /// `[spoof, bonafide]`
    pub class_weights: [f64; 2],
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub reduction: CeReduction,
    /// Where `best.ckpt` and `last.ckpt` go; nothing is written when `None`.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            lr0: 1e-4,
            decay: 0.05,
            class_weights: [0.1, 0.9],
            seed: 0,
            reduction: CeReduction::WeightedMean,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "epochs",
        "batch_size",
        "lr0",
        "decay",
        "weight_spoof",
        "weight_bonafide",
        "seed",
        "reduction",
    ];

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::Config(format!("decay must be in [0, 1), got {}", self.decay)));
        }
        if self.class_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("class weights must be positive, got {:?}", self.class_weights)));
        }
        Ok(())
    }

    /// Keys without the `train.` prefix. The checkpoint directory is an
    /// output path and not part of the recipe.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr0", format!("{:e}", self.lr0));
        kv.set("decay", self.decay);
        kv.set("weight_spoof", self.class_weights[0]);
        kv.set("weight_bonafide", self.class_weights[1]);
        kv.set("seed", self.seed);
        kv.set(
            "reduction",
            match self.reduction {
                CeReduction::WeightedMean => "weighted_mean",
                CeReduction::WeightedSumOverN => "sum_over_n",
            },
        );
        kv
    }

    pub fn apply_kv(mut self, kv: &KvConfig) -> Result<Self> {
        kv.reject_unknown(Self::KEYS, "train")?;
        if let Some(v) = kv.get_parsed("epochs")? {
            self.epochs = v;
        }
        if let Some(v) = kv.get_parsed("batch_size")? {
            self.batch_size = v;
        }
        if let Some(v) = kv.get_parsed("lr0")? {
            self.lr0 = v;
        }
        if let Some(v) = kv.get_parsed("decay")? {
            self.decay = v;
        }
        if let Some(v) = kv.get_parsed("weight_spoof")? {
            self.class_weights[0] = v;
        }
        if let Some(v) = kv.get_parsed("weight_bonafide")? {
            self.class_weights[1] = v;
        }
        if let Some(v) = kv.get_parsed("seed")? {
            self.seed = v;
        }
        match kv.get("reduction") {
            None => {}
            Some("weighted_mean") => self.reduction = CeReduction::WeightedMean,
            Some("sum_over_n") => self.reduction = CeReduction::WeightedSumOverN,
            Some(other) => {
                return Err(Error::Config(format!(
                    "train.reduction must be weighted_mean or sum_over_n, got {other:?}"
                )))
            }
        }
        self.validate()?;
        Ok(self)
    }
}

/// `lr0 · (1 − decay)^epoch`, epochs counted from 0.
pub fn lr_at_epoch(lr0: f64, decay: f64, epoch: usize) -> f64 {
    lr0 * (1.0 - decay).powi(epoch as i32)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model of the epoch with the lowest dev EER.
    pub best: Checkpoint,
    pub log: TrainLog,
}

fn check_dim(model: &DetectorModel<f32>, split: &DatasetSplit) -> Result<()> {
    let Some(first) = split.records().first() else {
        return Err(Error::Config(format!("split {} is empty", split.name)));
    };
    let m = load_matrix(first)?;
    let want = model.config().input_dim;
    if m.dim() != want {
        return Err(Error::Config(format!(
            "detector expects {want}-dimensional embeddings but split {} has {} ({})",
            split.name,
            m.dim(),
            first.utt_id
        )));
    }
    Ok(())
}

/// Eval-mode score for every trial of `split`, in split order. The model is
/// not modified.
pub fn evaluate_checkpoint(model: &DetectorModel<f32>, split: &DatasetSplit, batch_size: usize) -> Result<ScoreFile> {
    check_dim(model, split)?;
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let chunks: Vec<_> = split.records().chunks(batch_size).collect();
    let scored: Vec<Vec<ScoreEntry>> = chunks
        .par_iter()
        .map(|recs| {
            let mats = recs.iter().map(load_matrix).collect::<Result<Vec<_>>>()?;
            let scores = model.score_batch(stack_matrices(&mats)?)?;
            Ok(recs
                .iter()
                .zip(scores)
                .map(|(r, score)| ScoreEntry {
                    utt_id: r.utt_id.clone(),
                    score,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    ScoreFile::new(scored.into_iter().flatten().collect())
}

fn dev_eer(model: &DetectorModel<f32>, dev: &DatasetSplit, batch_size: usize) -> Result<f64> {
    let scores = evaluate_checkpoint(model, dev, batch_size)?;
    let (mut b, mut s) = (Vec::new(), Vec::new());
    for (e, r) in scores.entries().iter().zip(dev.records()) {
        match r.label {
            Label::Bonafide => b.push(e.score),
            Label::Spoof => s.push(e.score),
        }
    }
    Ok(compute_eer(&b, &s)?.eer)
}

fn at(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

/// Runs the full recipe on `model`, which ends holding the last epoch's
/// weights. Checkpoints are written after every epoch when configured.
pub fn train(
    model: &mut DetectorModel<f32>,
    train_split: &DatasetSplit,
    dev: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_split.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if dev.count(Label::Bonafide) == 0 || dev.count(Label::Spoof) == 0 {
        return Err(Error::Config(format!(
            "dev split {} must contain both classes to select on EER ({} bonafide, {} spoof)",
            dev.name,
            dev.count(Label::Bonafide),
            dev.count(Label::Spoof)
        )));
    }
    check_dim(model, train_split)?;
    check_dim(model, dev)?;
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut adam = AdamState::new(model.params());
    let mut log = TrainLog::default();
    let mut best: Option<Checkpoint> = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = lr_at_epoch(cfg.lr0, cfg.decay, epoch);
        let (mut loss_sum, mut seen) = (0.0f64, 0usize);
        for (bi, batch) in batch_iterator(train_split, cfg.batch_size, Some(cfg.seed), epoch as u64)?.enumerate() {
            let batch = batch?;
            let n = batch.labels.len();
            let mut g = Graph::new();
            let x = g.input(batch.inputs);
            let step = (|| {
                let logits = model.forward(&mut g, x, Mode::Train)?;
                let loss = g.weighted_cross_entropy(logits, &batch.labels, &cfg.class_weights, cfg.reduction)?;
                let value = g.value(loss).data()[0] as f64;
                model.params_mut().zero_grad();
                g.backward(loss, model.params_mut())?;
                adam_step(model.params_mut(), &mut adam, lr)?;
                Ok(value)
            })()
            .map_err(|e| at(epoch, bi, e))?;
            if !step.is_finite() {
                return Err(Error::Numeric(format!("epoch {epoch}, batch {bi}: loss is {step}")));
            }
            loss_sum += step * n as f64;
            seen += n;
        }
        let eer = dev_eer(model, dev, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            dev_eer: eer,
            seconds: started.elapsed().as_secs_f64(),
        };
        let improved = log.best().is_none_or(|b| eer < b.dev_eer);
        log.epochs.push(record);

        let mut ckpt = Checkpoint::new(model.clone());
        ckpt.meta.set("epoch", epoch);
        ckpt.meta.set("dev_eer", format!("{eer:e}"));
        ckpt.meta.set("seed", cfg.seed);
        if improved {
            best = Some(ckpt.clone());
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            if improved {
                save_checkpoint(&ckpt, &dir.join("best.ckpt"))?;
            }
            ckpt.adam = Some(adam.clone());
            save_checkpoint(&ckpt, &dir.join("last.ckpt"))?;
        }
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch"),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_synthetic_dataset, SyntheticSpec};
    use crate::detector::{load_checkpoint, DetectorConfig};

    #[test]
    fn lr_schedule() {
        assert_eq!(lr_at_epoch(1e-4, 0.05, 0), 1e-4);
        assert!((lr_at_epoch(1e-4, 0.05, 1) - 9.5e-5).abs() <= 1e-12 * 9.5e-5);
        assert!((lr_at_epoch(1e-4, 0.05, 2) - 9.025e-5).abs() <= 1e-12 * 9.025e-5);
    }

    #[test]
    fn config_kv_round_trip_and_validation() {
        let cfg = TrainConfig {
            epochs: 3,
            seed: 9,
            reduction: CeReduction::WeightedSumOverN,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::default().apply_kv(&cfg.to_kv()).unwrap(), cfg);
        let mut kv = KvConfig::new();
        kv.set("decay", 1.0);
        assert!(TrainConfig::default().apply_kv(&kv).is_err());
        let mut kv = KvConfig::new();
        kv.set("bogus", 1);
        assert!(TrainConfig::default().apply_kv(&kv).is_err());
    }

    fn data(dir: &std::path::Path, sep: f64) -> (DatasetSplit, DatasetSplit) {
        let tr = generate_synthetic_dataset(&SyntheticSpec::new(4, "train", 40, 40, 6, 4, sep), &dir.join("train")).unwrap();
        let dv = generate_synthetic_dataset(&SyntheticSpec::new(4, "dev", 10, 10, 6, 4, sep), &dir.join("dev")).unwrap();
        (tr, dv)
    }

    fn small_cfg(dir: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 16,
            lr0: 1e-3,
            seed: 1,
            checkpoint_dir: dir,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_class_dev_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let (tr, _) = data(dir.path(), 1.0);
        let dv = generate_synthetic_dataset(&SyntheticSpec::new(4, "dev", 5, 0, 6, 4, 1.0), &dir.path().join("d")).unwrap();
        let mut model = DetectorModel::new(DetectorConfig::tiny(6)).unwrap();
        assert!(matches!(train(&mut model, &tr, &dv, &small_cfg(None)), Err(Error::Config(_))));
    }

    #[test]
    fn dim_mismatch_names_both_dims() {
        let dir = tempfile::tempdir().unwrap();
        let (_, dv) = data(dir.path(), 1.0);
        let model = DetectorModel::new(DetectorConfig::tiny(8)).unwrap();
        match evaluate_checkpoint(&model, &dv, 4) {
            Err(Error::Config(m)) => assert!(m.contains('8') && m.contains('6'), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trains_logs_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let (tr, dv) = data(dir.path(), 2.0);
        let ck = dir.path().join("ck");
        let mut model = DetectorModel::new(DetectorConfig::tiny(6)).unwrap();
        let out = train(&mut model, &tr, &dv, &small_cfg(Some(ck.clone()))).unwrap();
        assert_eq!(out.log.epochs.len(), 3);
        for (e, r) in out.log.epochs.iter().enumerate() {
            assert_eq!(r.lr, lr_at_epoch(1e-3, 0.05, e));
        }
        let best = out.log.best().unwrap();
        // ties resolve to the earliest epoch
        assert!(out.log.epochs[..best.epoch].iter().all(|r| r.dev_eer > best.dev_eer));

        // the reloaded best checkpoint reproduces its dev EER exactly
        let loaded = load_checkpoint(&ck.join("best.ckpt")).unwrap();
        assert_eq!(dev_eer(&loaded.model, &dv, 7).unwrap(), best.dev_eer);
        assert!(load_checkpoint(&ck.join("last.ckpt")).unwrap().adam.is_some());

        // scoring is frozen and repeatable
        let a = evaluate_checkpoint(&out.best.model, &dv, 5).unwrap();
        let b = evaluate_checkpoint(&out.best.model, &dv, 20).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
    }

    #[test]
    fn same_seed_same_log() {
        let dir = tempfile::tempdir().unwrap();
        let (tr, dv) = data(dir.path(), 1.0);
        let run = || {
            let mut model = DetectorModel::new(DetectorConfig::tiny(6)).unwrap();
            train(&mut model, &tr, &dv, &small_cfg(None)).unwrap().log
        };
        assert_eq!(run().to_tsv(), run().to_tsv());
    }
}
