use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DatasetSplit, TrialRecord};
use crate::error::{Error, Result};
use crate::features::{read_embedding_file, EmbeddingMatrix};
use crate::nn::Tensor;

/// Stacked inputs `[n, d, t]` with their labels and ids.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Tensor<f32>,
    pub labels: Vec<usize>,
    pub utt_ids: Vec<String>,
}

/// Record indices in the order visited during `epoch`.
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ epoch));
    order
}

/// Reads one trial's embedding, naming the trial on failure.
pub fn load_matrix(record: &TrialRecord) -> Result<EmbeddingMatrix> {
    read_embedding_file(&record.embedding_path).map_err(|e| Error::Load {
        utt_id: record.utt_id.clone(),
        path: record.embedding_path.clone(),
        source: Box::new(e),
    })
}

/// `[n, d, t]` tensor from matrices of identical shape.
pub fn stack_matrices(matrices: &[EmbeddingMatrix]) -> Result<Tensor<f32>> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::Validation("cannot stack an empty batch".into()))?;
    let (d, t) = (first.dim(), first.frames());
    let mut data = Vec::with_capacity(matrices.len() * d * t);
    for m in matrices {
        if (m.dim(), m.frames()) != (d, t) {
            return Err(Error::Validation(format!(
                "embedding shapes differ within a batch: {d} x {t} vs {} x {}",
                m.dim(),
                m.frames()
            )));
        }
        data.extend_from_slice(m.to_tensor().data());
    }
    Tensor::new([matrices.len(), d, t], data)
}

pub struct BatchIter<'a> {
    split: &'a DatasetSplit,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Result<Batch>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let records: Vec<&TrialRecord> = self.order[self.pos..end]
            .iter()
            .map(|&i| &self.split.records()[i])
            .collect();
        self.pos = end;
        Some(load_batch(&records))
    }
}

fn load_batch(records: &[&TrialRecord]) -> Result<Batch> {
    let matrices = records
        .par_iter()
        .map(|r| load_matrix(r))
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch {
        inputs: stack_matrices(&matrices)?,
        labels: records.iter().map(|r| r.label.index()).collect(),
        utt_ids: records.iter().map(|r| r.utt_id.clone()).collect(),
    })
}

/// Shuffled batches for one epoch. Pass `shuffle_seed = None` to keep split
/// order, as used for scoring.
pub fn batch_iterator(
    split: &DatasetSplit,
    batch_size: usize,
    shuffle_seed: Option<u64>,
    epoch: u64,
) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let order = match shuffle_seed {
        Some(seed) => epoch_order(split.len(), seed, epoch),
        None => (0..split.len()).collect(),
    };
    Ok(BatchIter {
        split,
        order,
        batch_size,
        pos: 0,
    })
}

/// Loads a whole split in order.
pub fn load_split(split: &DatasetSplit) -> Result<Vec<EmbeddingMatrix>> {
    split.records().par_iter().map(load_matrix).collect()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_synthetic_dataset, SyntheticSpec};
    use std::collections::BTreeSet;

    #[test]
    fn batches_of_64_64_2() {
        let dir = tempfile::tempdir().unwrap();
        let split = generate_synthetic_dataset(&SyntheticSpec::new(1, "train", 65, 65, 3, 2, 1.0), dir.path()).unwrap();
        let batches: Vec<Batch> = batch_iterator(&split, 64, Some(9), 0)
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(batches.iter().map(|b| b.labels.len()).collect::<Vec<_>>(), vec![64, 64, 2]);
        assert_eq!(batches[0].inputs.shape(), &[64, 3, 2]);
        let ids: BTreeSet<_> = batches.iter().flat_map(|b| b.utt_ids.clone()).collect();
        assert_eq!(ids.len(), 130);
        assert!(split.records().iter().all(|r| ids.contains(&r.utt_id)));
    }

    #[test]
    fn order_depends_on_seed_and_epoch() {
        assert_eq!(epoch_order(50, 3, 1), epoch_order(50, 3, 1));
        assert_ne!(epoch_order(50, 3, 1), epoch_order(50, 3, 2));
        let mut o = epoch_order(50, 3, 1);
        o.sort();
        assert_eq!(o, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn missing_file_names_trial() {
        let dir = tempfile::tempdir().unwrap();
        let split = generate_synthetic_dataset(&SyntheticSpec::new(1, "dev", 2, 2, 3, 2, 1.0), dir.path()).unwrap();
        let victim = &split.records()[1];
        std::fs::remove_file(&victim.embedding_path).unwrap();
        let err = batch_iterator(&split, 8, None, 0)
            .unwrap()
            .next()
            .unwrap()
            .unwrap_err();
        match err {
            Error::Load { utt_id, path, .. } => {
                assert_eq!(utt_id, victim.utt_id);
                assert_eq!(path, victim.embedding_path);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_batch_size_rejected() {
        let split = DatasetSplit::new("x", vec![]).unwrap();
        assert!(batch_iterator(&split, 0, None, 0).is_err());
    }
}
