use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlannerScalar;

use super::audio::{chunk_waveform, normalize_length, read_wav, PadMode};
use super::emb::{read_embedding_file, EmbeddingMatrix};
use crate::error::{Error, Result};

const SPECTRAL_BANDS: usize = 8;
/// mean, log energy, zero-crossing rate, band log energies
const NUM_STATS: usize = 3 + SPECTRAL_BANDS;

/// Anything that maps one waveform chunk to a fixed-size vector.
pub trait ChunkEmbedder {
    fn dim(&self) -> usize;
    fn id(&self) -> &str;
    fn embed(&self, chunk: &[f32]) -> Result<Vec<f32>>;
}

/// Where utterance embeddings come from.
#[derive(Debug, Clone, PartialEq)]
pub enum FrontendSpec {
    /// `EMB1` files named `<utt_id>.emb` under `root`, produced by an
    /// external extractor.
    Precomputed { root: PathBuf },
    Synthetic { seed: u64, dim: usize },
}

impl FrontendSpec {
    pub fn id(&self) -> String {
        match self {
            FrontendSpec::Precomputed { .. } => "precomputed".into(),
            FrontendSpec::Synthetic { .. } => SyntheticFrontend::ID.into(),
        }
    }

    /// Embedding matrix for one utterance. `audio` is required by the
    /// synthetic frontend and ignored by the precomputed one.
    pub fn embed_utterance(
        &self,
        utt_id: &str,
        audio: Option<&Path>,
        window_ms: u32,
        pad: PadMode,
    ) -> Result<EmbeddingMatrix> {
        match self {
            FrontendSpec::Precomputed { root } => {
                let m = read_embedding_file(&root.join(format!("{utt_id}.emb")))?;
                if m.window_ms != window_ms {
                    return Err(Error::Frontend(format!(
                        "{utt_id}: precomputed window {} ms, requested {window_ms} ms",
                        m.window_ms
                    )));
                }
                Ok(m)
            }
            FrontendSpec::Synthetic { seed, dim } => {
                let path = audio.ok_or_else(|| {
                    Error::Frontend(format!("{utt_id}: synthetic frontend needs audio"))
                })?;
                let samples = normalize_length(&read_wav(path)?, pad)?;
                let chunks = chunk_waveform(&samples, window_ms)?;
                build_matrix(&chunks, &SyntheticFrontend::new(*seed, *dim)?, window_ms)
            }
        }
    }
}

/// Deterministic stand-in for a pretrained extractor: chunk statistics
/// pushed through a seeded random projection and L2-normalized.
#[derive(Debug, Clone)]
pub struct SyntheticFrontend {
    dim: usize,
    /// `dim × (NUM_STATS + 1)`, last column is the offset
    projection: Vec<f64>,
}

impl SyntheticFrontend {
    pub const ID: &'static str = "synthetic-v1";

    pub fn new(seed: u64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("synthetic frontend dimension must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..dim * (NUM_STATS + 1))
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Ok(SyntheticFrontend { dim, projection })
    }
}

impl ChunkEmbedder for SyntheticFrontend {
    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> &str {
        Self::ID
    }

    fn embed(&self, chunk: &[f32]) -> Result<Vec<f32>> {
        if chunk.is_empty() {
            return Err(Error::InvalidAudio("empty chunk".into()));
        }
        let stats = chunk_stats(chunk);
        let w = NUM_STATS + 1;
        let mut v: Vec<f64> = (0..self.dim)
            .map(|j| {
                let row = &self.projection[j * w..(j + 1) * w];
                row[NUM_STATS] + row[..NUM_STATS].iter().zip(&stats).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            v.iter_mut().for_each(|x| *x /= norm);
        } else {
            v.fill(0.0);
            v[0] = 1.0;
        }
        Ok(v.into_iter().map(|x| x as f32).collect())
    }
}

fn chunk_stats(chunk: &[f32]) -> [f64; NUM_STATS] {
    let n = chunk.len() as f64;
    let mean = chunk.iter().map(|&x| x as f64).sum::<f64>() / n;
    let energy = chunk.iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / n;
    let crossings = chunk
        .windows(2)
        .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
        .count() as f64;
    let zcr = if chunk.len() > 1 { crossings / (n - 1.0) } else { 0.0 };

    let mut buf: Vec<Complex<f64>> = chunk.iter().map(|&x| Complex::new(x as f64, 0.0)).collect();
    FftPlannerScalar::new().plan_fft_forward(buf.len()).process(&mut buf);
    let bins = buf.len() / 2 + 1;
    let mut bands = [0.0f64; SPECTRAL_BANDS];
    for (k, c) in buf[..bins].iter().enumerate() {
        let band = (k * SPECTRAL_BANDS / bins).min(SPECTRAL_BANDS - 1);
        bands[band] += c.norm_sqr() / (n * n);
    }

    let mut stats = [0.0; NUM_STATS];
    stats[0] = mean;
    stats[1] = energy.ln_1p();
    stats[2] = zcr;
    for (s, b) in stats[3..].iter_mut().zip(bands) {
        *s = b.ln_1p();
    }
    stats
}

/// Embedding of one chunk with the synthetic frontend.
pub fn synthetic_frontend(chunk: &[f32], seed: u64, dim: usize) -> Result<Vec<f32>> {
    SyntheticFrontend::new(seed, dim)?.embed(chunk)
}

/// Stacks per-chunk embeddings in temporal order.
pub fn build_matrix<E: ChunkEmbedder + ?Sized>(
    chunks: &[&[f32]],
    frontend: &E,
    window_ms: u32,
) -> Result<EmbeddingMatrix> {
    if chunks.is_empty() {
        return Err(Error::InvalidAudio("no chunks to embed".into()));
    }
    let d = frontend.dim();
    let mut data = Vec::with_capacity(d * chunks.len());
    for (tau, chunk) in chunks.iter().enumerate() {
        let v = frontend.embed(chunk)?;
        if v.len() != d {
            return Err(Error::Frontend(format!(
                "{} returned {} values for chunk {tau}, expected {d}",
                frontend.id(),
                v.len()
            )));
        }
        data.extend(v);
    }
    EmbeddingMatrix::new(d, chunks.len(), data, window_ms, frontend.id())
}
