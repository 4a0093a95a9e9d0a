use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const MAX_SECONDS: u32 = 6;
/// Fixed utterance length after normalization.
pub const TARGET_SAMPLES: usize = (SAMPLE_RATE * MAX_SECONDS) as usize;

/// How short utterances are filled up to [`TARGET_SAMPLES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PadMode {
    /// Repeat the whole signal from its start.
    #[default]
    Cyclic,
    Zero,
}

impl std::str::FromStr for PadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyclic" => Ok(PadMode::Cyclic),
            "zero" => Ok(PadMode::Zero),
            other => Err(Error::Usage(format!("unknown pad mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for PadMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PadMode::Cyclic => "cyclic",
            PadMode::Zero => "zero",
        })
    }
}

/// Truncates or pads to exactly [`TARGET_SAMPLES`].
pub fn normalize_length(samples: &[f32], pad: PadMode) -> Result<Vec<f32>> {
    if samples.is_empty() {
        return Err(Error::InvalidAudio("empty waveform".into()));
    }
    if samples.len() >= TARGET_SAMPLES {
        return Ok(samples[..TARGET_SAMPLES].to_vec());
    }
    let out = match pad {
        PadMode::Cyclic => samples.iter().copied().cycle().take(TARGET_SAMPLES).collect(),
        PadMode::Zero => {
            let mut v = samples.to_vec();
            v.resize(TARGET_SAMPLES, 0.0);
            v
        }
    };
    Ok(out)
}

fn window_samples(window_ms: u32) -> Result<usize> {
    let total_ms = MAX_SECONDS * 1000;
    if window_ms == 0 || !total_ms.is_multiple_of(window_ms) {
        return Err(Error::Config(format!(
            "window of {window_ms} ms does not divide {total_ms} ms"
        )));
    }
    Ok((window_ms * SAMPLE_RATE / 1000) as usize)
}

/// Non-overlapping consecutive chunks of `window_ms`.
pub fn chunk_waveform(samples: &[f32], window_ms: u32) -> Result<Vec<&[f32]>> {
    chunk_waveform_with_stride(samples, window_ms, window_ms)
}

/// Chunks of `window_ms` starting every `stride_ms`; a trailing partial
/// chunk is dropped.
pub fn chunk_waveform_with_stride(samples: &[f32], window_ms: u32, stride_ms: u32) -> Result<Vec<&[f32]>> {
    let win = window_samples(window_ms)?;
    if stride_ms == 0 {
        return Err(Error::Config("chunk stride must be positive".into()));
    }
    let stride = (stride_ms * SAMPLE_RATE / 1000) as usize;
    if samples.len() < win {
        return Err(Error::InvalidAudio(format!(
            "{} samples is shorter than one {window_ms} ms window",
            samples.len()
        )));
    }
    Ok((0..=(samples.len() - win) / stride)
        .map(|i| &samples[i * stride..i * stride + win])
        .collect())
}

/// Reads mono 16 kHz 16-bit PCM, scaled to [-1, 1).
pub fn read_wav(path: &Path) -> Result<Vec<f32>> {
    let bad = |m: String| Error::InvalidAudio(format!("{}: {m}", path.display()));
    let reader = hound::WavReader::open(path).map_err(|e| bad(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(bad(format!("expected mono, got {} channels", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(bad(format!("expected {SAMPLE_RATE} Hz, got {}", spec.sample_rate)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(bad("expected 16-bit integer PCM".into()));
    }
    reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0).map_err(|e| bad(e.to_string())))
        .collect()
}
