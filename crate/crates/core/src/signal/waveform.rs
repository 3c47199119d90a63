use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// All audio in this crate is mono 16 kHz.
pub const SAMPLE_RATE: u32 = 16_000;

/// A finite, non-empty mono sample sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, rate: u32) -> Result<Self> {
        ensure!(rate > 0, Error::InvalidArgument("sample rate must be positive".into()));
        ensure!(!samples.is_empty(), Error::TooShort { needed: 1, actual: 0 });
        ensure!(
            samples.iter().all(|s| s.is_finite()),
            Error::InvalidArgument("waveform contains non-finite samples".into())
        );
        Ok(Self { samples, rate })
    }

    /// Waveform at the default 16 kHz rate.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }

    /// Mean power over the whole signal.
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Copy of `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        ensure!(
            len >= 1 && start + len <= self.samples.len(),
            Error::InvalidArgument(format!(
                "slice [{start}, {}) outside waveform of {} samples",
                start + len,
                self.samples.len()
            ))
        );
        Ok(Self {
            samples: self.samples[start..start + len].to_vec(),
            rate: self.rate,
        })
    }

    pub fn truncated(&self, len: usize) -> Result<Self> {
        self.slice(0, len)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            rate: self.rate,
        }
    }
}

/// Fixed-length chunking used for training (2 s, non-overlapping by default).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkSpec {
    pub duration_seconds: f64,
    pub hop_seconds: f64,
}

impl Default for ChunkSpec {
    fn default() -> Self {
        Self {
            duration_seconds: 2.0,
            hop_seconds: 2.0,
        }
    }
}

impl ChunkSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.duration_seconds > 0.0 && self.duration_seconds.is_finite(),
            Error::InvalidConfig("chunk duration must be positive".into())
        );
        ensure!(
            self.hop_seconds > 0.0 && self.hop_seconds.is_finite(),
            Error::InvalidConfig("chunk hop must be positive".into())
        );
        Ok(())
    }

    /// Chunk length C in samples.
    pub fn chunk_len(&self, rate: u32) -> usize {
        (self.duration_seconds * rate as f64).round() as usize
    }

    pub fn hop_len(&self, rate: u32) -> usize {
        (self.hop_seconds * rate as f64).round() as usize
    }
}
