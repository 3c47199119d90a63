//! Training chunks with cached lip embeddings.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::lipnet::{preprocess_frames, FrameNorm, LipEmbeddingSeq, LipNet};
use crate::mixsim::{MixtureExample, SAMPLES_PER_FRAME};
use crate::signal::ChunkSpec;

/// A mixture with its target and the frozen embeddings of the target's lips.
#[derive(Debug, Clone)]
pub struct PreparedRecord {
    pub example: MixtureExample,
    pub lips: LipEmbeddingSeq,
}

/// Runs the frozen extractor once per record.
pub fn prepare_records(
    examples: Vec<MixtureExample>,
    lipnet: &LipNet<f32>,
    norm: &FrameNorm,
) -> Result<Vec<PreparedRecord>> {
    examples
        .into_iter()
        .map(|example| {
            let lips = lipnet.extract_embeddings(&preprocess_frames(&example.lips, norm)?)?;
            Ok(PreparedRecord { example, lips })
        })
        .collect()
}

/// One fixed-length training window.
#[derive(Debug, Clone)]
pub struct TrainChunk {
    /// `<mixture_id>@<start sample>`.
    pub id: String,
    pub mixture: Vec<f64>,
    pub target: Vec<f64>,
    pub lips: LipEmbeddingSeq,
}

/// Cuts every record into windows of `chunk` length at `chunk` hop.
/// Records shorter than one window contribute nothing.
pub fn make_chunks(records: &[PreparedRecord], chunk: &ChunkSpec) -> Result<Vec<TrainChunk>> {
    chunk.validate()?;
    let mut out = Vec::new();
    for r in records {
        let rate = r.example.mixture.rate();
        let len = chunk.chunk_len(rate);
        let hop = chunk.hop_len(rate);
        ensure!(
            len.is_multiple_of(SAMPLES_PER_FRAME),
            Error::InvalidConfig(format!("chunk of {len} samples does not cover whole video frames"))
        );
        let frames = len / SAMPLES_PER_FRAME;
        let total = r.example.mixture.len();
        let mut start = 0;
        while start + len <= total {
            let f0 = (start as f64 / SAMPLES_PER_FRAME as f64).round() as usize;
            if f0 + frames > r.lips.len() {
                break;
            }
            out.push(TrainChunk {
                id: format!("{}@{start}", r.example.mixture_id),
                mixture: r.example.mixture.samples()[start..start + len].to_vec(),
                target: r.example.target().samples()[start..start + len].to_vec(),
                lips: r.lips.window(f0, frames)?,
            });
            start += hop;
        }
    }
    Ok(out)
}

/// Deterministic visiting order of `n` items for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blended_epoch_visits_every_record_once() {
        // 10 two-speaker records followed by 30 three-speaker records
        let order = epoch_order(40, 3, 0);
        assert_eq!(order.len(), 40);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..40).collect::<Vec<_>>());
        assert_eq!(order.iter().filter(|&&i| i < 10).count(), 10);
        assert_ne!(order, epoch_order(40, 3, 1));
        assert_eq!(order, epoch_order(40, 3, 0));
    }
}
