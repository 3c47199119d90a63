//! Supervised pre-training of the extractor.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::loss::cross_entropy;
use crate::nn::{clip_grad_norm, Adam, Mode, Tensor};

use super::labels::ClipLabels;
use super::model::{ClassifierHead, LipNet, TargetInventory};
use super::preprocess::{FrameSequence, INPUT_SIZE, MIN_FRAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LipTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for LipTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 8,
            lr: 1e-3,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub frames: FrameSequence,
    pub labels: ClipLabels,
}

/// Mean training loss of every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LipTrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Trains extractor and head jointly with cross-entropy: one loss per clip
/// for words, one per frame for phones. Only the extractor is meant to be
/// kept afterwards.
pub fn train_extractor(
    net: &LipNet<f32>,
    head: &ClassifierHead<f32>,
    clips: &[LabeledClip],
    config: &LipTrainConfig,
) -> Result<LipTrainReport> {
    ensure!(!clips.is_empty(), Error::InvalidArgument("no training clips".into()));
    ensure!(
        config.epochs >= 1 && config.batch_size >= 1 && config.lr > 0.0,
        Error::InvalidConfig("epochs, batch size and learning rate must be positive".into())
    );
    let inventory: TargetInventory = head.inventory();
    for clip in clips {
        ensure!(
            clip.frames.len() >= MIN_FRAMES,
            Error::TooShort {
                needed: MIN_FRAMES,
                actual: clip.frames.len(),
            }
        );
        clip.labels.validate(&inventory, clip.frames.len())?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net_opt = Adam::new(config.lr);
    let mut head_opt = Adam::new(config.lr);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            net.params().zero_grad();
            head.params().zero_grad();
            let mut batch_loss: Option<Tensor<f32>> = None;
            for &i in batch {
                let clip = &clips[i];
                let t = clip.frames.len();
                let x = Tensor::new(clip.frames.data().to_vec(), &[1, t, INPUT_SIZE, INPUT_SIZE]);
                let logits = head.forward(&net.forward(&x, Mode::Train), 1);
                let targets = match &clip.labels {
                    ClipLabels::Utterance(c) => vec![*c],
                    ClipLabels::PerFrame { labels, .. } => labels.clone(),
                };
                let loss = cross_entropy(&logits, &targets)?;
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(acc) => acc.add(&loss),
                });
            }
            let loss = batch_loss.expect("non-empty batch").scale(1.0 / batch.len() as f32);
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch_ids: batch.iter().map(|i| i.to_string()).collect(),
                });
            }
            loss.backward();
            clip_grad_norm(net.params(), config.grad_clip);
            clip_grad_norm(head.params(), config.grad_clip);
            net_opt.step(net.params());
            head_opt.step(head.params());
            total += value * batch.len() as f64;
        }
        epoch_losses.push(total / clips.len() as f64);
    }
    Ok(LipTrainReport { epoch_losses })
}
