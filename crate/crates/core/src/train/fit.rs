//! The training loop.

use serde::{Deserialize, Serialize};

use crate::avtasnet::AvTasNet;
use crate::error::{ensure, Error, Result};
use crate::favsnet::{to_channel_major, FavsNet};
use crate::lipnet::EMBEDDING_DIM;
use crate::masks::psa_target;
use crate::nn::loss::{psa_loss, si_snr_loss};
use crate::nn::{clip_grad_norm, Adam, Checkpoint, Mode, ParamStore, Tensor};
use crate::signal::{stft, ChunkSpec, Waveform};

use super::data::{epoch_order, TrainChunk};
use super::schedule::{PlateauSchedule, ScheduleEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub lr_halve_patience: usize,
    pub early_stop_patience: usize,
    pub chunk: ChunkSpec,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 80,
            lr_halve_patience: 3,
            early_stop_patience: 6,
            chunk: ChunkSpec::default(),
            batch_size: 4,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.lr > 0.0 && self.lr.is_finite(),
            Error::InvalidConfig("learning rate must be positive".into())
        );
        ensure!(
            self.lr_halve_patience >= 1 && self.early_stop_patience >= self.lr_halve_patience,
            Error::InvalidConfig("patience values must be positive with early stop ≥ halving".into())
        );
        ensure!(
            self.max_epochs >= 1 && self.batch_size >= 1,
            Error::InvalidConfig("max_epochs and batch_size must be ≥ 1".into())
        );
        ensure!(
            self.grad_clip > 0.0,
            Error::InvalidConfig("grad_clip must be positive".into())
        );
        self.chunk.validate()
    }
}

/// A model the loop can optimise.
pub trait Trainable {
    fn params(&self) -> &ParamStore<f32>;

    /// Mean training objective over a batch of equal-length chunks.
    fn batch_loss(&self, batch: &[&TrainChunk], mode: Mode) -> Result<Tensor<f32>>;

    fn checkpoint(&self, meta: serde_json::Value) -> Checkpoint;
}

fn stack_lips(batch: &[&TrainChunk]) -> Result<Tensor<f32>> {
    let tv = batch[0].lips.len();
    ensure!(
        batch.iter().all(|c| c.lips.len() == tv),
        Error::InvalidArgument("chunks in a batch must share their frame count".into())
    );
    let data: Vec<f32> = batch.iter().flat_map(|c| c.lips.channel_major::<f32>()).collect();
    Ok(Tensor::new(data, &[batch.len(), EMBEDDING_DIM, tv]))
}

fn stack_audio(batch: &[&TrainChunk], pick: impl Fn(&TrainChunk) -> &[f64]) -> Result<(Vec<f32>, usize)> {
    let l = pick(batch[0]).len();
    ensure!(
        batch.iter().all(|c| pick(c).len() == l),
        Error::InvalidArgument("chunks in a batch must share their length".into())
    );
    Ok((
        batch.iter().flat_map(|c| pick(c).iter().map(|&v| v as f32)).collect(),
        l,
    ))
}

impl Trainable for AvTasNet<f32> {
    fn params(&self) -> &ParamStore<f32> {
        AvTasNet::params(self)
    }

    fn batch_loss(&self, batch: &[&TrainChunk], mode: Mode) -> Result<Tensor<f32>> {
        let (mix, l) = stack_audio(batch, |c| &c.mixture)?;
        let lips = stack_lips(batch)?;
        let est = self.forward_tensor(&Tensor::new(mix, &[batch.len(), l]), &lips, mode)?;
        let out_len = est.shape()[1];
        let targets: Vec<Vec<f32>> = batch
            .iter()
            .map(|c| c.target[..out_len].iter().map(|&v| v as f32).collect())
            .collect();
        si_snr_loss(&est, &targets)
    }

    fn checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        AvTasNet::checkpoint(self, meta)
    }
}

impl Trainable for FavsNet<f32> {
    fn params(&self) -> &ParamStore<f32> {
        FavsNet::params(self)
    }

    fn batch_loss(&self, batch: &[&TrainChunk], mode: Mode) -> Result<Tensor<f32>> {
        let cfg = self.config();
        let mut mags = Vec::new();
        let mut terms = Vec::new();
        let mut shape = None;
        for c in batch {
            let mix = stft(&Waveform::from_samples(c.mixture.clone())?, cfg.window, cfg.hop)?;
            let tgt = stft(&Waveform::from_samples(c.target.clone())?, cfg.window, cfg.hop)?;
            let (t, k) = mix.shape();
            ensure!(
                shape.is_none_or(|s| s == (t, k)),
                Error::InvalidArgument("chunks in a batch must share their length".into())
            );
            shape = Some((t, k));
            mags.extend(to_channel_major::<f32>(&mix.magnitude(), t, k));
            terms.extend(to_channel_major::<f32>(&psa_target(&mix, &tgt)?, t, k));
        }
        let (t, k) = shape.expect("non-empty batch");
        let mask = self.forward_tensor(
            &Tensor::new(mags.clone(), &[batch.len(), k, t]),
            &stack_lips(batch)?,
            mode,
        )?;
        psa_loss(&mask, &mags, &terms)
    }

    fn checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        FavsNet::checkpoint(self, meta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Snapshot of the best-validation weights; the model is also left
    /// holding them.
    pub checkpoint: Checkpoint,
}

/// `epoch,train_loss,val_loss,lr` rows.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,lr\n");
    for r in history {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.lr));
    }
    s
}

/// Mean loss over fixed validation chunks in evaluation mode.
pub fn validation_loss<M: Trainable + ?Sized>(model: &M, chunks: &[TrainChunk], batch_size: usize) -> Result<f64> {
    ensure!(
        !chunks.is_empty(),
        Error::InvalidArgument("no validation chunks".into())
    );
    let mut total = 0.0;
    for batch in chunks.chunks(batch_size.max(1)) {
        let refs: Vec<&TrainChunk> = batch.iter().collect();
        total += model.batch_loss(&refs, Mode::Eval)?.item() as f64 * batch.len() as f64;
    }
    Ok(total / chunks.len() as f64)
}

/// Adam with global-norm clipping, plateau halving and early stopping.
/// Every epoch visits all training chunks in a seeded order; the weights
/// with the lowest validation loss are kept.
pub fn train<M: Trainable + ?Sized>(
    model: &M,
    train_chunks: &[TrainChunk],
    val_chunks: &[TrainChunk],
    cfg: &TrainConfig,
    meta: serde_json::Value,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    ensure!(
        !train_chunks.is_empty(),
        Error::InvalidArgument("no training chunks".into())
    );
    let store = model.params();
    let mut opt = Adam::new(cfg.lr);
    let mut schedule = PlateauSchedule::new(cfg.lr, cfg.lr_halve_patience, cfg.early_stop_patience);
    let mut history = Vec::new();
    let mut best = (0, f64::INFINITY, store.snapshot());
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let lr = schedule.lr();
        opt.lr = lr;
        let order = epoch_order(train_chunks.len(), cfg.seed, epoch);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainChunk> = idx.iter().map(|&i| &train_chunks[i]).collect();
            store.zero_grad();
            let loss = model.batch_loss(&batch, Mode::Train)?;
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch_ids: batch.iter().map(|c| c.id.clone()).collect(),
                });
            }
            loss.backward();
            clip_grad_norm(store, cfg.grad_clip);
            opt.step(store);
            total += value * batch.len() as f64;
        }
        let val_loss = validation_loss(model, val_chunks, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch_ids: val_chunks.iter().map(|c| c.id.clone()).collect(),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: total / train_chunks.len() as f64,
            val_loss,
            lr,
        });
        let event = schedule.observe(val_loss);
        if event == ScheduleEvent::Improved {
            best = (epoch, val_loss, store.snapshot());
        }
        if event == ScheduleEvent::Stop {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_val_loss, weights) = best;
    store.restore(&weights);
    let mut meta = meta;
    if let Some(obj) = meta.as_object_mut() {
        obj.insert("best_epoch".into(), best_epoch.into());
        obj.insert("best_val_loss".into(), best_val_loss.into());
    }
    Ok(TrainOutcome {
        checkpoint: model.checkpoint(meta),
        history,
        best_epoch,
        best_val_loss,
        stopped_early,
    })
}
