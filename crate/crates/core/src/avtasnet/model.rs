//! The time-domain audio-visual extraction network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::lipnet::{FrameNorm, LipEmbeddingSeq, LipNet, EMBEDDING_DIM};
use crate::mixsim::{RawFrames, VIDEO_FPS};
use crate::nn::{Checkpoint, Conv1d, ConvTranspose1d, GlobalLayerNorm, Init, Mode, ParamStore, PointwiseConv, Tensor};
use crate::real::Real;
use crate::signal::Waveform;

use super::config::{EncoderConfig, SeparatorConfig};
use super::trunk::SeparatorTrunk;

pub const CHECKPOINT_KIND: &str = "avtasnet";
/// Largest tolerated audio/video duration difference.
pub const MAX_AV_SKEW_SECONDS: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvTasNetConfig {
    pub encoder: EncoderConfig,
    pub separator: SeparatorConfig,
}

impl AvTasNetConfig {
    pub fn desk() -> Self {
        Self {
            encoder: EncoderConfig::desk(),
            separator: SeparatorConfig::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.separator.validate()
    }
}

/// Checks that `samples` of audio and `frames` of video cover the same span.
pub fn check_alignment(samples: usize, rate: u32, frames: usize) -> Result<()> {
    let audio_seconds = samples as f64 / f64::from(rate);
    let video_seconds = frames as f64 / f64::from(VIDEO_FPS);
    ensure!(
        (audio_seconds - video_seconds).abs() <= MAX_AV_SKEW_SECONDS + 1e-9,
        Error::Misaligned {
            audio_seconds,
            video_seconds,
        }
    );
    Ok(())
}

/// Lip embeddings in the separator's `[1, 256, T]` layout.
pub fn lips_tensor<F: Real>(lips: &LipEmbeddingSeq) -> Tensor<F> {
    Tensor::new(lips.channel_major(), &[1, EMBEDDING_DIM, lips.len()])
}

#[derive(Debug, Clone)]
pub struct AvTasNet<F: Real = f32> {
    config: AvTasNetConfig,
    store: ParamStore<F>,
    pub encoder: Conv1d<F>,
    pub input_norm: GlobalLayerNorm<F>,
    pub input_proj: PointwiseConv<F>,
    pub trunk: SeparatorTrunk<F>,
    pub mask_head: PointwiseConv<F>,
    pub decoder: ConvTranspose1d<F>,
}

impl<F: Real> AvTasNet<F> {
    pub fn new(config: AvTasNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (e, s) = (config.encoder, config.separator);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut store, &mut rng);
        let encoder = Conv1d::new(&mut init.sub("encoder"), 1, e.basis_channels, e.kernel, e.stride);
        let input_norm = GlobalLayerNorm::new(&mut init.sub("input_norm"), e.basis_channels);
        let input_proj = PointwiseConv::new(&mut init.sub("input_proj"), e.basis_channels, s.bottleneck, true);
        let trunk = SeparatorTrunk::new(&mut init.sub("trunk"), &s)?;
        let mask_head = PointwiseConv::new(&mut init.sub("mask_head"), s.bottleneck, e.basis_channels, true);
        let decoder = ConvTranspose1d::new(&mut init.sub("decoder"), e.basis_channels, 1, e.kernel, e.stride);
        drop(init);
        Ok(Self {
            config,
            store,
            encoder,
            input_norm,
            input_proj,
            trunk,
            mask_head,
            decoder,
        })
    }

    pub fn config(&self) -> AvTasNetConfig {
        self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.store
    }

    /// `[B, L]` waveforms to non-negative `[B, N, T]` basis weights.
    pub fn encode(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let [b, l] = *x.shape() else {
            return Err(Error::ShapeMismatch {
                expected: vec![1, 0],
                actual: x.shape().to_vec(),
            });
        };
        self.config.encoder.frames(l)?;
        Ok(self.encoder.forward(&x.reshape(&[b, 1, l])).relu())
    }

    /// `[B, N, T]` to `[B, (T − 1)·S + K]`.
    pub fn decode(&self, w: &Tensor<F>) -> Result<Tensor<F>> {
        let n = self.config.encoder.basis_channels;
        ensure!(
            w.dims() == 3 && w.shape()[1] == n && w.shape()[2] >= 1,
            Error::ShapeMismatch {
                expected: vec![1, n, 1],
                actual: w.shape().to_vec(),
            }
        );
        let y = self.decoder.forward(w);
        let s = y.shape().to_vec();
        Ok(y.reshape(&[s[0], s[2]]))
    }

    /// Mask over the basis weights from encoded audio and lip embeddings.
    pub fn separate(&self, w: &Tensor<F>, lips: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        let x = self.input_proj.forward(&self.input_norm.forward(w));
        let y = self.trunk.forward(&x, lips, mode)?;
        Ok(self.mask_head.forward(&y).relu())
    }

    /// Batched waveform-to-waveform pass: `[B, L]` mixtures with
    /// `[B, 256, Tv]` embeddings give `[B, (T − 1)·S + K]` estimates.
    pub fn forward_tensor(&self, mixture: &Tensor<F>, lips: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        let w = self.encode(mixture)?;
        let m = self.separate(&w, lips, mode)?;
        self.decode(&w.mul(&m))
    }

    /// Target estimate with the mixture's length. Inputs whose length does
    /// not fit the encoder hop are zero padded and the output trimmed.
    pub fn extract(&self, mixture: &Waveform, lips: &LipEmbeddingSeq) -> Result<Waveform> {
        check_alignment(mixture.len(), mixture.rate(), lips.len())?;
        let enc = self.config.encoder;
        let len = mixture.len();
        let frames = enc.frames(len)?;
        let padded = if enc.decoded_len(frames) == len {
            len
        } else {
            enc.decoded_len(frames + 1)
        };
        let mut data: Vec<F> = mixture.samples().iter().map(|&v| F::lit(v)).collect();
        data.resize(padded, F::zero());
        let x = Tensor::new(data, &[1, padded]);
        let y = self.forward_tensor(&x, &lips_tensor(lips), Mode::Eval)?;
        let out: Vec<f64> = y.to_f64_vec().into_iter().take(len).collect();
        Waveform::new(out, mixture.rate())
    }

    pub fn checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        Checkpoint::from_store(
            CHECKPOINT_KIND,
            serde_json::to_value(self.config).expect("config serialises"),
            meta,
            &self.store,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: AvTasNetConfig = serde_json::from_value(ckpt.header.config.clone())
            .map_err(|e| Error::InvalidConfig(format!("avtasnet config: {e}")))?;
        let net = Self::new(config, 0)?;
        ckpt.load_into(CHECKPOINT_KIND, &net.store)?;
        Ok(net)
    }
}

/// Full pipeline from raw lip frames: preprocessing, frozen embedding
/// extraction, then the separator.
pub fn forward(
    model: &AvTasNet<f32>,
    lipnet: &LipNet<f32>,
    norm: &FrameNorm,
    mixture: &Waveform,
    frames: &RawFrames,
) -> Result<Waveform> {
    check_alignment(mixture.len(), mixture.rate(), frames.len())?;
    let seq = crate::lipnet::preprocess_frames(frames, norm)?;
    let lips = lipnet.extract_embeddings(&seq)?;
    model.extract(mixture, &lips)
}
