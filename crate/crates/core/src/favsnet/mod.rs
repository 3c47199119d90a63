//! Frequency-domain baseline: the separator trunk driven by linear
//! magnitude spectra, emitting time-frequency masks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::avtasnet::{check_alignment, lips_tensor, SeparatorConfig, SeparatorTrunk};
use crate::error::{ensure, Error, Result};
use crate::lipnet::LipEmbeddingSeq;
use crate::masks::{apply_mask, PhaseSource, TFMask};
use crate::nn::{Checkpoint, GlobalLayerNorm, Init, Mode, ParamStore, PointwiseConv, Tensor};
use crate::real::Real;
use crate::signal::{stft, Spectrogram, Waveform};

pub const CHECKPOINT_KIND: &str = "favsnet";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FavsConfig {
    /// STFT window in samples.
    pub window: usize,
    /// STFT hop in samples.
    pub hop: usize,
    pub separator: SeparatorConfig,
}

impl Default for FavsConfig {
    fn default() -> Self {
        Self {
            window: 640,
            hop: 160,
            separator: SeparatorConfig::default(),
        }
    }
}

impl FavsConfig {
    pub fn desk() -> Self {
        Self {
            separator: SeparatorConfig::desk(),
            ..Self::default()
        }
    }

    pub fn input_dim(&self) -> usize {
        self.window / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.window >= 2 && self.window.is_multiple_of(2) && self.hop >= 1 && self.hop <= self.window,
            Error::InvalidConfig(format!("invalid STFT window {} / hop {}", self.window, self.hop))
        );
        self.separator.validate()
    }
}

/// Channel-major `[bins, frames]` magnitudes of a time-major spectrogram.
pub fn magnitude_channels<F: Real>(spec: &Spectrogram) -> Vec<F> {
    let (t, k) = spec.shape();
    let mag = spec.magnitude();
    let mut out = vec![F::zero(); t * k];
    for f in 0..t {
        for b in 0..k {
            out[b * t + f] = F::lit(mag[f * k + b]);
        }
    }
    out
}

/// Transposes a time-major `[frames, bins]` buffer to channel-major.
pub fn to_channel_major<F: Real>(values: &[f64], frames: usize, bins: usize) -> Vec<F> {
    let mut out = vec![F::zero(); values.len()];
    for f in 0..frames {
        for b in 0..bins {
            out[b * frames + f] = F::lit(values[f * bins + b]);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct FavsNet<F: Real = f32> {
    config: FavsConfig,
    store: ParamStore<F>,
    pub input_norm: GlobalLayerNorm<F>,
    pub input_proj: PointwiseConv<F>,
    pub trunk: SeparatorTrunk<F>,
    pub output: PointwiseConv<F>,
}

impl<F: Real> FavsNet<F> {
    pub fn new(config: FavsConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let bins = config.input_dim();
        let s = config.separator;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut store, &mut rng);
        let input_norm = GlobalLayerNorm::new(&mut init.sub("input_norm"), bins);
        let input_proj = PointwiseConv::new(&mut init.sub("input_proj"), bins, s.bottleneck, true);
        let trunk = SeparatorTrunk::new(&mut init.sub("trunk"), &s)?;
        let output = PointwiseConv::new(&mut init.sub("output"), s.bottleneck, bins, true);
        drop(init);
        Ok(Self {
            config,
            store,
            input_norm,
            input_proj,
            trunk,
            output,
        })
    }

    pub fn config(&self) -> FavsConfig {
        self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.store
    }

    /// `[B, bins, T]` magnitudes with `[B, 256, Tv]` embeddings to a
    /// `[B, bins, T]` mask in `(0, 1)`.
    pub fn forward_tensor(&self, magnitudes: &Tensor<F>, lips: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        let bins = self.config.input_dim();
        ensure!(
            magnitudes.dims() == 3 && magnitudes.shape()[1] == bins,
            Error::ShapeMismatch {
                expected: vec![1, bins, 0],
                actual: magnitudes.shape().to_vec(),
            }
        );
        let x = self.input_proj.forward(&self.input_norm.forward(magnitudes));
        let y = self.trunk.forward(&x, lips, mode)?;
        Ok(self.output.forward(&y).sigmoid())
    }

    /// Mask for one mixture spectrogram.
    pub fn favs_forward(&self, mixture: &Spectrogram, lips: &LipEmbeddingSeq) -> Result<TFMask> {
        let (t, k) = mixture.shape();
        ensure!(
            k == self.config.input_dim(),
            Error::ShapeMismatch {
                expected: vec![t, self.config.input_dim()],
                actual: vec![t, k],
            }
        );
        let mags = Tensor::new(magnitude_channels(mixture), &[1, k, t]);
        let mask = self.forward_tensor(&mags, &lips_tensor(lips), Mode::Eval)?.to_f64_vec();
        let mut values = vec![0.0; t * k];
        for b in 0..k {
            for f in 0..t {
                values[f * k + b] = mask[b * t + f];
            }
        }
        TFMask::new(values, t, k)
    }

    /// Extracts the target with the mixture's own or the target's phase.
    pub fn favs_separate(
        &self,
        mixture: &Waveform,
        lips: &LipEmbeddingSeq,
        phase: PhaseSource,
        oracle_target: Option<&Waveform>,
    ) -> Result<Waveform> {
        check_alignment(mixture.len(), mixture.rate(), lips.len())?;
        if phase == PhaseSource::Oracle {
            ensure!(
                oracle_target.is_some(),
                Error::InvalidArgument("oracle phase requires the target waveform".into())
            );
        }
        let spec = stft(mixture, self.config.window, self.config.hop)?;
        let mask = self.favs_forward(&spec, lips)?;
        reconstruct(
            mixture,
            &spec,
            &mask,
            phase,
            oracle_target,
            self.config.window,
            self.config.hop,
        )
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
        let config: FavsConfig = serde_json::from_value(ckpt.header.config.clone())
            .map_err(|e| Error::InvalidConfig(format!("favsnet config: {e}")))?;
        let net = Self::new(config, 0)?;
        ckpt.load_into(CHECKPOINT_KIND, &net.store)?;
        Ok(net)
    }
}

/// Applies a mask to the mixture spectrogram and resynthesises a waveform
/// of the mixture's length (samples past the last full frame are zero).
pub fn reconstruct(
    mixture: &Waveform,
    spec: &Spectrogram,
    mask: &TFMask,
    phase: PhaseSource,
    oracle_target: Option<&Waveform>,
    window: usize,
    hop: usize,
) -> Result<Waveform> {
    let oracle = match (phase, oracle_target) {
        (PhaseSource::Oracle, Some(t)) => Some(stft(t, window, hop)?),
        _ => None,
    };
    let out = apply_mask(spec, mask, phase, oracle.as_ref())?;
    let mut samples = out.into_samples();
    samples.resize(mixture.len(), 0.0);
    Waveform::new(samples, mixture.rate())
}
