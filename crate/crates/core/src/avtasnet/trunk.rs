//! Separator building blocks shared by the time- and frequency-domain
//! models.

use crate::error::{ensure, Error, Result};
use crate::lipnet::EMBEDDING_DIM;
use crate::nn::ops::{concat_channels, gather_time};
use crate::nn::{BatchNorm, DepthwiseConv, GlobalLayerNorm, Init, Mode, PRelu, PointwiseConv, Tensor};
use crate::real::Real;

use super::config::{NormKind, SeparatorConfig};

#[derive(Debug, Clone)]
pub enum Norm<F: Real> {
    Batch(BatchNorm<F>),
    GlobalLayer(GlobalLayerNorm<F>),
}

impl<F: Real> Norm<F> {
    pub fn new(init: &mut Init<'_, F>, kind: NormKind, channels: usize) -> Self {
        match kind {
            NormKind::Bn => Norm::Batch(BatchNorm::new(init, channels)),
            NormKind::Gln => Norm::GlobalLayer(GlobalLayerNorm::new(init, channels)),
        }
    }

    pub fn forward(&self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        match self {
            Norm::Batch(bn) => bn.forward(x, mode),
            Norm::GlobalLayer(gln) => gln.forward(x),
        }
    }
}

/// 1×1 expand, PReLU, norm, dilated depthwise, PReLU, norm, 1×1 project,
/// plus the input.
#[derive(Debug, Clone)]
pub struct ConvBlock<F: Real> {
    pub expand: PointwiseConv<F>,
    pub act1: PRelu<F>,
    pub norm1: Norm<F>,
    pub depthwise: DepthwiseConv<F>,
    pub act2: PRelu<F>,
    pub norm2: Norm<F>,
    pub project: PointwiseConv<F>,
}

impl<F: Real> ConvBlock<F> {
    pub fn new(init: &mut Init<'_, F>, cfg: &SeparatorConfig, dilation: usize) -> Self {
        Self {
            expand: PointwiseConv::new(&mut init.sub("expand"), cfg.bottleneck, cfg.hidden, true),
            act1: PRelu::new(&mut init.sub("act1")),
            norm1: Norm::new(&mut init.sub("norm1"), cfg.norm, cfg.hidden),
            depthwise: DepthwiseConv::new(&mut init.sub("depthwise"), cfg.hidden, cfg.conv_kernel, dilation),
            act2: PRelu::new(&mut init.sub("act2")),
            norm2: Norm::new(&mut init.sub("norm2"), cfg.norm, cfg.hidden),
            project: PointwiseConv::new(&mut init.sub("project"), cfg.hidden, cfg.bottleneck, true),
        }
    }

    pub fn forward(&self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let y = self.norm1.forward(&self.act1.forward(&self.expand.forward(x)), mode);
        let y = self
            .norm2
            .forward(&self.act2.forward(&self.depthwise.forward(&y)), mode);
        x.add(&self.project.forward(&y))
    }
}

/// One dilated stack: sub-blocks with dilations 1, 2, 4, ...
#[derive(Debug, Clone)]
pub struct ConvStack<F: Real> {
    pub blocks: Vec<ConvBlock<F>>,
}

impl<F: Real> ConvStack<F> {
    pub fn new(init: &mut Init<'_, F>, cfg: &SeparatorConfig) -> Self {
        Self {
            blocks: (0..cfg.sub_blocks)
                .map(|d| ConvBlock::new(&mut init.sub(format!("block{d}")), cfg, 1 << d))
                .collect(),
        }
    }

    pub fn forward(&self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        self.blocks.iter().fold(x.clone(), |y, b| b.forward(&y, mode))
    }
}

fn check_channels<F: Real>(x: &Tensor<F>, channels: usize, what: &str) -> Result<()> {
    ensure!(
        x.dims() == 3 && x.shape()[1] == channels,
        Error::ShapeMismatch {
            expected: vec![x.shape().first().copied().unwrap_or(1), channels, 0],
            actual: x.shape().to_vec(),
        }
    );
    ensure!(
        x.shape()[2] >= 1,
        Error::InvalidArgument(format!("{what}: empty sequence"))
    );
    Ok(())
}

/// `n` consecutive dilated stacks over a `[B, bottleneck, T]` sequence.
pub fn conv_s_stack<F: Real>(
    stacks: &[ConvStack<F>],
    x: &Tensor<F>,
    cfg: &SeparatorConfig,
    mode: Mode,
) -> Result<Tensor<F>> {
    check_channels(x, cfg.bottleneck, "conv_s_stack")?;
    Ok(stacks.iter().fold(x.clone(), |y, s| s.forward(&y, mode)))
}

/// ReLU, batch norm, depthwise then pointwise convolution, plus the input.
#[derive(Debug, Clone)]
pub struct VideoBlock<F: Real> {
    pub norm: BatchNorm<F>,
    pub depthwise: DepthwiseConv<F>,
    pub pointwise: PointwiseConv<F>,
}

/// Temporal encoder for lip embeddings.
#[derive(Debug, Clone)]
pub struct VideoEncoder<F: Real> {
    pub input: PointwiseConv<F>,
    pub blocks: Vec<VideoBlock<F>>,
    pub output: PointwiseConv<F>,
}

impl<F: Real> VideoEncoder<F> {
    pub fn new(init: &mut Init<'_, F>, cfg: &SeparatorConfig) -> Self {
        let c = cfg.video_channels;
        let blocks = (0..cfg.video_blocks)
            .map(|i| {
                let mut b = init.sub(format!("block{i}"));
                VideoBlock {
                    norm: BatchNorm::new(&mut b.sub("norm"), c),
                    depthwise: DepthwiseConv::new(&mut b.sub("depthwise"), c, 3, 1),
                    pointwise: PointwiseConv::new(&mut b.sub("pointwise"), c, c, true),
                }
            })
            .collect();
        Self {
            input: PointwiseConv::new(&mut init.sub("input"), EMBEDDING_DIM, c, true),
            blocks,
            output: PointwiseConv::new(&mut init.sub("output"), c, cfg.bottleneck, true),
        }
    }

    /// `[B, 256, Tv] -> [B, bottleneck, Tv]`.
    pub fn forward(&self, v: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        self.forward_with(v, mode, true)
    }

    /// As [`forward`](Self::forward), optionally without the block skips.
    pub fn forward_with(&self, v: &Tensor<F>, mode: Mode, residual: bool) -> Result<Tensor<F>> {
        check_channels(v, EMBEDDING_DIM, "video_encode")?;
        let mut y = self.input.forward(v);
        for b in &self.blocks {
            let z = b.norm.forward(&y.relu(), mode);
            let z = b.pointwise.forward(&b.depthwise.forward(&z));
            y = if residual { y.add(&z) } else { z };
        }
        Ok(self.output.forward(&y))
    }
}

/// Time indices that stretch `video_len` steps onto `audio_len` steps:
/// each step repeated `round(audio_len / video_len)` times, then trimmed or
/// padded with the last step.
pub fn upsample_index(audio_len: usize, video_len: usize) -> Result<Vec<usize>> {
    ensure!(
        audio_len >= 1 && video_len >= 1,
        Error::InvalidArgument("fusion needs non-empty sequences".into())
    );
    let factor = ((audio_len as f64 / video_len as f64).round() as usize).max(1);
    Ok((0..audio_len).map(|i| (i / factor).min(video_len - 1)).collect())
}

/// Concatenates audio features with upsampled video features and projects
/// back to the bottleneck width.
#[derive(Debug, Clone)]
pub struct Fusion<F: Real> {
    pub proj: PointwiseConv<F>,
}

impl<F: Real> Fusion<F> {
    pub fn new(init: &mut Init<'_, F>, cfg: &SeparatorConfig) -> Self {
        Self {
            proj: PointwiseConv::new(&mut init.sub("proj"), 2 * cfg.bottleneck, cfg.bottleneck, true),
        }
    }

    pub fn forward(&self, audio: &Tensor<F>, video: &Tensor<F>) -> Result<Tensor<F>> {
        let c = self.proj.weight.shape()[0];
        check_channels(audio, c, "fuse")?;
        check_channels(video, c, "fuse")?;
        ensure!(
            audio.shape()[0] == video.shape()[0],
            Error::LengthMismatch {
                left: audio.shape()[0],
                right: video.shape()[0],
            }
        );
        let index = upsample_index(audio.shape()[2], video.shape()[2])?;
        let up = gather_time(video, &index);
        Ok(self.proj.forward(&concat_channels(audio, &up)))
    }
}

/// Video encoder, audio-only stacks, fusion and fused stacks.
#[derive(Debug, Clone)]
pub struct SeparatorTrunk<F: Real> {
    pub config: SeparatorConfig,
    pub video: VideoEncoder<F>,
    pub audio_stacks: Vec<ConvStack<F>>,
    pub fusion: Fusion<F>,
    pub fused_stacks: Vec<ConvStack<F>>,
}

impl<F: Real> SeparatorTrunk<F> {
    pub fn new(init: &mut Init<'_, F>, cfg: &SeparatorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            config: *cfg,
            video: VideoEncoder::new(&mut init.sub("video"), cfg),
            audio_stacks: (0..cfg.audio_blocks)
                .map(|i| ConvStack::new(&mut init.sub(format!("audio{i}")), cfg))
                .collect(),
            fusion: Fusion::new(&mut init.sub("fusion"), cfg),
            fused_stacks: (0..cfg.fused_blocks)
                .map(|i| ConvStack::new(&mut init.sub(format!("fused{i}")), cfg))
                .collect(),
        })
    }

    /// `[B, bottleneck, T]` features and `[B, 256, Tv]` lip embeddings to
    /// `[B, bottleneck, T]`.
    pub fn forward(&self, features: &Tensor<F>, lips: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        let a = conv_s_stack(&self.audio_stacks, features, &self.config, mode)?;
        let v = self.video.forward(lips, mode)?;
        let f = self.fusion.forward(&a, &v)?;
        conv_s_stack(&self.fused_stacks, &f, &self.config, mode)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::ParamStore;

    fn small(norm: NormKind, sub_blocks: usize) -> SeparatorConfig {
        SeparatorConfig {
            sub_blocks,
            norm,
            bottleneck: 4,
            hidden: 6,
            video_blocks: 2,
            video_channels: 8,
            ..SeparatorConfig::default()
        }
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape)
    }

    fn stack(cfg: &SeparatorConfig, seed: u64) -> (ParamStore<f64>, ConvStack<f64>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = ConvStack::new(&mut Init::new(&mut store, &mut rng), cfg);
        (store, s)
    }

    #[test]
    fn zero_projection_makes_blocks_identity() {
        let cfg = small(NormKind::Gln, 3);
        let (_store, s) = stack(&cfg, 1);
        for b in &s.blocks {
            b.project.weight.data_mut().fill(0.0);
            b.project.bias.as_ref().unwrap().data_mut().fill(0.0);
        }
        let x = random(&[2, 4, 17], 2);
        let y = conv_s_stack(std::slice::from_ref(&s), &x, &cfg, Mode::Train).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn stacks_preserve_length_and_check_channels() {
        let cfg = small(NormKind::Bn, 4);
        let (_store, s) = stack(&cfg, 3);
        let stacks = [s.clone(), s];
        for t in [1, 2, 5, 40] {
            let y = conv_s_stack(&stacks, &random(&[1, 4, t], t as u64), &cfg, Mode::Eval).unwrap();
            assert_eq!(y.shape(), &[1, 4, t]);
        }
        assert!(conv_s_stack(&stacks, &random(&[1, 3, 5], 0), &cfg, Mode::Eval).is_err());
    }

    #[test]
    fn receptive_field_of_one_stack_is_511_frames() {
        let cfg = small(NormKind::Bn, 8);
        assert_eq!(cfg.receptive_field(), 511);
        let (_store, s) = stack(&cfg, 4);
        let t = 700;
        let x = random(&[1, 4, t], 5);
        let bumped = x.to_vec();
        let mut bumped = bumped;
        for c in 0..4 {
            bumped[c * t + 350] += 0.5;
        }
        let a = s.forward(&x, Mode::Eval).to_vec();
        let b = s.forward(&Tensor::new(bumped, &[1, 4, t]), Mode::Eval).to_vec();
        let touched: Vec<usize> = (0..t)
            .filter(|&i| (0..4).any(|c| a[c * t + i] != b[c * t + i]))
            .collect();
        assert_eq!(touched.len(), 511);
        assert_eq!(touched[0], 350 - 255);
        assert_eq!(*touched.last().unwrap(), 350 + 255);
    }

    fn video(cfg: &SeparatorConfig) -> (ParamStore<f64>, VideoEncoder<f64>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = VideoEncoder::new(&mut Init::new(&mut store, &mut rng), cfg);
        (store, v)
    }

    #[test]
    fn video_encoder_shapes_and_residual_switch() {
        let cfg = small(NormKind::Gln, 2);
        let (_store, enc) = video(&cfg);
        let v = random(&[1, EMBEDDING_DIM, 50], 1);
        let with = enc.forward(&v, Mode::Eval).unwrap();
        let without = enc.forward_with(&v, Mode::Eval, false).unwrap();
        assert_eq!(with.shape(), &[1, 4, 50]);
        assert_eq!(without.shape(), &[1, 4, 50]);
        assert_ne!(with.to_vec(), without.to_vec());
        assert!(enc.forward(&random(&[1, 255, 50], 1), Mode::Eval).is_err());
    }

    #[test]
    fn video_encoder_separates_distinct_inputs() {
        let cfg = small(NormKind::Gln, 2);
        let (_store, enc) = video(&cfg);
        let a = enc
            .forward(&random(&[1, EMBEDDING_DIM, 20], 1), Mode::Eval)
            .unwrap()
            .to_vec();
        let b = enc
            .forward(&random(&[1, EMBEDDING_DIM, 20], 2), Mode::Eval)
            .unwrap()
            .to_vec();
        let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(dist > 1e-3, "{dist}");
    }

    #[test]
    fn identity_projection_passes_audio_through() {
        let cfg = small(NormKind::Gln, 1);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fusion: Fusion<f64> = Fusion::new(&mut Init::new(&mut store, &mut rng), &cfg);
        {
            let mut w = fusion.proj.weight.data_mut();
            w.fill(0.0);
            for c in 0..4 {
                w[c * 8 + c] = 1.0;
            }
        }
        fusion.proj.bias.as_ref().unwrap().data_mut().fill(0.0);
        let a = random(&[2, 4, 1599], 1);
        let v = random(&[2, 4, 50], 2);
        let f = fusion.forward(&a, &v).unwrap();
        assert_eq!(f.shape(), &[2, 4, 1599]);
        assert_eq!(f.to_vec(), a.to_vec());
        assert!(fusion.forward(&a, &random(&[1, 4, 50], 2)).is_err());
    }

    #[test]
    fn upsample_rules() {
        let idx = upsample_index(1600, 50).unwrap();
        assert_eq!(idx.len(), 1600);
        assert_eq!(idx[31], 0);
        assert_eq!(idx[32], 1);
        assert_eq!(idx[1599], 49);
        // 1599 frames: the last repetition of frame 49 is trimmed
        let idx = upsample_index(1599, 50).unwrap();
        assert_eq!(idx.iter().filter(|&&i| i == 49).count(), 31);
        // 197 / 50 rounds to 4 and is trimmed to 197
        let idx = upsample_index(197, 50).unwrap();
        assert_eq!(idx.len(), 197);
        assert_eq!(idx[4], 1);
        assert_eq!(idx[196], 49);
        // factor 3 falls short and is edge padded
        let idx = upsample_index(160, 50).unwrap();
        assert_eq!(&idx[148..], &[49; 12]);
        assert!(upsample_index(0, 5).is_err());
        assert!(upsample_index(5, 0).is_err());
    }
}
