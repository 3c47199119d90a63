//! Spatio-temporal front-end, residual trunk and classification heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::ops::mean_inner;
use crate::nn::{BatchNorm, Checkpoint, Conv2d, Conv3d, Init, Linear, Mode, ParamStore, Tensor};
use crate::real::Real;

use super::preprocess::{FrameNorm, FrameSequence, INPUT_SIZE, MIN_FRAMES};

pub const EMBEDDING_DIM: usize = 256;
pub const CHECKPOINT_KIND: &str = "lipnet";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipNetConfig {
    /// Channels of the first residual stage; later stages double it.
    pub width: usize,
}

impl Default for LipNetConfig {
    fn default() -> Self {
        Self { width: 64 }
    }
}

impl LipNetConfig {
    /// Narrow variant that trains in seconds on one core.
    pub fn desk() -> Self {
        Self { width: 8 }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.width >= 1, Error::InvalidConfig("lipnet width must be ≥ 1".into()));
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Word,
    CiPhone,
    CdPhone,
}

impl std::str::FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Self::Word),
            "ci_phone" => Ok(Self::CiPhone),
            "cd_phone" => Ok(Self::CdPhone),
            other => Err(Error::InvalidArgument(format!("unknown target kind {other:?}"))),
        }
    }
}

/// Label set the extractor is pre-trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetInventory {
    pub kind: TargetKind,
    pub num_classes: usize,
}

impl TargetInventory {
    pub const CI_PHONES: usize = 44;
    pub const CD_PHONES: usize = 3048;

    pub fn word(num_classes: usize) -> Result<Self> {
        ensure!(
            num_classes >= 2,
            Error::InvalidConfig("a word inventory needs at least two classes".into())
        );
        Ok(Self {
            kind: TargetKind::Word,
            num_classes,
        })
    }

    pub fn ci_phone() -> Self {
        Self {
            kind: TargetKind::CiPhone,
            num_classes: Self::CI_PHONES,
        }
    }

    pub fn cd_phone() -> Self {
        Self {
            kind: TargetKind::CdPhone,
            num_classes: Self::CD_PHONES,
        }
    }

    /// Inventory for a kind; `word_classes` only matters for words.
    pub fn for_kind(kind: TargetKind, word_classes: usize) -> Result<Self> {
        match kind {
            TargetKind::Word => Self::word(word_classes),
            TargetKind::CiPhone => Ok(Self::ci_phone()),
            TargetKind::CdPhone => Ok(Self::cd_phone()),
        }
    }

    pub fn is_frame_level(&self) -> bool {
        self.kind != TargetKind::Word
    }
}

/// One embedding per video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LipEmbeddingSeq {
    frames: usize,
    data: Vec<f32>,
}

impl LipEmbeddingSeq {
    pub fn new(frames: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            data.len() == frames * EMBEDDING_DIM && frames > 0,
            Error::ShapeMismatch {
                expected: vec![frames, EMBEDDING_DIM],
                actual: vec![data.len()],
            }
        );
        ensure!(
            data.iter().all(|v| v.is_finite()),
            Error::InvalidArgument("non-finite embedding".into())
        );
        Ok(Self { frames, data })
    }

    pub fn len(&self) -> usize {
        self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * EMBEDDING_DIM..(i + 1) * EMBEDDING_DIM]
    }

    /// Rows `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        ensure!(
            start + len <= self.frames,
            Error::InvalidArgument(format!(
                "embedding rows [{start}, {}) out of {}",
                start + len,
                self.frames
            ))
        );
        Self::new(
            len,
            self.data[start * EMBEDDING_DIM..(start + len) * EMBEDDING_DIM].to_vec(),
        )
    }

    /// Channel-major `[256, T]` copy, the separator's layout.
    pub fn channel_major<F: Real>(&self) -> Vec<F> {
        let mut out = vec![F::zero(); self.data.len()];
        for t in 0..self.frames {
            for c in 0..EMBEDDING_DIM {
                out[c * self.frames + t] = F::lit(self.data[t * EMBEDDING_DIM + c] as f64);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct BasicBlock<F: Real> {
    conv1: Conv2d<F>,
    bn1: BatchNorm<F>,
    conv2: Conv2d<F>,
    bn2: BatchNorm<F>,
    shortcut: Option<(Conv2d<F>, BatchNorm<F>)>,
}

impl<F: Real> BasicBlock<F> {
    fn new(init: &mut Init<'_, F>, c_in: usize, c_out: usize, stride: usize) -> Self {
        let shortcut = (stride != 1 || c_in != c_out).then(|| {
            (
                Conv2d::new(&mut init.sub("down"), c_in, c_out, 1, stride, 0),
                BatchNorm::new(&mut init.sub("down_bn"), c_out),
            )
        });
        Self {
            conv1: Conv2d::new(&mut init.sub("conv1"), c_in, c_out, 3, stride, 1),
            bn1: BatchNorm::new(&mut init.sub("bn1"), c_out),
            conv2: Conv2d::new(&mut init.sub("conv2"), c_out, c_out, 3, 1, 1),
            bn2: BatchNorm::new(&mut init.sub("bn2"), c_out),
            shortcut,
        }
    }

    fn forward(&self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let y = self.bn1.forward(&self.conv1.forward(x), mode).relu();
        let y = self.bn2.forward(&self.conv2.forward(&y), mode);
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(&conv.forward(x), mode),
            None => x.clone(),
        };
        y.add(&skip).relu()
    }
}

/// 3-D convolution front-end followed by an 18-layer residual network
/// applied frame by frame and a projection to 256 dimensions.
#[derive(Debug, Clone)]
pub struct LipNet<F: Real = f32> {
    config: LipNetConfig,
    store: ParamStore<F>,
    front: Conv3d<F>,
    front_bn: BatchNorm<F>,
    blocks: Vec<BasicBlock<F>>,
    proj: Linear<F>,
}

impl<F: Real> LipNet<F> {
    pub fn new(config: LipNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut store, &mut rng);
        let front = Conv3d::new(&mut init.sub("front"), 1, w, (5, 7), 2, (2, 3));
        let front_bn = BatchNorm::new(&mut init.sub("front_bn"), w);
        let mut blocks = Vec::new();
        let mut c_in = w;
        for (stage, mult) in [1, 2, 4, 8].into_iter().enumerate() {
            let c_out = w * mult;
            for i in 0..2 {
                let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(
                    &mut init.sub(format!("layer{}.{}", stage + 1, i)),
                    c_in,
                    c_out,
                    stride,
                ));
                c_in = c_out;
            }
        }
        let proj = Linear::new(&mut init.sub("proj"), c_in, EMBEDDING_DIM);
        drop(init);
        Ok(Self {
            config,
            store,
            front,
            front_bn,
            blocks,
            proj,
        })
    }

    pub fn config(&self) -> LipNetConfig {
        self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.store
    }

    /// `[B, T, 112, 112]` frames → `[B·T, 256]` embeddings, rows ordered by
    /// clip then frame.
    pub fn forward(&self, frames: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let [b, t, h, w] = *frames.shape() else {
            panic!("lipnet expects [B, T, H, W], got {:?}", frames.shape())
        };
        let x = frames.reshape(&[b, t, 1, h, w]);
        let y = self.front.forward(&x);
        let s = y.shape().to_vec();
        let y = y.reshape(&[b * t, s[2], s[3], s[4]]);
        let y = self.front_bn.forward(&y, mode).relu();
        let mut y = crate::nn::ops::max_pool2d(&y, 3, 2, 1);
        for block in &self.blocks {
            y = block.forward(&y, mode);
        }
        self.proj.forward(&mean_inner(&y))
    }

    /// Frozen per-frame embeddings (evaluation mode).
    pub fn extract_embeddings(&self, seq: &FrameSequence) -> Result<LipEmbeddingSeq> {
        ensure!(
            seq.len() >= MIN_FRAMES,
            Error::TooShort {
                needed: MIN_FRAMES,
                actual: seq.len(),
            }
        );
        let x = Tensor::new(
            seq.data().iter().map(|&v| F::lit(v as f64)).collect(),
            &[1, seq.len(), INPUT_SIZE, INPUT_SIZE],
        );
        let out = self.forward(&x, Mode::Eval).to_f64_vec();
        LipEmbeddingSeq::new(seq.len(), out.into_iter().map(|v| v as f32).collect())
    }

    pub fn checkpoint(&self, norm: &FrameNorm, inventory: Option<&TargetInventory>) -> Checkpoint {
        let meta = serde_json::json!({ "frame_norm": norm, "inventory": inventory });
        Checkpoint::from_store(
            CHECKPOINT_KIND,
            serde_json::to_value(self.config).expect("config serialises"),
            meta,
            &self.store,
        )
    }

    /// Rebuilds an extractor and its frame statistics from a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, FrameNorm)> {
        let config: LipNetConfig = serde_json::from_value(ckpt.header.config.clone())
            .map_err(|e| Error::InvalidConfig(format!("lipnet config: {e}")))?;
        let net = Self::new(config, 0)?;
        ckpt.load_into(CHECKPOINT_KIND, &net.store)?;
        let norm: FrameNorm = serde_json::from_value(ckpt.header.meta["frame_norm"].clone())
            .map_err(|e| Error::InvalidConfig(format!("lipnet frame statistics: {e}")))?;
        Ok((net, FrameNorm::new(norm.mean, norm.std)?))
    }
}

/// Classification back-end used only during pre-training.
#[derive(Debug, Clone)]
pub struct ClassifierHead<F: Real = f32> {
    inventory: TargetInventory,
    store: ParamStore<F>,
    linear: Linear<F>,
}

impl<F: Real> ClassifierHead<F> {
    pub fn new(inventory: TargetInventory, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut store, &mut rng);
        let linear = Linear::new(&mut init.sub("head"), EMBEDDING_DIM, inventory.num_classes);
        drop(init);
        Self {
            inventory,
            store,
            linear,
        }
    }

    pub fn inventory(&self) -> TargetInventory {
        self.inventory
    }

    pub fn output_width(&self) -> usize {
        self.linear.weight.shape()[0]
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.store
    }

    /// Frame-level logits `[B·T, K]` for phone inventories; for words the
    /// embeddings are averaged over time first, giving `[B, K]`.
    pub fn forward(&self, embeddings: &Tensor<F>, batch: usize) -> Tensor<F> {
        if self.inventory.is_frame_level() {
            return self.linear.forward(embeddings);
        }
        let t = embeddings.shape()[0] / batch;
        let pooled = mean_inner(&embeddings.reshape(&[batch, t, EMBEDDING_DIM]).transpose_last2());
        self.linear.forward(&pooled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: usize, seed: u64) -> FrameSequence {
        let n = frames * INPUT_SIZE * INPUT_SIZE;
        let data = (0..n)
            .map(|i| (((i as u64).wrapping_mul(2654435761).wrapping_add(seed) % 1000) as f32) / 500.0 - 1.0)
            .collect();
        FrameSequence::new(frames, data).unwrap()
    }

    #[test]
    fn one_embedding_per_frame() {
        let net = LipNet::<f32>::new(LipNetConfig::desk(), 1).unwrap();
        for t in [5, 7] {
            let e = net.extract_embeddings(&seq(t, 3)).unwrap();
            assert_eq!(e.len(), t);
            assert_eq!(e.data().len(), t * EMBEDDING_DIM);
        }
        assert!(matches!(
            net.extract_embeddings(&seq(4, 3)),
            Err(Error::TooShort { needed: 5, actual: 4 })
        ));
    }

    #[test]
    fn eval_embeddings_are_bit_identical() {
        let net = LipNet::<f32>::new(LipNetConfig::desk(), 1).unwrap();
        let s = seq(6, 9);
        assert_eq!(net.extract_embeddings(&s).unwrap(), net.extract_embeddings(&s).unwrap());
    }

    #[test]
    fn repeated_frames_give_matching_interior_rows() {
        let net = LipNet::<f32>::new(LipNetConfig::desk(), 2).unwrap();
        let one = seq(1, 5);
        let data: Vec<f32> = (0..9).flat_map(|_| one.data().to_vec()).collect();
        let e = net.extract_embeddings(&FrameSequence::new(9, data).unwrap()).unwrap();
        // rows 2..7 see five real frames through the temporal kernel
        for t in 3..7 {
            let d: f32 = e
                .row(t)
                .iter()
                .zip(e.row(2))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f32>()
                .sqrt();
            assert!(d < 1e-5, "row {t} differs by {d}");
        }
    }

    #[test]
    fn head_widths_follow_inventory() {
        assert_eq!(
            ClassifierHead::<f32>::new(TargetInventory::ci_phone(), 0).output_width(),
            44
        );
        assert_eq!(
            ClassifierHead::<f32>::new(TargetInventory::cd_phone(), 0).output_width(),
            3048
        );
        assert_eq!(
            ClassifierHead::<f32>::new(TargetInventory::word(7).unwrap(), 0).output_width(),
            7
        );
        assert!(TargetInventory::word(1).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = LipNet::<f32>::new(LipNetConfig::desk(), 4).unwrap();
        let norm = FrameNorm::new(120.0, 30.0).unwrap();
        let bytes = net.checkpoint(&norm, Some(&TargetInventory::ci_phone())).encode();
        let ckpt = Checkpoint::decode(&bytes).unwrap();
        let (back, norm2) = LipNet::<f32>::from_checkpoint(&ckpt).unwrap();
        assert_eq!(norm2, norm);
        let s = seq(5, 1);
        assert_eq!(
            net.extract_embeddings(&s).unwrap(),
            back.extract_embeddings(&s).unwrap()
        );
    }
}
