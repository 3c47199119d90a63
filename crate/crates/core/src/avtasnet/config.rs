//! Encoder and separator hyper-parameters.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Total number of dilated stacks, split between the audio-only and the
/// fused part of the separator.
pub const TOTAL_STACKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Filter length in samples.
    pub kernel: usize,
    /// Hop in samples.
    pub stride: usize,
    pub basis_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kernel: 40,
            stride: 20,
            basis_channels: 256,
        }
    }
}

impl EncoderConfig {
    pub fn desk() -> Self {
        Self {
            basis_channels: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.stride >= 1 && self.stride <= self.kernel,
            Error::InvalidConfig(format!(
                "encoder stride {} must lie in [1, kernel {}]",
                self.stride, self.kernel
            ))
        );
        ensure!(
            self.basis_channels >= 1,
            Error::InvalidConfig("encoder needs at least one basis channel".into())
        );
        Ok(())
    }

    /// Encoded frames for `samples` input samples.
    pub fn frames(&self, samples: usize) -> Result<usize> {
        ensure!(
            samples >= self.kernel,
            Error::TooShort {
                needed: self.kernel,
                actual: samples,
            }
        );
        Ok((samples - self.kernel) / self.stride + 1)
    }

    /// Samples produced by decoding `frames` frames.
    pub fn decoded_len(&self, frames: usize) -> usize {
        (frames.max(1) - 1) * self.stride + self.kernel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Bn,
    Gln,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskNonlinearity {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparatorConfig {
    /// Sub-blocks per dilated stack; sub-block `d` uses dilation `2^d`.
    pub sub_blocks: usize,
    /// Stacks before fusion.
    pub audio_blocks: usize,
    /// Stacks after fusion.
    pub fused_blocks: usize,
    pub norm: NormKind,
    pub bottleneck: usize,
    pub hidden: usize,
    pub conv_kernel: usize,
    pub video_blocks: usize,
    pub video_channels: usize,
    pub mask_nonlinearity: MaskNonlinearity,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        Self {
            sub_blocks: 8,
            audio_blocks: 1,
            fused_blocks: 3,
            norm: NormKind::Gln,
            bottleneck: 256,
            hidden: 512,
            conv_kernel: 3,
            video_blocks: 5,
            video_channels: 512,
            mask_nonlinearity: MaskNonlinearity::Relu,
        }
    }
}

impl SeparatorConfig {
    /// Narrow, shallow variant for single-core training runs.
    pub fn desk() -> Self {
        Self {
            sub_blocks: 5,
            bottleneck: 32,
            hidden: 64,
            video_blocks: 2,
            video_channels: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.audio_blocks + self.fused_blocks == TOTAL_STACKS,
            Error::InvalidConfig(format!(
                "audio_blocks + fused_blocks must equal {TOTAL_STACKS}, got {} + {}",
                self.audio_blocks, self.fused_blocks
            ))
        );
        ensure!(
            self.sub_blocks >= 1,
            Error::InvalidConfig("sub_blocks must be ≥ 1".into())
        );
        ensure!(
            self.sub_blocks <= 16,
            Error::InvalidConfig("sub_blocks above 16 overflow the dilation range".into())
        );
        ensure!(
            self.conv_kernel % 2 == 1,
            Error::InvalidConfig("conv_kernel must be odd".into())
        );
        ensure!(
            self.bottleneck >= 1 && self.hidden >= 1 && self.video_channels >= 1,
            Error::InvalidConfig("channel counts must be ≥ 1".into())
        );
        Ok(())
    }

    /// Encoder frames one dilated stack can see.
    pub fn receptive_field(&self) -> usize {
        1 + (self.conv_kernel - 1) * ((1 << self.sub_blocks) - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoder_frame_arithmetic() {
        let e = EncoderConfig::default();
        assert_eq!(e.frames(32000).unwrap(), 1599);
        assert_eq!(e.decoded_len(1599), 32000);
        assert!(e.frames(39).is_err());
        assert!(EncoderConfig { stride: 41, ..e }.validate().is_err());
    }

    #[test]
    fn stack_split_must_total_four() {
        assert!(SeparatorConfig::default().validate().is_ok());
        let bad = SeparatorConfig {
            fused_blocks: 2,
            ..SeparatorConfig::default()
        };
        assert!(bad.validate().is_err());
        for n_a in 0..=4 {
            let c = SeparatorConfig {
                audio_blocks: n_a,
                fused_blocks: 4 - n_a,
                ..SeparatorConfig::default()
            };
            assert!(c.validate().is_ok());
        }
    }

    #[test]
    fn default_receptive_field() {
        assert_eq!(SeparatorConfig::default().receptive_field(), 511);
    }
}
