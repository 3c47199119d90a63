//! Time-domain audio-visual separator: learned encoder, dilated
//! convolutional separator with lip-embedding fusion, and decoder.

mod config;
mod model;
mod trunk;

pub use config::{EncoderConfig, MaskNonlinearity, NormKind, SeparatorConfig, TOTAL_STACKS};
pub use model::{
    check_alignment, forward, lips_tensor, AvTasNet, AvTasNetConfig, CHECKPOINT_KIND, MAX_AV_SKEW_SECONDS,
};
pub use trunk::{
    conv_s_stack, upsample_index, ConvBlock, ConvStack, Fusion, Norm, SeparatorTrunk, VideoBlock, VideoEncoder,
};
