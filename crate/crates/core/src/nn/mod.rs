//! A small reverse-mode tensor engine.
//!
//! Every op records a closure that maps the output gradient back onto its
//! inputs. Models are generic over [`Real`](crate::Real) so the same graph
//! can be run in `f64` for finite-difference checks.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tensor;

#[cfg(test)]
mod gradcheck;

pub use checkpoint::{arch_hash, Checkpoint, CheckpointHeader, TensorRecord, CHECKPOINT_MAGIC};
pub use layers::{
    BatchNorm, Conv1d, Conv2d, Conv3d, ConvTranspose1d, DepthwiseConv, GlobalLayerNorm, Linear, PRelu, PointwiseConv,
};
pub use optim::{clip_grad_norm, Adam};
pub use params::{Init, Mode, ParamEntry, ParamStore};
pub use tensor::Tensor;
