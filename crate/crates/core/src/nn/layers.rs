//! Parameterised building blocks.

use crate::real::Real;

use super::ops::{self, BatchStats};
use super::params::{Init, Mode};
use super::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-8;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// 1×1 convolution over `[B, C, T]`.
#[derive(Debug, Clone)]
pub struct PointwiseConv<F: Real> {
    pub weight: Tensor<F>,
    pub bias: Option<Tensor<F>>,
}

impl<F: Real> PointwiseConv<F> {
    pub fn new(init: &mut Init<'_, F>, c_in: usize, c_out: usize, bias: bool) -> Self {
        let weight = init.uniform("weight", &[c_out, c_in], c_in);
        let bias = bias.then(|| init.uniform("bias", &[c_out], c_in));
        Self { weight, bias }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        ops::pointwise_conv(x, &self.weight, self.bias.as_ref())
    }
}

#[derive(Debug, Clone)]
pub struct Linear<F: Real> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Real> Linear<F> {
    pub fn new(init: &mut Init<'_, F>, c_in: usize, c_out: usize) -> Self {
        Self {
            weight: init.uniform("weight", &[c_out, c_in], c_in),
            bias: init.uniform("bias", &[c_out], c_in),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        ops::linear(x, &self.weight, Some(&self.bias))
    }
}

/// Depthwise dilated convolution that preserves length (odd kernels).
#[derive(Debug, Clone)]
pub struct DepthwiseConv<F: Real> {
    pub weight: Tensor<F>,
    pub dilation: usize,
}

impl<F: Real> DepthwiseConv<F> {
    pub fn new(init: &mut Init<'_, F>, channels: usize, kernel: usize, dilation: usize) -> Self {
        assert!(kernel % 2 == 1, "depthwise kernel must be odd");
        Self {
            weight: init.uniform("weight", &[channels, kernel], kernel),
            dilation,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let k = self.weight.shape()[1];
        ops::depthwise_conv1d(x, &self.weight, self.dilation, self.dilation * (k - 1) / 2)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d<F: Real> {
    pub weight: Tensor<F>,
    pub stride: usize,
}

impl<F: Real> Conv1d<F> {
    pub fn new(init: &mut Init<'_, F>, c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Self {
        Self {
            weight: init.uniform("weight", &[c_out, c_in, kernel], c_in * kernel),
            stride,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        ops::conv1d(x, &self.weight, self.stride)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose1d<F: Real> {
    pub weight: Tensor<F>,
    pub stride: usize,
}

impl<F: Real> ConvTranspose1d<F> {
    pub fn new(init: &mut Init<'_, F>, c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Self {
        Self {
            weight: init.uniform("weight", &[c_in, c_out, kernel], c_in * kernel),
            stride,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        ops::conv_transpose1d(x, &self.weight, self.stride)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<F: Real> {
    pub weight: Tensor<F>,
    pub stride: usize,
    pub pad: usize,
}

impl<F: Real> Conv2d<F> {
    pub fn new(init: &mut Init<'_, F>, c_in: usize, c_out: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            weight: init.uniform("weight", &[c_out, c_in, kernel, kernel], c_in * kernel * kernel),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        ops::conv2d(x, &self.weight, self.stride, self.pad)
    }
}

/// Spatio-temporal convolution over `[B, T, C, H, W]` frame stacks.
#[derive(Debug, Clone)]
pub struct Conv3d<F: Real> {
    pub weight: Tensor<F>,
    pub stride_hw: usize,
    pub pad_t: usize,
    pub pad_hw: usize,
}

impl<F: Real> Conv3d<F> {
    /// `kernel` is `(kt, k_hw)`.
    pub fn new(
        init: &mut Init<'_, F>,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride_hw: usize,
        pad: (usize, usize),
    ) -> Self {
        let (kt, k) = kernel;
        Self {
            weight: init.uniform("weight", &[c_out, c_in, kt, k, k], c_in * kt * k * k),
            stride_hw,
            pad_t: pad.0,
            pad_hw: pad.1,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        ops::conv3d_frames(x, &self.weight, self.stride_hw, self.pad_t, self.pad_hw)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm<F: Real> {
    pub gain: Tensor<F>,
    pub bias: Tensor<F>,
    pub stats: BatchStats<F>,
}

impl<F: Real> BatchNorm<F> {
    pub fn new(init: &mut Init<'_, F>, channels: usize) -> Self {
        Self {
            gain: init.constant("gain", &[channels], 1.0),
            bias: init.constant("bias", &[channels], 0.0),
            stats: BatchStats {
                mean: init.buffer("running_mean", &[channels], 0.0),
                var: init.buffer("running_var", &[channels], 1.0),
                momentum: BATCH_NORM_MOMENTUM,
            },
        }
    }

    pub fn forward(&self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        ops::batch_norm(x, &self.gain, &self.bias, &self.stats, mode.is_train(), BATCH_NORM_EPS)
    }
}

/// Normalisation over all channels and frames of each sample.
#[derive(Debug, Clone)]
pub struct GlobalLayerNorm<F: Real> {
    pub gain: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Real> GlobalLayerNorm<F> {
    pub fn new(init: &mut Init<'_, F>, channels: usize) -> Self {
        Self {
            gain: init.constant("gain", &[channels], 1.0),
            bias: init.constant("bias", &[channels], 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        ops::global_layer_norm(x, &self.gain, &self.bias, NORM_EPS)
    }
}

#[derive(Debug, Clone)]
pub struct PRelu<F: Real> {
    pub alpha: Tensor<F>,
}

impl<F: Real> PRelu<F> {
    pub fn new(init: &mut Init<'_, F>) -> Self {
        Self {
            alpha: init.constant("alpha", &[1], 0.25),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        x.prelu(&self.alpha)
    }
}
