//! Lip-region cropping, resampling and standardisation.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::mixsim::RawFrames;

/// Side of the square centre crop.
pub const CROP_SIZE: usize = 70;
/// Side of the network input.
pub const INPUT_SIZE: usize = 112;
/// Fewest frames the temporal front-end accepts.
pub const MIN_FRAMES: usize = 5;

/// `T × 112 × 112` standardised frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: usize,
    data: Vec<f32>,
}

impl FrameSequence {
    pub fn new(frames: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            data.len() == frames * INPUT_SIZE * INPUT_SIZE,
            Error::ShapeMismatch {
                expected: vec![frames, INPUT_SIZE, INPUT_SIZE],
                actual: vec![data.len()],
            }
        );
        ensure!(
            data.iter().all(|v| v.is_finite()),
            Error::InvalidArgument("non-finite frame value".into())
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

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = INPUT_SIZE * INPUT_SIZE;
        &self.data[i * n..(i + 1) * n]
    }

    /// Frames `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        ensure!(
            start + len <= self.frames,
            Error::InvalidArgument(format!("frames [{start}, {}) out of {}", start + len, self.frames))
        );
        let n = INPUT_SIZE * INPUT_SIZE;
        Self::new(len, self.data[start * n..(start + len) * n].to_vec())
    }
}

/// Top-left corner of the centred crop along one axis.
pub fn crop_origin(size: usize) -> usize {
    (size - CROP_SIZE) / 2
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let x = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = x.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, x - i0 as f64)
            })
            .collect()
    };
    let rows = taps(h, out_h);
    let cols = taps(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            let top = src[r0 * w + c0] * (1.0 - fx) + src[r0 * w + c1] * fx;
            let bottom = src[r1 * w + c0] * (1.0 - fx) + src[r1 * w + c1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Centre 70 × 70 crop of every frame, resampled to 112 × 112, in raw
/// intensity units.
pub fn crop_and_resize(raw: &RawFrames) -> Result<Vec<Vec<f64>>> {
    let (h, w) = (raw.height(), raw.width());
    ensure!(
        h >= CROP_SIZE && w >= CROP_SIZE,
        Error::InvalidArgument(format!(
            "frames of {h}×{w} are smaller than the {CROP_SIZE}×{CROP_SIZE} crop"
        ))
    );
    let (r0, c0) = (crop_origin(h), crop_origin(w));
    Ok((0..raw.len())
        .map(|i| {
            let f = raw.frame(i);
            let crop: Vec<f64> = (r0..r0 + CROP_SIZE)
                .flat_map(|r| f[r * w + c0..r * w + c0 + CROP_SIZE].iter().map(|&v| v as f64))
                .collect();
            resize_bilinear(&crop, CROP_SIZE, CROP_SIZE, INPUT_SIZE, INPUT_SIZE)
        })
        .collect())
}

/// Global intensity statistics used for standardisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameNorm {
    pub mean: f64,
    pub std: f64,
}

impl FrameNorm {
    /// Mean and standard deviation over every pixel of every clip after
    /// cropping and resampling.
    pub fn fit<'a>(clips: impl IntoIterator<Item = &'a RawFrames>) -> Result<Self> {
        let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
        for clip in clips {
            for frame in crop_and_resize(clip)? {
                for v in frame {
                    n += 1.0;
                    s += v;
                    s2 += v * v;
                }
            }
        }
        ensure!(n > 0.0, Error::InvalidArgument("no frames to fit statistics on".into()));
        let mean = s / n;
        let var = (s2 / n - mean * mean).max(0.0);
        Self::new(mean, var.sqrt().max(1e-6))
    }

    pub fn new(mean: f64, std: f64) -> Result<Self> {
        ensure!(
            mean.is_finite() && std.is_finite() && std > 0.0,
            Error::InvalidConfig(format!("invalid frame statistics mean={mean} std={std}"))
        );
        Ok(Self { mean, std })
    }
}

/// Crop, resample and standardise raw frames.
pub fn preprocess_frames(raw: &RawFrames, norm: &FrameNorm) -> Result<FrameSequence> {
    let frames = crop_and_resize(raw)?;
    let data = frames
        .into_iter()
        .flatten()
        .map(|v| ((v - norm.mean) / norm.std) as f32)
        .collect();
    FrameSequence::new(raw.len(), data)
}
