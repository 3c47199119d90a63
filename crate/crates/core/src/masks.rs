//! Oracle time-frequency masks and the phase-sensitive approximation loss.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::real::Real;
use crate::signal::{istft, Spectrogram, Waveform};

/// Guards the denominators of the ratio masks.
pub const MASK_EPS: f64 = 1e-10;

/// Time-major mask with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TFMask {
    values: Vec<f64>,
    n_frames: usize,
    n_bins: usize,
}

impl TFMask {
    /// Values are clipped into `[0, 1]`.
    pub fn new(values: Vec<f64>, n_frames: usize, n_bins: usize) -> Result<Self> {
        ensure!(
            values.len() == n_frames * n_bins,
            Error::ShapeMismatch {
                expected: vec![n_frames, n_bins],
                actual: vec![values.len()],
            }
        );
        ensure!(
            values.iter().all(|v| !v.is_nan()),
            Error::InvalidArgument("mask contains NaN".into())
        );
        let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            values,
            n_frames,
            n_bins,
        })
    }

    pub fn filled(value: f64, n_frames: usize, n_bins: usize) -> Result<Self> {
        Self::new(vec![value; n_frames * n_bins], n_frames, n_bins)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_frames, self.n_bins)
    }

    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.values[frame * self.n_bins + bin]
    }

    fn ensure_matches(&self, spec: &Spectrogram) -> Result<()> {
        ensure!(
            self.shape() == spec.shape(),
            Error::ShapeMismatch {
                expected: vec![spec.n_frames(), spec.n_bins()],
                actual: vec![self.n_frames, self.n_bins],
            }
        );
        Ok(())
    }
}

/// Which phase the masked magnitude is combined with before the inverse STFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSource {
    Mix,
    Oracle,
}

/// Magnitude ratio mask `|s_i| / (Σ_j |s_j| + ε)` for every source.
pub fn oracle_irm(sources: &[Spectrogram]) -> Result<Vec<TFMask>> {
    ensure!(
        sources.len() >= 2,
        Error::InvalidArgument(format!("IRM needs at least 2 sources, got {}", sources.len()))
    );
    for s in &sources[1..] {
        sources[0].ensure_same_layout(s)?;
    }
    let mags: Vec<Vec<f64>> = sources.iter().map(|s| s.magnitude()).collect();
    let total: Vec<f64> = (0..mags[0].len())
        .map(|i| mags.iter().map(|m| m[i]).sum::<f64>() + MASK_EPS)
        .collect();
    let (n_frames, n_bins) = sources[0].shape();
    mags.into_iter()
        .map(|m| {
            let values = m.iter().zip(&total).map(|(a, t)| a / t).collect();
            TFMask::new(values, n_frames, n_bins)
        })
        .collect()
}

/// `|s_t| · max(cos(∠s_m − ∠s_t), 0)` per bin, i.e. `max(Re(s_m s_t*), 0) / |s_m|`.
fn phase_discounted(mix: Complex64, target: Complex64) -> f64 {
    let m = mix.norm();
    if m == 0.0 {
        return 0.0;
    }
    (mix * target.conj()).re.max(0.0) / m
}

/// The PSA regression target for every bin, time-major.
pub fn psa_target(mixture: &Spectrogram, target: &Spectrogram) -> Result<Vec<f64>> {
    mixture.ensure_same_layout(target)?;
    Ok(mixture
        .frames()
        .iter()
        .zip(target.frames())
        .map(|(m, t)| phase_discounted(*m, *t))
        .collect())
}

/// Phase-sensitive mask, clipped to `[0, 1]`.
pub fn oracle_psm(target: &Spectrogram, mixture: &Spectrogram) -> Result<TFMask> {
    mixture.ensure_same_layout(target)?;
    let values = mixture
        .frames()
        .iter()
        .zip(target.frames())
        .map(|(m, t)| phase_discounted(*m, *t) / (m.norm() + MASK_EPS))
        .collect();
    let (n_frames, n_bins) = mixture.shape();
    TFMask::new(values, n_frames, n_bins)
}

/// Masks the mixture magnitude and resynthesises with the chosen phase.
pub fn apply_mask(
    mixture: &Spectrogram,
    mask: &TFMask,
    phase_source: PhaseSource,
    oracle_phase: Option<&Spectrogram>,
) -> Result<Waveform> {
    mask.ensure_matches(mixture)?;
    let phase = match (phase_source, oracle_phase) {
        (PhaseSource::Mix, _) => mixture,
        (PhaseSource::Oracle, Some(p)) => {
            mixture.ensure_same_layout(p)?;
            p
        }
        (PhaseSource::Oracle, None) => {
            return Err(Error::InvalidArgument(
                "oracle phase requested but no oracle spectrogram given".into(),
            ))
        }
    };
    let frames = mixture
        .frames()
        .iter()
        .zip(phase.frames())
        .zip(mask.values())
        .map(|((m, p), k)| {
            let mag = m.norm() * k;
            let r = p.norm();
            if r > 0.0 {
                p * (mag / r)
            } else {
                Complex64::new(mag, 0.0)
            }
        })
        .collect();
    istft(&mixture.with_frames(frames)?, None)
}

/// Mean squared PSA error over bins and its gradient with respect to the mask.
///
/// All three slices share one layout; the function does not care which.
pub fn psa_loss_with_grad<F: Real>(mask: &[F], mixture_mag: &[F], target_term: &[F]) -> Result<(F, Vec<F>)> {
    ensure!(
        mask.len() == mixture_mag.len() && mask.len() == target_term.len(),
        Error::ShapeMismatch {
            expected: vec![mixture_mag.len()],
            actual: vec![mask.len(), target_term.len()],
        }
    );
    ensure!(!mask.is_empty(), Error::InvalidArgument("empty mask".into()));
    let n = mask.len() as f64;
    let mut total = 0.0;
    let grad = mask
        .iter()
        .zip(mixture_mag)
        .zip(target_term)
        .map(|((m, a), t)| {
            let (m, a, t) = (m.as_f64(), a.as_f64(), t.as_f64());
            let diff = a * m - t;
            total += diff * diff;
            F::lit(2.0 * diff * a / n)
        })
        .collect();
    Ok((F::lit(total / n), grad))
}

/// `mean ‖ |s_t| ⊙ max(cos Δθ, 0) − |s_m| ⊙ m ‖²` over all bins.
pub fn psa_loss(mask_est: &TFMask, mixture: &Spectrogram, target: &Spectrogram) -> Result<f64> {
    mask_est.ensure_matches(mixture)?;
    let t = psa_target(mixture, target)?;
    Ok(psa_loss_with_grad::<f64>(mask_est.values(), &mixture.magnitude(), &t)?.0)
}
