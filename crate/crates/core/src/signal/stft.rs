use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

use super::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// One-sided short-time spectrum, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: Vec<Complex64>,
    n_frames: usize,
    n_bins: usize,
    window_len: usize,
    hop: usize,
    window: WindowKind,
    rate: u32,
}

impl Spectrogram {
    pub fn from_frames(
        frames: Vec<Complex64>,
        n_frames: usize,
        window_len: usize,
        hop: usize,
        rate: u32,
    ) -> Result<Self> {
        ensure!(
            window_len >= 2 && window_len.is_multiple_of(2),
            Error::InvalidArgument(format!("window length {window_len} must be even"))
        );
        ensure!(
            hop >= 1 && hop <= window_len,
            Error::InvalidArgument(format!("hop {hop} must be in 1..={window_len}"))
        );
        let n_bins = window_len / 2 + 1;
        ensure!(
            n_frames >= 1 && frames.len() == n_frames * n_bins,
            Error::ShapeMismatch {
                expected: vec![n_frames, n_bins],
                actual: vec![frames.len()],
            }
        );
        ensure!(
            frames.iter().all(|c| c.re.is_finite() && c.im.is_finite()),
            Error::InvalidArgument("spectrogram contains non-finite values".into())
        );
        Ok(Self {
            frames,
            n_frames,
            n_bins,
            window_len,
            hop,
            window: WindowKind::Hann,
            rate,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_frames, self.n_bins)
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> WindowKind {
        self.window
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn frames(&self) -> &[Complex64] {
        &self.frames
    }

    pub fn get(&self, frame: usize, bin: usize) -> Complex64 {
        self.frames[frame * self.n_bins + bin]
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.frames.iter().map(|c| c.norm()).collect()
    }

    /// Same framing, new values.
    pub fn with_frames(&self, frames: Vec<Complex64>) -> Result<Self> {
        Self::from_frames(frames, self.n_frames, self.window_len, self.hop, self.rate)
    }

    pub fn same_layout(&self, other: &Spectrogram) -> bool {
        self.n_frames == other.n_frames
            && self.n_bins == other.n_bins
            && self.window_len == other.window_len
            && self.hop == other.hop
    }

    pub(crate) fn ensure_same_layout(&self, other: &Spectrogram) -> Result<()> {
        ensure!(
            self.same_layout(other),
            Error::ShapeMismatch {
                expected: vec![self.n_frames, self.n_bins],
                actual: vec![other.n_frames, other.n_bins],
            }
        );
        Ok(())
    }

    /// Number of samples produced by overlap-add.
    pub fn signal_len(&self) -> usize {
        (self.n_frames - 1) * self.hop + self.window_len
    }
}

/// Hann-windowed one-sided STFT without padding: every frame lies fully
/// inside the signal.
pub fn stft(w: &Waveform, window_len: usize, hop: usize) -> Result<Spectrogram> {
    ensure!(
        window_len >= 2 && window_len.is_multiple_of(2),
        Error::InvalidArgument(format!("window length {window_len} must be even"))
    );
    ensure!(
        hop >= 1 && hop <= window_len,
        Error::InvalidArgument(format!("hop {hop} must be in 1..={window_len}"))
    );
    ensure!(
        w.len() >= window_len,
        Error::TooShort {
            needed: window_len,
            actual: w.len()
        }
    );
    let n_frames = (w.len() - window_len) / hop + 1;
    let n_bins = window_len / 2 + 1;
    let window = hann_window(window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); window_len];
    let mut frames = Vec::with_capacity(n_frames * n_bins);
    let x = w.samples();
    for f in 0..n_frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(x[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        frames.extend_from_slice(&buf[..n_bins]);
    }
    Spectrogram::from_frames(frames, n_frames, window_len, hop, w.rate())
}

/// Weighted overlap-add inverse.
///
/// With `phase_source`, the magnitude of `s` is combined with the phase of
/// `phase_source`. Samples whose summed squared window falls below 1% of its
/// peak are attenuated rather than amplified.
pub fn istft(s: &Spectrogram, phase_source: Option<&Spectrogram>) -> Result<Waveform> {
    let spectrum: Vec<Complex64> = match phase_source {
        None => s.frames.clone(),
        Some(p) => {
            s.ensure_same_layout(p)?;
            s.frames
                .iter()
                .zip(&p.frames)
                .map(|(m, ph)| {
                    let mag = m.norm();
                    let r = ph.norm();
                    if r > 0.0 {
                        ph * (mag / r)
                    } else {
                        Complex64::new(mag, 0.0)
                    }
                })
                .collect()
        }
    };
    let n = s.window_len;
    let window = hann_window(n);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let out_len = s.signal_len();
    let mut out = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..s.n_frames {
        let row = &spectrum[f * s.n_bins..(f + 1) * s.n_bins];
        buf[..s.n_bins].copy_from_slice(row);
        // Hermitian completion; DC and Nyquist imaginary parts are ignored.
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for k in 1..n / 2 {
            buf[n - k] = row[k].conj();
        }
        ifft.process(&mut buf);
        let start = f * s.hop;
        for i in 0..n {
            out[start + i] += buf[i].re / n as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let peak = norm.iter().cloned().fold(0.0, f64::max);
    let floor = 0.01 * peak;
    for (o, w) in out.iter_mut().zip(&norm) {
        *o /= w.max(floor);
    }
    Waveform::new(out, s.rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_and_bins() {
        let w = Waveform::from_samples(vec![0.1; 32_000]).unwrap();
        let s = stft(&w, 640, 160).unwrap();
        assert_eq!(s.shape(), (197, 321));
        assert_eq!(s.signal_len(), 32_000);
    }

    #[test]
    fn too_short_or_bad_params() {
        let w = Waveform::from_samples(vec![0.1; 100]).unwrap();
        assert!(matches!(stft(&w, 128, 64), Err(Error::TooShort { .. })));
        assert!(stft(&w, 63, 16).is_err());
        assert!(stft(&w, 64, 65).is_err());
    }

    #[test]
    fn bin_centred_cosine_concentrates_energy() {
        let n = 512;
        let bin = 37;
        let x: Vec<f64> = (0..4096)
            .map(|i| (2.0 * std::f64::consts::PI * bin as f64 * i as f64 / n as f64).cos())
            .collect();
        let s = stft(&Waveform::from_samples(x).unwrap(), n, 256).unwrap();
        for f in 0..s.n_frames() {
            let energy: f64 = (0..s.n_bins()).map(|k| s.get(f, k).norm_sqr()).sum();
            let peak = (0..s.n_bins())
                .max_by(|&a, &b| s.get(f, a).norm_sqr().total_cmp(&s.get(f, b).norm_sqr()))
                .unwrap();
            assert_eq!(peak, bin);
            // the Hann main lobe spans the centre bin and its two neighbours
            let near: f64 = (bin - 1..=bin + 1).map(|k| s.get(f, k).norm_sqr()).sum();
            assert!(near >= 0.9 * energy);
        }
    }

    #[test]
    fn phase_source_layout_must_match() {
        let w = Waveform::from_samples((0..2048).map(|i| (i as f64).sin()).collect()).unwrap();
        let a = stft(&w, 512, 256).unwrap();
        let b = stft(&w, 256, 128).unwrap();
        assert!(istft(&a, Some(&b)).is_err());
    }
}
