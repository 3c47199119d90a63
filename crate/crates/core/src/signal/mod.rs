//! Waveform and spectrogram primitives, Si-SNR and permutation-invariant losses.

mod sisnr;
mod stft;
pub mod wav;
mod waveform;

pub use sisnr::{
    pit_si_snr_loss, si_snr, si_snr_loss, si_snr_loss_with_grad, si_snr_slices, si_snr_with_grad, PitResult, LOSS_EPS,
    MAX_PIT_SOURCES, REPORT_CLAMP_DB,
};
pub use stft::{hann_window, istft, stft, Spectrogram, WindowKind};
pub use waveform::{ChunkSpec, Waveform, SAMPLE_RATE};
