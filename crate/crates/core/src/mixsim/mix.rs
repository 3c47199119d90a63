use crate::error::{ensure, Error, Result};
use crate::signal::Waveform;

/// Largest |SNR| accepted by [`mix`].
pub const MIX_SNR_LIMIT_DB: f64 = 20.0;

#[derive(Debug, Clone)]
pub struct Mixture {
    pub mixture: Waveform,
    /// Truncated and gain-adjusted sources; these are the training targets.
    pub scaled_sources: Vec<Waveform>,
}

/// Mixes sources after truncating them to the shortest one.
///
/// Source 0 is the reference and keeps its level; source `i` is scaled so
/// that `10·log10(P_i / P_0) = snrs_db[i]`, where `P` is the mean power over
/// the truncated span. `snrs_db[0]` must therefore be 0.
pub fn mix(sources: &[Waveform], snrs_db: &[f64]) -> Result<Mixture> {
    ensure!(
        sources.len() >= 2,
        Error::InvalidArgument(format!("need at least 2 sources, got {}", sources.len()))
    );
    ensure!(
        snrs_db.len() == sources.len(),
        Error::LengthMismatch {
            left: sources.len(),
            right: snrs_db.len()
        }
    );
    for &snr in snrs_db {
        ensure!(
            snr.is_finite() && snr.abs() <= MIX_SNR_LIMIT_DB,
            Error::InvalidArgument(format!("SNR {snr} dB outside ±{MIX_SNR_LIMIT_DB} dB"))
        );
    }
    ensure!(
        snrs_db[0] == 0.0,
        Error::InvalidArgument("the reference source must be at 0 dB".into())
    );
    let len = sources.iter().map(Waveform::len).min().unwrap_or(0);
    let truncated: Vec<Waveform> = sources.iter().map(|s| s.truncated(len)).collect::<Result<_>>()?;
    let powers: Vec<f64> = truncated.iter().map(Waveform::power).collect();
    for (i, p) in powers.iter().enumerate() {
        ensure!(
            *p > 0.0,
            Error::InvalidArgument(format!("source {i} is silent over the mixed span"))
        );
    }
    let scaled_sources: Vec<Waveform> = truncated
        .iter()
        .zip(snrs_db)
        .enumerate()
        .map(|(i, (s, snr))| {
            if i == 0 {
                s.clone()
            } else {
                s.scaled((powers[0] * 10f64.powf(snr / 10.0) / powers[i]).sqrt())
            }
        })
        .collect();
    let mut sum = scaled_sources[0].samples().to_vec();
    for s in &scaled_sources[1..] {
        for (acc, v) in sum.iter_mut().zip(s.samples()) {
            *acc += v;
        }
    }
    Ok(Mixture {
        mixture: Waveform::new(sum, sources[0].rate())?,
        scaled_sources,
    })
}
