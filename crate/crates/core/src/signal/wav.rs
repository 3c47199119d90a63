//! 16-bit PCM mono WAV codec.
//!
//! Samples map to `i16 / 32768`, i.e. into `[-1, 1)`. Encoding clamps.

use std::path::Path;

use crate::error::{ensure, Error, Result};

use super::{Waveform, SAMPLE_RATE};

const PCM_FORMAT: u16 = 1;
const EXTENSIBLE_FORMAT: u16 = 0xFFFE;

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a RIFF/WAVE byte stream. Only mono 16-bit PCM at 16 kHz is
/// accepted; unknown chunks are skipped.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let bad = |reason: &str| Error::malformed("wav", reason);
    ensure!(bytes.len() >= 12, bad("shorter than RIFF header"));
    ensure!(&bytes[0..4] == b"RIFF", bad("missing RIFF tag"));
    ensure!(&bytes[8..12] == b"WAVE", bad("missing WAVE tag"));

    let mut pos = 12usize;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        // Some writers leave the data size at 0 or 0xFFFFFFFF when streaming.
        let body_end = body_start.checked_add(size).filter(|&e| e <= bytes.len());
        match id {
            b"fmt " => {
                let end = body_end.ok_or_else(|| bad("truncated fmt chunk"))?;
                ensure!(end - body_start >= 16, bad("fmt chunk too small"));
                let tag = read_u16(bytes, body_start);
                let channels = read_u16(bytes, body_start + 2);
                let rate = read_u32(bytes, body_start + 4);
                let bits = read_u16(bytes, body_start + 14);
                format = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let end = body_end.unwrap_or(bytes.len());
                data = Some(&bytes[body_start..end]);
                break;
            }
            _ => {}
        }
        let Some(end) = body_end else { break };
        pos = end + (size & 1);
    }

    let (tag, channels, rate, bits) = format.ok_or_else(|| bad("no fmt chunk"))?;
    ensure!(
        tag == PCM_FORMAT || tag == EXTENSIBLE_FORMAT,
        bad(&format!("unsupported format tag {tag:#x}"))
    );
    ensure!(channels == 1, bad(&format!("expected mono, got {channels} channels")));
    ensure!(bits == 16, bad(&format!("expected 16-bit samples, got {bits}")));
    ensure!(
        rate == SAMPLE_RATE,
        bad(&format!("expected {SAMPLE_RATE} Hz, got {rate}"))
    );
    let data = data.ok_or_else(|| bad("no data chunk"))?;
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    ensure!(!samples.is_empty(), bad("empty data chunk"));
    Waveform::new(samples, rate)
}

pub fn quantize(sample: f64) -> i16 {
    (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let data_len = w.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.rate().to_le_bytes());
    out.extend_from_slice(&(w.rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in w.samples() {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav(w)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_exact_on_the_quantization_grid() {
        let samples: Vec<f64> = (-5..5).map(|i| i as f64 * 1000.0 / 32768.0).collect();
        let w = Waveform::from_samples(samples.clone()).unwrap();
        let back = decode_wav(&encode_wav(&w)).unwrap();
        assert_eq!(back.samples(), &samples[..]);
    }

    #[test]
    fn clamps_out_of_range() {
        assert_eq!(quantize(1.5), i16::MAX);
        assert_eq!(quantize(-1.0), i16::MIN);
    }

    #[test]
    fn rejects_wrong_rate_and_channels() {
        let w = Waveform::new(vec![0.0; 8], 8_000).unwrap();
        assert!(decode_wav(&encode_wav(&w)).is_err());
        let mut stereo = encode_wav(&Waveform::from_samples(vec![0.0; 8]).unwrap());
        stereo[22] = 2;
        assert!(decode_wav(&stereo).is_err());
    }

    #[test]
    fn skips_unknown_chunks() {
        let w = Waveform::from_samples(vec![0.25, -0.5]).unwrap();
        let enc = encode_wav(&w);
        let mut with_list = enc[..12].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]);
        with_list.extend_from_slice(&enc[12..]);
        assert_eq!(decode_wav(&with_list).unwrap().samples(), w.samples());
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = decode_wav(&bytes);
        }

        #[test]
        fn truncated_valid_files_never_panic(cut in 0usize..60) {
            let w = Waveform::from_samples(vec![0.1; 8]).unwrap();
            let enc = encode_wav(&w);
            let _ = decode_wav(&enc[..cut.min(enc.len())]);
        }
    }
}
