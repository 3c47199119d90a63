//! Synthetic audio-visual corpus.
//!
//! Every utterance is one synthetic talker: an amplitude-modulated harmonic
//! tone with its own pitch, plus 25 fps frames showing a dark ellipse whose
//! height follows the tone's envelope. Audio and video line up exactly.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::signal::{Waveform, SAMPLE_RATE};

use super::{RawFrames, SourceRecord, MIN_UTTERANCE_SECONDS, SAMPLES_PER_FRAME, VIDEO_FPS};

/// Raw frames are square, this many pixels on a side.
pub const FRAME_SIZE: usize = 112;

const BACKGROUND: f64 = 150.0;
const LIP_SHADE: f64 = 40.0;
const MIN_LIP_HEIGHT: f64 = 4.0;
const LIP_HEIGHT_RANGE: f64 = 40.0;

#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub record: SourceRecord,
    pub audio: Waveform,
    pub frames: RawFrames,
}

/// Generates `n_utterances` talkers of `duration` seconds each, rounded to
/// whole video frames. Paths in the records are relative
/// (`corpus/<id>.wav`, `corpus/<id>.avf`).
pub fn synth_av_corpus(n_utterances: usize, duration: f64, seed: u64) -> Result<Vec<SynthUtterance>> {
    ensure!(
        duration.is_finite() && duration >= MIN_UTTERANCE_SECONDS,
        Error::InvalidArgument(format!("duration {duration}s is shorter than {MIN_UTTERANCE_SECONDS}s"))
    );
    ensure!(
        n_utterances >= 1,
        Error::InvalidArgument("need at least one utterance".into())
    );
    let n_frames = (duration * VIDEO_FPS as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_utterances)
        .map(|i| {
            let id = format!("syn{seed}-{i:04}");
            let talker_seed = rng.random::<u64>();
            let (audio, envelope) = talker_audio(n_frames, talker_seed)?;
            let frames = lip_frames(&envelope, n_frames, talker_seed)?;
            Ok(SynthUtterance {
                record: SourceRecord {
                    audio_path: format!("corpus/{id}.wav"),
                    video_path: format!("corpus/{id}.avf"),
                    utterance_id: id,
                    duration: n_frames as f64 / VIDEO_FPS as f64,
                },
                audio,
                frames,
            })
        })
        .collect()
}

/// Syllable-like envelope: raised-cosine bumps separated by short pauses.
fn envelope(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let rate = SAMPLE_RATE as f64;
    let mut env = vec![0.0; len];
    let mut pos = (rng.random_range(0.0..0.1) * rate) as usize;
    while pos < len {
        let syl = (rng.random_range(0.12..0.32) * rate) as usize;
        let peak = rng.random_range(0.45..1.0);
        for k in 0..syl.min(len - pos) {
            let phase = k as f64 / syl as f64;
            env[pos + k] = peak * (0.5 - 0.5 * (2.0 * PI * phase).cos());
        }
        pos += syl + (rng.random_range(0.03..0.18) * rate) as usize;
    }
    env
}

fn talker_audio(n_frames: usize, seed: u64) -> Result<(Waveform, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = n_frames * SAMPLES_PER_FRAME;
    let rate = SAMPLE_RATE as f64;
    let f0 = rng.random_range(100.0..350.0);
    let n_harm = rng.random_range(3..=6);
    let amps: Vec<f64> = (1..=n_harm).map(|k| rng.random_range(0.5..1.0) / k as f64).collect();
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let vibrato_hz = rng.random_range(3.0..6.0);
    let norm: f64 = amps.iter().sum();
    let env = envelope(len, &mut rng);
    let mut phase = 0.0;
    let samples = (0..len)
        .map(|n| {
            let t = n as f64 / rate;
            let f = f0 * (1.0 + 0.01 * (2.0 * PI * vibrato_hz * t).sin());
            phase += 2.0 * PI * f / rate;
            let tone: f64 = amps
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(k, (a, p))| a * ((k + 1) as f64 * phase + p).sin())
                .sum();
            0.5 * env[n] * tone / norm
        })
        .collect();
    Ok((Waveform::from_samples(samples)?, env))
}

fn lip_frames(envelope: &[f64], n_frames: usize, seed: u64) -> Result<RawFrames> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    let half_width = rng.random_range(20.0..28.0);
    let centre = (FRAME_SIZE as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(n_frames * FRAME_SIZE * FRAME_SIZE);
    for j in 0..n_frames {
        let span = &envelope[j * SAMPLES_PER_FRAME..(j + 1) * SAMPLES_PER_FRAME];
        let level = span.iter().sum::<f64>() / span.len() as f64;
        let half_height = 0.5 * (MIN_LIP_HEIGHT + LIP_HEIGHT_RANGE * level);
        for r in 0..FRAME_SIZE {
            for c in 0..FRAME_SIZE {
                let dy = (r as f64 - centre) / half_height;
                let dx = (c as f64 - centre) / half_width;
                let base = if dx * dx + dy * dy <= 1.0 {
                    LIP_SHADE
                } else {
                    BACKGROUND
                };
                let grain: f64 = rng.random_range(-6.0..6.0);
                data.push((base + grain).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RawFrames::new(n_frames, FRAME_SIZE, FRAME_SIZE, data)
}

/// Height of the dark blob along the centre column of each frame.
pub fn measured_lip_heights(frames: &RawFrames) -> Vec<f64> {
    let w = frames.width();
    let col = w / 2;
    (0..frames.len())
        .map(|j| {
            let f = frames.frame(j);
            (0..frames.height())
                .filter(|&r| (f[r * w + col] as f64) < (BACKGROUND + LIP_SHADE) / 2.0)
                .count() as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn two_seconds_is_32000_samples_and_50_frames() {
        let c = synth_av_corpus(1, 2.0, 1).unwrap();
        assert_eq!(c[0].audio.len(), 32_000);
        assert_eq!(c[0].frames.len(), 50);
        assert_eq!(c[0].frames.height(), FRAME_SIZE);
        assert_eq!(c[0].record.duration, 2.0);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = synth_av_corpus(2, 2.0, 42).unwrap();
        let b = synth_av_corpus(2, 2.0, 42).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.audio, y.audio);
            assert_eq!(x.frames, y.frames);
            assert_eq!(x.record, y.record);
        }
        assert_ne!(a[0].audio, a[1].audio);
    }

    #[test]
    fn lip_height_tracks_audio_rms() {
        for u in synth_av_corpus(3, 2.4, 5).unwrap() {
            let heights = measured_lip_heights(&u.frames);
            let rms: Vec<f64> = u
                .audio
                .samples()
                .chunks(SAMPLES_PER_FRAME)
                .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
                .collect();
            let r = pearson(&heights, &rms);
            assert!(r > 0.9, "correlation {r}");
        }
    }

    #[test]
    fn rejects_short_durations() {
        assert!(synth_av_corpus(1, 1.5, 0).is_err());
        assert!(synth_av_corpus(0, 2.0, 0).is_err());
    }

    #[test]
    fn frame_count_rounds_duration() {
        let c = synth_av_corpus(1, 2.03, 0).unwrap();
        assert_eq!(c[0].frames.len(), 51);
        assert_eq!(c[0].audio.len(), 51 * SAMPLES_PER_FRAME);
    }
}
