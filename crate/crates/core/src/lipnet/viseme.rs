//! Two-class synthetic mouth-shape clips for pre-training smoke runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::mixsim::{RawFrames, FRAME_SIZE};

/// A clip whose every frame shows one mouth shape.
#[derive(Debug, Clone)]
pub struct VisemeClip {
    pub frames: RawFrames,
    /// 0: rounded, open mouth; 1: spread, nearly closed mouth.
    pub class: usize,
}

/// `n_clips` clips alternating between the two classes.
pub fn synth_viseme_corpus(n_clips: usize, n_frames: usize, seed: u64) -> Result<Vec<VisemeClip>> {
    ensure!(
        n_clips >= 2 && n_frames >= 1,
        Error::InvalidArgument("need at least two clips of one frame".into())
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_clips)
        .map(|i| {
            let class = i % 2;
            let (hw, hh) = match class {
                0 => (rng.random_range(11.0..16.0), rng.random_range(13.0..19.0)),
                _ => (rng.random_range(22.0..28.0), rng.random_range(3.0..6.0)),
            };
            let (bg, shade) = (rng.random_range(130.0..170.0), rng.random_range(30.0..60.0));
            let mut data = Vec::with_capacity(n_frames * FRAME_SIZE * FRAME_SIZE);
            for _ in 0..n_frames {
                let cy = (FRAME_SIZE as f64 - 1.0) / 2.0 + rng.random_range(-3.0..3.0);
                let cx = (FRAME_SIZE as f64 - 1.0) / 2.0 + rng.random_range(-3.0..3.0);
                let jitter = rng.random_range(0.9..1.1);
                for r in 0..FRAME_SIZE {
                    for c in 0..FRAME_SIZE {
                        let dy = (r as f64 - cy) / (hh * jitter);
                        let dx = (c as f64 - cx) / (hw * jitter);
                        let base = if dx * dx + dy * dy <= 1.0 { shade } else { bg };
                        let v: f64 = base + rng.random_range(-8.0..8.0);
                        data.push(v.round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
            Ok(VisemeClip {
                frames: RawFrames::new(n_frames, FRAME_SIZE, FRAME_SIZE, data)?,
                class,
            })
        })
        .collect()
}

/// Preprocessed clips labelled either per utterance or per frame at the
/// video rate.
pub fn label_viseme_clips(
    clips: &[VisemeClip],
    norm: &super::FrameNorm,
    frame_level: bool,
) -> Result<Vec<super::LabeledClip>> {
    clips
        .iter()
        .map(|c| {
            let labels = if frame_level {
                super::ClipLabels::PerFrame {
                    rate_hz: f64::from(crate::mixsim::VIDEO_FPS),
                    labels: vec![c.class; c.frames.len()],
                }
            } else {
                super::ClipLabels::Utterance(c.class)
            };
            Ok(super::LabeledClip {
                frames: super::preprocess_frames(&c.frames, norm)?,
                labels,
            })
        })
        .collect()
}

/// Mean embedding of every clip under a frozen extractor.
pub fn pooled_embeddings(net: &super::LipNet<f32>, clips: &[super::LabeledClip]) -> Result<Vec<Vec<f32>>> {
    clips
        .iter()
        .map(|c| {
            let e = net.extract_embeddings(&c.frames)?;
            let mut mean = vec![0.0f32; super::EMBEDDING_DIM];
            for f in 0..e.len() {
                for (m, v) in mean.iter_mut().zip(e.row(f)) {
                    *m += v / e.len() as f32;
                }
            }
            Ok(mean)
        })
        .collect()
}

/// Held-out accuracy of a softmax-regression probe trained full-batch on
/// `train` features.
pub fn linear_probe_accuracy(
    train: &[(Vec<f32>, usize)],
    test: &[(Vec<f32>, usize)],
    n_classes: usize,
    steps: usize,
    seed: u64,
) -> Result<f64> {
    use crate::nn::{loss::cross_entropy, Adam, Init, Linear, ParamStore, Tensor};

    ensure!(
        !train.is_empty() && !test.is_empty(),
        Error::InvalidArgument("probe needs training and test features".into())
    );
    let dim = train[0].0.len();
    ensure!(
        train.iter().chain(test).all(|(f, c)| f.len() == dim && *c < n_classes),
        Error::InvalidArgument("probe features must share one width and valid labels".into())
    );
    // standardise with training statistics
    let n = train.len() as f32;
    let mean: Vec<f32> = (0..dim)
        .map(|j| train.iter().map(|(f, _)| f[j]).sum::<f32>() / n)
        .collect();
    let std: Vec<f32> = (0..dim)
        .map(|j| {
            (train.iter().map(|(f, _)| (f[j] - mean[j]).powi(2)).sum::<f32>() / n)
                .sqrt()
                .max(1e-6)
        })
        .collect();
    let stack = |rows: &[(Vec<f32>, usize)]| {
        let data = rows
            .iter()
            .flat_map(|(f, _)| f.iter().enumerate().map(|(j, v)| (v - mean[j]) / std[j]))
            .collect();
        Tensor::new(data, &[rows.len(), dim])
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = Linear::new(&mut Init::new(&mut store, &mut rng), dim, n_classes);
    let x = stack(train);
    let labels: Vec<usize> = train.iter().map(|(_, c)| *c).collect();
    let mut opt = Adam::new(1e-2);
    for _ in 0..steps {
        store.zero_grad();
        cross_entropy(&probe.forward(&x), &labels)?.backward();
        opt.step(&store);
    }
    let logits = probe.forward(&stack(test)).to_vec();
    let correct = test
        .iter()
        .enumerate()
        .filter(|(i, (_, c))| {
            let row = &logits[i * n_classes..(i + 1) * n_classes];
            let best = (0..n_classes).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            best == *c
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}
