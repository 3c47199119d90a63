//! Mixture simulation: SNR-controlled mixing, manifests, a synthetic
//! audio-visual corpus and on-disk rendering.

mod frames;
mod manifest;
mod mix;
mod render;
mod synth;

pub use frames::{decode_avf, encode_avf, read_avf, write_avf, RawFrames, AVF_MAGIC};
pub use manifest::{build_manifest, Manifest, MixtureRecord, SourceRecord, Split, MAX_ABS_SNR_DB};
pub use mix::{mix, Mixture, MIX_SNR_LIMIT_DB};
pub use render::{
    load_corpus, load_mixture, mix_examples, parse_corpus, render_manifest, write_corpus, MixtureExample,
};
pub use synth::{measured_lip_heights, synth_av_corpus, SynthUtterance, FRAME_SIZE};

/// Video frame rate of every lip stream.
pub const VIDEO_FPS: u32 = 25;

/// Audio samples spanned by one video frame at 16 kHz / 25 fps.
pub const SAMPLES_PER_FRAME: usize = 640;

/// Shortest utterance kept for simulation, in seconds.
pub const MIN_UTTERANCE_SECONDS: f64 = 2.0;
