//! Lip-embedding extractor: frame preprocessing, the spatio-temporal
//! network, classification heads and supervised pre-training.

mod labels;
mod model;
mod preprocess;
mod pretrain;
mod viseme;

pub use labels::{format_label_file, parse_label_file, ClipLabels};
pub use model::{
    ClassifierHead, LipEmbeddingSeq, LipNet, LipNetConfig, TargetInventory, TargetKind, CHECKPOINT_KIND, EMBEDDING_DIM,
};
pub use preprocess::{
    crop_and_resize, crop_origin, preprocess_frames, resize_bilinear, FrameNorm, FrameSequence, CROP_SIZE, INPUT_SIZE,
    MIN_FRAMES,
};
pub use pretrain::{train_extractor, LabeledClip, LipTrainConfig, LipTrainReport};
pub use viseme::{label_viseme_clips, linear_probe_accuracy, pooled_embeddings, synth_viseme_corpus, VisemeClip};
