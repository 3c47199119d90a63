//! Reading and writing corpora and rendered mixtures under a data root.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::signal::wav::{read_wav, write_wav};
use crate::signal::Waveform;

use super::{
    mix, read_avf, write_avf, Manifest, MixtureRecord, RawFrames, SourceRecord, SynthUtterance, SAMPLES_PER_FRAME,
};

/// Peak level used when a rendered mixture would clip at 16 bits.
const EXPORT_PEAK: f64 = 0.999;

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Writes audio and frames under `root` and a `corpus.jsonl` index.
pub fn write_corpus(utterances: &[SynthUtterance], root: &Path) -> Result<Vec<SourceRecord>> {
    let mut index = String::new();
    for u in utterances {
        let audio = root.join(&u.record.audio_path);
        let video = root.join(&u.record.video_path);
        ensure_parent(&audio)?;
        ensure_parent(&video)?;
        write_wav(&audio, &u.audio)?;
        write_avf(&video, &u.frames)?;
        index.push_str(&serde_json::to_string(&u.record)?);
        index.push('\n');
    }
    let path = root.join("corpus.jsonl");
    ensure_parent(&path)?;
    fs::write(&path, index).map_err(|e| Error::io(&path, e))?;
    Ok(utterances.iter().map(|u| u.record.clone()).collect())
}

pub fn load_corpus(path: &Path) -> Result<Vec<SourceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

/// Parses a corpus index, one JSON source record per line.
pub fn parse_corpus(text: &str) -> Result<Vec<SourceRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str::<SourceRecord>(l)
                .map_err(|e| Error::malformed("corpus", format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Renders every record: the mixture, each scaled source and the target's
/// frames, all next to `mixture_path` under `root`.
///
/// When the mixture or a source would clip, everything in that record is
/// scaled down by the same factor.
pub fn render_manifest(manifest: &Manifest, corpus: &[SourceRecord], root: &Path) -> Result<()> {
    let by_id: HashMap<&str, &SourceRecord> = corpus.iter().map(|r| (r.utterance_id.as_str(), r)).collect();
    for rec in &manifest.records {
        let sources: Vec<&SourceRecord> = rec
            .source_ids
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown utterance {id}")))
            })
            .collect::<Result<_>>()?;
        let audio: Vec<Waveform> = sources
            .iter()
            .map(|s| read_wav(root.join(&s.audio_path)))
            .collect::<Result<_>>()?;
        let mixed = mix(&audio, &rec.snrs_db)?;
        ensure!(
            mixed.mixture.len() == rec.truncated_len,
            Error::InvalidArgument(format!(
                "{}: mixed length {} differs from manifest {}",
                rec.mixture_id,
                mixed.mixture.len(),
                rec.truncated_len
            ))
        );
        let peak = mixed
            .scaled_sources
            .iter()
            .chain(std::iter::once(&mixed.mixture))
            .map(Waveform::peak)
            .fold(0.0, f64::max);
        let gain = if peak > EXPORT_PEAK { EXPORT_PEAK / peak } else { 1.0 };

        let mixture_path = root.join(&rec.mixture_path);
        ensure_parent(&mixture_path)?;
        write_wav(&mixture_path, &mixed.mixture.scaled(gain))?;
        for (i, s) in mixed.scaled_sources.iter().enumerate() {
            write_wav(root.join(rec.source_path(i)), &s.scaled(gain))?;
        }
        let video = read_avf(root.join(&sources[rec.target_index].video_path))?;
        let n_frames = (rec.truncated_len as f64 / SAMPLES_PER_FRAME as f64).round() as usize;
        write_avf(root.join(rec.lips_path()), &video.truncated(n_frames.min(video.len()))?)?;
    }
    Ok(())
}

/// In-memory counterpart of [`render_manifest`] for synthetic corpora: the
/// same mixing and frame truncation, without quantisation or export scaling.
pub fn mix_examples(manifest: &Manifest, corpus: &[SynthUtterance]) -> Result<Vec<MixtureExample>> {
    let by_id: HashMap<&str, &SynthUtterance> = corpus.iter().map(|u| (u.record.utterance_id.as_str(), u)).collect();
    manifest
        .records
        .iter()
        .map(|rec| {
            let utts: Vec<&SynthUtterance> = rec
                .source_ids
                .iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::InvalidArgument(format!("unknown utterance {id}")))
                })
                .collect::<Result<_>>()?;
            let audio: Vec<Waveform> = utts.iter().map(|u| u.audio.clone()).collect();
            let mixed = mix(&audio, &rec.snrs_db)?;
            let video = &utts[rec.target_index].frames;
            let n_frames = (mixed.mixture.len() as f64 / SAMPLES_PER_FRAME as f64).round() as usize;
            Ok(MixtureExample {
                mixture_id: rec.mixture_id.clone(),
                mixture: mixed.mixture,
                sources: mixed.scaled_sources,
                target_index: rec.target_index,
                lips: video.truncated(n_frames.min(video.len()))?,
            })
        })
        .collect()
}

/// A rendered mixture loaded back from disk.
#[derive(Debug, Clone)]
pub struct MixtureExample {
    pub mixture_id: String,
    pub mixture: Waveform,
    pub sources: Vec<Waveform>,
    pub target_index: usize,
    pub lips: RawFrames,
}

impl MixtureExample {
    pub fn target(&self) -> &Waveform {
        &self.sources[self.target_index]
    }
}

pub fn load_mixture(record: &MixtureRecord, root: &Path) -> Result<MixtureExample> {
    let mixture = read_wav(root.join(&record.mixture_path))?;
    let sources = (0..record.num_speakers())
        .map(|i| read_wav(root.join(record.source_path(i))))
        .collect::<Result<Vec<_>>>()?;
    for s in &sources {
        ensure!(
            s.len() == mixture.len(),
            Error::LengthMismatch {
                left: mixture.len(),
                right: s.len()
            }
        );
    }
    let lips = read_avf(root.join(record.lips_path()))?;
    Ok(MixtureExample {
        mixture_id: record.mixture_id.clone(),
        mixture,
        sources,
        target_index: record.target_index,
        lips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixsim::{build_manifest, synth_av_corpus, Split};

    #[test]
    fn render_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let utts = synth_av_corpus(4, 2.0, 11).unwrap();
        let corpus = write_corpus(&utts, dir.path()).unwrap();
        assert_eq!(load_corpus(&dir.path().join("corpus.jsonl")).unwrap(), corpus);
        let m = build_manifest(&corpus, 3, 2, (-5.0, 5.0), 1, Split::Test).unwrap();
        render_manifest(&m, &corpus, dir.path()).unwrap();
        for r in &m.records {
            let ex = load_mixture(r, dir.path()).unwrap();
            assert_eq!(ex.mixture.len(), 32_000);
            assert_eq!(ex.sources.len(), 3);
            assert_eq!(ex.lips.len(), 50);
            // sum of quantised sources stays within a few LSB of the mixture
            for k in 0..ex.mixture.len() {
                let s: f64 = ex.sources.iter().map(|w| w.samples()[k]).sum();
                assert!((s - ex.mixture.samples()[k]).abs() < 4.0 / 32768.0);
            }
        }
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let utts = synth_av_corpus(2, 2.0, 1).unwrap();
        let corpus: Vec<_> = utts.iter().map(|u| u.record.clone()).collect();
        let m = build_manifest(&corpus, 2, 1, (-5.0, 5.0), 1, Split::Test).unwrap();
        assert!(matches!(
            render_manifest(&m, &corpus, dir.path()),
            Err(Error::MissingFile(_))
        ));
        assert!(matches!(
            load_mixture(&m.records[0], dir.path()),
            Err(Error::MissingFile(_))
        ));
    }
}
