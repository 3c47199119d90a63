use std::fmt;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::signal::SAMPLE_RATE;

use super::MIN_UTTERANCE_SECONDS;

/// Interferer SNRs are drawn from within this bound.
pub const MAX_ABS_SNR_DB: f64 = 5.0;

/// One corpus utterance with synchronised audio and lip video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceRecord {
    pub utterance_id: String,
    pub audio_path: String,
    pub video_path: String,
    /// Seconds.
    pub duration: f64,
}

impl SourceRecord {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.duration.is_finite() && self.duration >= MIN_UTTERANCE_SECONDS,
            Error::InvalidArgument(format!(
                "utterance {} is {:.3}s, shorter than {MIN_UTTERANCE_SECONDS}s",
                self.utterance_id, self.duration
            ))
        );
        Ok(())
    }
}

/// One simulated mixture. Speaker `target_index` is the one to extract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureRecord {
    pub mixture_id: String,
    pub source_ids: Vec<String>,
    pub snrs_db: Vec<f64>,
    pub target_index: usize,
    pub mixture_path: String,
    /// Samples.
    pub truncated_len: usize,
}

impl MixtureRecord {
    pub fn num_speakers(&self) -> usize {
        self.source_ids.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::malformed("mixture record", reason);
        let n = self.source_ids.len();
        ensure!(
            (2..=3).contains(&n),
            bad(format!("{}: {n} sources, expected 2 or 3", self.mixture_id))
        );
        ensure!(
            self.snrs_db.len() == n,
            bad(format!(
                "{}: {} SNRs for {n} sources",
                self.mixture_id,
                self.snrs_db.len()
            ))
        );
        ensure!(
            self.snrs_db[0] == 0.0,
            bad(format!("{}: reference SNR must be 0 dB", self.mixture_id))
        );
        ensure!(
            self.snrs_db.iter().all(|s| s.is_finite() && s.abs() <= MAX_ABS_SNR_DB),
            bad(format!("{}: SNR outside ±{MAX_ABS_SNR_DB} dB", self.mixture_id))
        );
        ensure!(
            self.target_index < n,
            bad(format!(
                "{}: target index {} out of range",
                self.mixture_id, self.target_index
            ))
        );
        ensure!(
            self.truncated_len >= 1,
            bad(format!("{}: empty mixture", self.mixture_id))
        );
        Ok(())
    }

    /// `<stem>.s<i>.wav` next to the mixture: the scaled, truncated source `i`.
    pub fn source_path(&self, i: usize) -> String {
        format!("{}.s{i}.wav", stem(&self.mixture_path))
    }

    /// `<stem>.lips.avf` next to the mixture: the target speaker's frames.
    pub fn lips_path(&self) -> String {
        format!("{}.lips.avf", stem(&self.mixture_path))
    }

    /// `<stem>.target.wav`: extraction output.
    pub fn extracted_path(&self) -> String {
        format!("{}.target.wav", stem(&self.mixture_path))
    }
}

fn stem(path: &str) -> &str {
    path.strip_suffix(".wav").unwrap_or(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// Mixtures of one split and one speaker count.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<MixtureRecord>,
    pub split: Split,
    pub num_speakers: usize,
}

impl Manifest {
    pub fn new(records: Vec<MixtureRecord>, split: Split) -> Result<Self> {
        ensure!(!records.is_empty(), Error::malformed("manifest", "no records"));
        for r in &records {
            r.validate()?;
        }
        let num_speakers = records[0].num_speakers();
        ensure!(
            records.iter().all(|r| r.num_speakers() == num_speakers),
            Error::malformed("manifest", "records disagree on the number of speakers")
        );
        Ok(Self {
            records,
            split,
            num_speakers,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per line, `\n`-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serialises"));
            out.push('\n');
        }
        out
    }

    /// Blank lines are ignored; every other line must be one record.
    pub fn from_jsonl(text: &str, split: Split) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<MixtureRecord>(l)
                    .map_err(|e| Error::malformed("manifest", format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(records, split)
    }

    pub fn read(path: impl AsRef<Path>, split: Split) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, split)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Samples `count` mixtures of `n_speakers` distinct utterances.
///
/// Source 0 is the target at 0 dB; the interferer SNRs are uniform on
/// `snr_range`. Keeping splits speaker-disjoint is up to the caller, who
/// passes a disjoint corpus per split.
pub fn build_manifest(
    corpus: &[SourceRecord],
    n_speakers: usize,
    count: usize,
    snr_range: (f64, f64),
    seed: u64,
    split: Split,
) -> Result<Manifest> {
    ensure!(
        (2..=3).contains(&n_speakers),
        Error::InvalidArgument(format!("n_speakers must be 2 or 3, got {n_speakers}"))
    );
    ensure!(
        corpus.len() >= n_speakers,
        Error::InvalidArgument(format!(
            "corpus of {} utterances cannot supply {n_speakers} speakers",
            corpus.len()
        ))
    );
    ensure!(count >= 1, Error::InvalidArgument("count must be at least 1".into()));
    let (lo, hi) = snr_range;
    ensure!(
        lo.is_finite() && hi.is_finite() && lo <= hi && lo >= -MAX_ABS_SNR_DB && hi <= MAX_ABS_SNR_DB,
        Error::InvalidArgument(format!("SNR range [{lo}, {hi}] must lie within ±{MAX_ABS_SNR_DB} dB"))
    );
    for r in corpus {
        r.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..count)
        .map(|k| {
            let picks = index::sample(&mut rng, corpus.len(), n_speakers).into_vec();
            let mut snrs_db = vec![0.0];
            snrs_db.extend((1..n_speakers).map(|_| rng.random_range(lo..=hi)));
            let shortest = picks.iter().map(|&i| corpus[i].duration).fold(f64::INFINITY, f64::min);
            let mixture_id = format!("{split}-{n_speakers}spk-{k:05}");
            MixtureRecord {
                mixture_path: format!("mixtures/{mixture_id}.wav"),
                mixture_id,
                source_ids: picks.iter().map(|&i| corpus[i].utterance_id.clone()).collect(),
                snrs_db,
                target_index: 0,
                truncated_len: (shortest * SAMPLE_RATE as f64).round() as usize,
            }
        })
        .collect();
    Manifest::new(records, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize) -> Vec<SourceRecord> {
        (0..n)
            .map(|i| SourceRecord {
                utterance_id: format!("u{i}"),
                audio_path: format!("corpus/u{i}.wav"),
                video_path: format!("corpus/u{i}.avf"),
                duration: 2.0 + 0.04 * i as f64,
            })
            .collect()
    }

    #[test]
    fn unique_pair_from_two_utterances() {
        let m = build_manifest(&corpus(2), 2, 1, (-5.0, 5.0), 3, Split::Test).unwrap();
        let mut ids = m.records[0].source_ids.clone();
        ids.sort();
        assert_eq!(ids, vec!["u0", "u1"]);
        assert_eq!(m.records[0].truncated_len, 32_000);
    }

    #[test]
    fn snrs_respect_range_and_reference() {
        let m = build_manifest(&corpus(10), 3, 200, (-5.0, 5.0), 1, Split::Train).unwrap();
        for r in &m.records {
            assert_eq!(r.snrs_db[0], 0.0);
            assert!(r.snrs_db.iter().all(|s| (-5.0..=5.0).contains(s)));
            assert_eq!(r.source_ids.len(), 3);
            let mut ids = r.source_ids.clone();
            ids.dedup();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 3);
        }
    }

    #[test]
    fn seeded_manifests_are_byte_identical() {
        let a = build_manifest(&corpus(20), 2, 50, (-5.0, 5.0), 9, Split::Test).unwrap();
        let b = build_manifest(&corpus(20), 2, 50, (-5.0, 5.0), 9, Split::Test).unwrap();
        let c = build_manifest(&corpus(20), 2, 50, (-5.0, 5.0), 10, Split::Test).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_ne!(a.to_jsonl(), c.to_jsonl());
    }

    #[test]
    fn jsonl_keys_are_field_names() {
        let m = build_manifest(&corpus(3), 2, 1, (-5.0, 5.0), 0, Split::Test).unwrap();
        let line = m.to_jsonl();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            vec![
                "mixture_id",
                "mixture_path",
                "snrs_db",
                "source_ids",
                "target_index",
                "truncated_len"
            ]
        );
        assert_eq!(Manifest::from_jsonl(&line, Split::Test).unwrap(), m);
    }

    #[test]
    fn error_paths() {
        assert!(build_manifest(&corpus(1), 2, 1, (-5.0, 5.0), 0, Split::Test).is_err());
        assert!(build_manifest(&corpus(4), 4, 1, (-5.0, 5.0), 0, Split::Test).is_err());
        assert!(build_manifest(&corpus(4), 2, 0, (-5.0, 5.0), 0, Split::Test).is_err());
        assert!(build_manifest(&corpus(4), 2, 1, (-6.0, 5.0), 0, Split::Test).is_err());
        let mut short = corpus(3);
        short[0].duration = 1.5;
        assert!(build_manifest(&short, 2, 1, (-5.0, 5.0), 0, Split::Test).is_err());
        assert!(Manifest::from_jsonl("{\"mixture_id\":1}", Split::Test).is_err());
        assert!(Manifest::from_jsonl("", Split::Test).is_err());
    }

    #[test]
    fn derived_paths() {
        let m = build_manifest(&corpus(3), 2, 1, (-5.0, 5.0), 0, Split::Test).unwrap();
        let r = &m.records[0];
        assert_eq!(r.mixture_path, "mixtures/test-2spk-00000.wav");
        assert_eq!(r.source_path(1), "mixtures/test-2spk-00000.s1.wav");
        assert_eq!(r.lips_path(), "mixtures/test-2spk-00000.lips.avf");
    }
}
