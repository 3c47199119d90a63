//! Evaluation harness and reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::avtasnet::AvTasNet;
use crate::error::Result;
use crate::favsnet::FavsNet;
use crate::lipnet::{preprocess_frames, FrameNorm, LipEmbeddingSeq, LipNet};
use crate::masks::{apply_mask, oracle_irm, oracle_psm, PhaseSource};
use crate::mixsim::{load_mixture, Manifest, MixtureExample};
use crate::signal::{si_snr, stft, Waveform};

/// STFT used for oracle masks.
pub const ORACLE_WINDOW: usize = 512;
pub const ORACLE_HOP: usize = 256;

/// Anything that turns a mixture example into a target estimate.
pub trait Extractor {
    fn extract(&self, example: &MixtureExample) -> Result<Waveform>;

    /// Stable description folded into the report digest.
    fn describe(&self) -> String;
}

/// Returns the mixture unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl Extractor for IdentityExtractor {
    fn extract(&self, example: &MixtureExample) -> Result<Waveform> {
        Ok(example.mixture.clone())
    }

    fn describe(&self) -> String {
        "identity".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMask {
    Irm,
    Psm,
}

impl std::str::FromStr for OracleMask {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "irm" => Ok(Self::Irm),
            "psm" => Ok(Self::Psm),
            other => Err(crate::Error::InvalidArgument(format!("unknown mask {other:?}"))),
        }
    }
}

/// Upper bound obtained by masking with the true sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleExtractor {
    pub mask: OracleMask,
    pub phase: PhaseSource,
}

/// Oracle-mask reconstruction of the example's target.
pub fn oracle_extract(example: &MixtureExample, mask: OracleMask, phase: PhaseSource) -> Result<Waveform> {
    let mix = stft(&example.mixture, ORACLE_WINDOW, ORACLE_HOP)?;
    let target = stft(example.target(), ORACLE_WINDOW, ORACLE_HOP)?;
    let m = match mask {
        OracleMask::Psm => oracle_psm(&target, &mix)?,
        OracleMask::Irm => {
            let specs = example
                .sources
                .iter()
                .map(|s| stft(s, ORACLE_WINDOW, ORACLE_HOP))
                .collect::<Result<Vec<_>>>()?;
            oracle_irm(&specs)?.swap_remove(example.target_index)
        }
    };
    apply_mask(&mix, &m, phase, Some(&target))
}

impl Extractor for OracleExtractor {
    fn extract(&self, example: &MixtureExample) -> Result<Waveform> {
        oracle_extract(example, self.mask, self.phase)
    }

    fn describe(&self) -> String {
        format!("oracle {:?} {:?} {ORACLE_WINDOW}/{ORACLE_HOP}", self.mask, self.phase)
    }
}

fn embed(lipnet: &LipNet<f32>, norm: &FrameNorm, example: &MixtureExample) -> Result<LipEmbeddingSeq> {
    lipnet.extract_embeddings(&preprocess_frames(&example.lips, norm)?)
}

/// The time-domain model behind a frozen lip extractor.
pub struct AvTasNetExtractor<'a> {
    pub model: &'a AvTasNet<f32>,
    pub lipnet: &'a LipNet<f32>,
    pub norm: FrameNorm,
}

impl Extractor for AvTasNetExtractor<'_> {
    fn extract(&self, example: &MixtureExample) -> Result<Waveform> {
        self.model
            .extract(&example.mixture, &embed(self.lipnet, &self.norm, example)?)
    }

    fn describe(&self) -> String {
        format!(
            "avtasnet {} lipnet {}",
            self.model.checkpoint(serde_json::Value::Null).header.arch_hash,
            self.lipnet.checkpoint(&self.norm, None).header.arch_hash
        )
    }
}

/// The frequency-domain baseline with mixture or oracle phase.
pub struct FavsExtractor<'a> {
    pub model: &'a FavsNet<f32>,
    pub lipnet: &'a LipNet<f32>,
    pub norm: FrameNorm,
    pub phase: PhaseSource,
}

impl Extractor for FavsExtractor<'_> {
    fn extract(&self, example: &MixtureExample) -> Result<Waveform> {
        let lips = embed(self.lipnet, &self.norm, example)?;
        let oracle = (self.phase == PhaseSource::Oracle).then(|| example.target());
        self.model.favs_separate(&example.mixture, &lips, self.phase, oracle)
    }

    fn describe(&self) -> String {
        format!(
            "favsnet {} {:?}",
            self.model.checkpoint(serde_json::Value::Null).header.arch_hash,
            self.phase
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub mixture_id: String,
    pub si_snr_db: f64,
    pub mixture_si_snr_db: f64,
    pub improvement_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    pub mixture_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_utterance: Vec<UtteranceScore>,
    pub mean_si_snr: f64,
    pub mean_si_snr_improvement: f64,
    pub mean_mixture_si_snr: f64,
    pub config_digest: String,
    /// `true` when some records could not be scored.
    pub incomplete: bool,
    pub errors: Vec<RecordError>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (n, s) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl EvalReport {
    fn assemble(scores: Vec<UtteranceScore>, errors: Vec<RecordError>, description: &str) -> Self {
        Self {
            mean_si_snr: mean(scores.iter().map(|s| s.si_snr_db)),
            mean_si_snr_improvement: mean(scores.iter().map(|s| s.improvement_db)),
            mean_mixture_si_snr: mean(scores.iter().map(|s| s.mixture_si_snr_db)),
            per_utterance: scores,
            config_digest: digest(description),
            incomplete: !errors.is_empty(),
            errors,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Aligned plain-text table with a summary row.
    pub fn to_table(&self) -> String {
        let width = self
            .per_utterance
            .iter()
            .map(|s| s.mixture_id.len())
            .chain([11])
            .max()
            .unwrap_or(11);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}  {:>9}",
            "mixture_id", "si_snr", "mixture", "improve"
        );
        for s in &self.per_utterance {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.3}  {:>9.3}  {:>9.3}",
                s.mixture_id, s.si_snr_db, s.mixture_si_snr_db, s.improvement_db
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.3}  {:>9.3}  {:>9.3}",
            "mean", self.mean_si_snr, self.mean_mixture_si_snr, self.mean_si_snr_improvement
        );
        for e in &self.errors {
            let _ = writeln!(out, "error {}: {}", e.mixture_id, e.message);
        }
        out
    }
}

fn score(extractor: &dyn Extractor, example: &MixtureExample) -> Result<UtteranceScore> {
    let estimate = extractor.extract(example)?;
    let target = example.target();
    let si = si_snr(&estimate, target)?;
    let base = si_snr(&example.mixture, target)?;
    Ok(UtteranceScore {
        mixture_id: example.mixture_id.clone(),
        si_snr_db: si,
        mixture_si_snr_db: base,
        improvement_db: si - base,
    })
}

/// Scores already loaded examples.
pub fn evaluate_examples(extractor: &dyn Extractor, examples: &[MixtureExample]) -> EvalReport {
    let mut scores = Vec::new();
    let mut errors = Vec::new();
    for ex in examples {
        match score(extractor, ex) {
            Ok(s) => scores.push(s),
            Err(e) => errors.push(RecordError {
                mixture_id: ex.mixture_id.clone(),
                message: e.to_string(),
            }),
        }
    }
    EvalReport::assemble(scores, errors, &extractor.describe())
}

/// Loads every record of a rendered manifest and scores it; unreadable
/// records are listed in the report rather than aborting.
pub fn evaluate(extractor: &dyn Extractor, manifest: &Manifest, root: &Path) -> EvalReport {
    let mut scores = Vec::new();
    let mut errors = Vec::new();
    for rec in &manifest.records {
        match load_mixture(rec, root).and_then(|ex| score(extractor, &ex)) {
            Ok(s) => scores.push(s),
            Err(e) => errors.push(RecordError {
                mixture_id: rec.mixture_id.clone(),
                message: e.to_string(),
            }),
        }
    }
    EvalReport::assemble(scores, errors, &extractor.describe())
}

/// Mean Si-SNR of every model on every test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossConditionTable {
    pub trainings: Vec<String>,
    pub tests: Vec<String>,
    /// `cells[i][j]`: training `i` on test set `j`.
    pub cells: Vec<Vec<f64>>,
}

impl CrossConditionTable {
    pub fn cell(&self, training: &str, test: &str) -> Option<f64> {
        let i = self.trainings.iter().position(|t| t == training)?;
        let j = self.tests.iter().position(|t| t == test)?;
        Some(self.cells[i][j])
    }

    pub fn to_table(&self) -> String {
        let w0 = self.trainings.iter().map(String::len).chain([5]).max().unwrap_or(5);
        let mut out = format!("{:<w0$}", "train");
        for t in &self.tests {
            let _ = write!(out, "  {:>9}", t);
        }
        out.push('\n');
        for (name, row) in self.trainings.iter().zip(&self.cells) {
            let _ = write!(out, "{:<w0$}", name);
            for v in row {
                let _ = write!(out, "  {:>9.3}", v);
            }
            out.push('\n');
        }
        out
    }
}

pub fn cross_condition_eval(
    trainings: &[(&str, &dyn Extractor)],
    tests: &[(&str, &[MixtureExample])],
) -> CrossConditionTable {
    let cells = trainings
        .iter()
        .map(|(_, model)| {
            tests
                .iter()
                .map(|(_, examples)| evaluate_examples(*model, examples).mean_si_snr)
                .collect()
        })
        .collect();
    CrossConditionTable {
        trainings: trainings.iter().map(|(n, _)| n.to_string()).collect(),
        tests: tests.iter().map(|(n, _)| n.to_string()).collect(),
        cells,
    }
}
