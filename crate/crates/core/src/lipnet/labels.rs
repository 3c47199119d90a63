//! Pre-training label files.
//!
//! One clip per line, whitespace separated:
//!
//! ```text
//! # comment
//! clip-001 word 3
//! clip-002 frames 25 0 0 17 17 17 4
//! ```
//!
//! `word` carries one utterance label; `frames` carries the label rate in
//! Hz followed by one label per step.

use crate::error::{Error, Result};
use crate::mixsim::VIDEO_FPS;

use super::model::TargetInventory;

#[derive(Debug, Clone, PartialEq)]
pub enum ClipLabels {
    Utterance(usize),
    PerFrame { rate_hz: f64, labels: Vec<usize> },
}

impl ClipLabels {
    /// Checks the labels against an inventory and a clip of `frames` frames.
    pub fn validate(&self, inventory: &TargetInventory, frames: usize) -> Result<()> {
        let k = inventory.num_classes;
        match (self, inventory.is_frame_level()) {
            (ClipLabels::Utterance(c), false) => {
                if *c >= k {
                    return Err(Error::InvalidArgument(format!("label {c} outside {k} classes")));
                }
            }
            (ClipLabels::PerFrame { rate_hz, labels }, true) => {
                if (*rate_hz - f64::from(VIDEO_FPS)).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "labels at {rate_hz} Hz do not match the {VIDEO_FPS} fps video"
                    )));
                }
                if labels.len() != frames {
                    return Err(Error::LengthMismatch {
                        left: frames,
                        right: labels.len(),
                    });
                }
                if let Some(c) = labels.iter().find(|&&c| c >= k) {
                    return Err(Error::InvalidArgument(format!("label {c} outside {k} classes")));
                }
            }
            (ClipLabels::Utterance(_), true) => {
                return Err(Error::InvalidArgument("phone inventories need per-frame labels".into()))
            }
            (ClipLabels::PerFrame { .. }, false) => {
                return Err(Error::InvalidArgument(
                    "word inventories need one label per utterance".into(),
                ))
            }
        }
        Ok(())
    }
}

pub fn parse_label_file(text: &str) -> Result<Vec<(String, ClipLabels)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| Error::malformed("label file", format!("line {}: {reason}", n + 1));
        let mut fields = line.split_whitespace();
        let id = fields.next().ok_or_else(|| bad("missing clip id"))?;
        let kind = fields.next().ok_or_else(|| bad("missing label kind"))?;
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad label {s:?}")));
        let labels = match kind {
            "word" => {
                let c = int(fields.next().ok_or_else(|| bad("missing word label"))?)?;
                if fields.next().is_some() {
                    return Err(bad("trailing fields after word label"));
                }
                ClipLabels::Utterance(c)
            }
            "frames" => {
                let rate: f64 = fields
                    .next()
                    .ok_or_else(|| bad("missing label rate"))?
                    .parse()
                    .map_err(|_| bad("bad label rate"))?;
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(bad("label rate must be positive"));
                }
                let labels = fields.map(int).collect::<Result<Vec<_>>>()?;
                if labels.is_empty() {
                    return Err(bad("no frame labels"));
                }
                ClipLabels::PerFrame { rate_hz: rate, labels }
            }
            other => return Err(bad(&format!("unknown label kind {other:?}"))),
        };
        out.push((id.to_string(), labels));
    }
    Ok(out)
}

pub fn format_label_file(entries: &[(String, ClipLabels)]) -> String {
    let mut s = String::new();
    for (id, labels) in entries {
        match labels {
            ClipLabels::Utterance(c) => s.push_str(&format!("{id} word {c}\n")),
            ClipLabels::PerFrame { rate_hz, labels } => {
                s.push_str(&format!("{id} frames {rate_hz}"));
                for l in labels {
                    s.push_str(&format!(" {l}"));
                }
                s.push('\n');
            }
        }
    }
    s
}
