//! Self-describing model snapshots.
//!
//! Layout: `AVCK`, u32 LE format version, u64 LE header length, a JSON
//! header, then every tensor as f32 LE in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::real::Real;

use super::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AVCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREAMBLE: usize = 16;
/// Headers beyond this are treated as corrupt.
const MAX_HEADER: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    /// Model family, e.g. `"avtasnet"`.
    pub kind: String,
    /// SHA-256 over kind, config and tensor inventory.
    pub arch_hash: String,
    pub config: serde_json::Value,
    /// Free-form facts (training epoch, label inventory, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub values: Vec<Vec<f32>>,
}

/// Architecture fingerprint; changes whenever the config or any tensor
/// name or shape changes.
pub fn arch_hash(kind: &str, config: &serde_json::Value, tensors: &[TensorRecord]) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update([0]);
    h.update(config.to_string().as_bytes());
    for t in tensors {
        h.update([0]);
        h.update(t.name.as_bytes());
        for d in &t.shape {
            h.update((*d as u64).to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn from_store<F: Real>(
        kind: &str,
        config: serde_json::Value,
        meta: serde_json::Value,
        store: &ParamStore<F>,
    ) -> Self {
        let tensors: Vec<TensorRecord> = store
            .inventory()
            .into_iter()
            .map(|(name, shape)| TensorRecord { name, shape })
            .collect();
        let values = store
            .entries()
            .iter()
            .map(|e| e.tensor.data().iter().map(|v| v.as_f64() as f32).collect())
            .collect();
        Self {
            header: CheckpointHeader {
                kind: kind.to_string(),
                arch_hash: arch_hash(kind, &config, &tensors),
                config,
                meta,
                tensors,
            },
            values,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serialises");
        let n: usize = self.values.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + 4 * n);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.values.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::malformed("checkpoint", reason);
        if bytes.len() < PREAMBLE || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing AVCK preamble".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        if header_len > MAX_HEADER || header_len as usize > bytes.len() - PREAMBLE {
            return Err(bad(format!("header length {header_len} exceeds file")));
        }
        let body = PREAMBLE + header_len as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[PREAMBLE..body]).map_err(|e| bad(format!("header: {e}")))?;
        let expected = arch_hash(&header.kind, &header.config, &header.tensors);
        if expected != header.arch_hash {
            return Err(bad("architecture hash does not match header".into()));
        }
        let mut total: usize = 0;
        for t in &header.tensors {
            let n = t
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| bad(format!("tensor {} is too large", t.name)))?;
            total = total
                .checked_add(n)
                .ok_or_else(|| bad("tensor sizes overflow".into()))?;
        }
        let data = &bytes[body..];
        if total.checked_mul(4) != Some(data.len()) {
            return Err(bad(format!(
                "payload holds {} bytes, tensors need {} values",
                data.len(),
                total
            )));
        }
        let mut floats = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let values = header
            .tensors
            .iter()
            .map(|t| floats.by_ref().take(t.shape.iter().product()).collect())
            .collect();
        Ok(Self { header, values })
    }

    /// Copies values into a model built from the same configuration.
    pub fn load_into<F: Real>(&self, kind: &str, store: &ParamStore<F>) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::InvalidConfig(format!(
                "checkpoint holds a {} model, expected {kind}",
                self.header.kind
            )));
        }
        let have = store.inventory();
        let matches = have.len() == self.header.tensors.len()
            && have
                .iter()
                .zip(&self.header.tensors)
                .all(|((n, s), t)| *n == t.name && *s == t.shape);
        if !matches {
            return Err(Error::InvalidConfig(
                "checkpoint tensors do not match the model architecture".into(),
            ));
        }
        for (e, v) in store.entries().iter().zip(&self.values) {
            let mut d = e.tensor.data_mut();
            for (dst, src) in d.iter_mut().zip(v) {
                *dst = F::lit(*src as f64);
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
