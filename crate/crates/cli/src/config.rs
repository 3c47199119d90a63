//! Declarative run configuration (YAML, TOML or JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use avtse::avtasnet::{AvTasNetConfig, EncoderConfig, SeparatorConfig};
use avtse::favsnet::FavsConfig;
use avtse::train::TrainConfig;

use crate::exit::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Avtasnet,
    Favsnet,
}

/// Architecture sizes the overrides are applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub model: ModelKind,
    pub preset: Preset,
    pub lipnet: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub manifests: Vec<PathBuf>,
    pub validation: Option<PathBuf>,
    /// Partial overrides of the encoder settings.
    pub encoder: Map<String, Value>,
    pub separator: Map<String, Value>,
    /// STFT window and hop of the frequency-domain model.
    pub stft: Map<String, Value>,
    pub train: TrainConfig,
}

fn overlay<T: Serialize + serde::de::DeserializeOwned>(
    base: T,
    patch: &Map<String, Value>,
    what: &str,
) -> CliResult<T> {
    let mut value = serde_json::to_value(base).expect("config serialises");
    let obj = value.as_object_mut().expect("config is an object");
    for (k, v) in patch {
        obj.insert(k.clone(), v.clone());
    }
    serde_json::from_value(value).map_err(|e| CliError::config(format!("[{what}]: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Json,
    Yaml,
    Toml,
}

impl ConfigFormat {
    /// `.json`, `.yaml`/`.yml`, anything else is TOML.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::Json,
            Some("yaml" | "yml") => Self::Yaml,
            _ => Self::Toml,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, ConfigFormat::from_path(path))
            .map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    /// Parses and validates a config document.
    pub fn parse(text: &str, format: ConfigFormat) -> CliResult<Self> {
        let bad = |e: &dyn std::fmt::Display| CliError::config(e.to_string());
        let cfg: RunConfig = match format {
            ConfigFormat::Json => serde_json::from_str(text).map_err(|e| bad(&e))?,
            ConfigFormat::Yaml => serde_yaml::from_str(text).map_err(|e| bad(&e))?,
            ConfigFormat::Toml => toml::from_str(text).map_err(|e| bad(&e))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds every section once so that bad keys fail before any work.
    pub fn validate(&self) -> CliResult<()> {
        match self.model {
            ModelKind::Avtasnet => self.avtasnet().map(|_| ()),
            ModelKind::Favsnet => self.favsnet().map(|_| ()),
        }?;
        self.train.validate().map_err(CliError::from)
    }

    fn separator(&self) -> CliResult<SeparatorConfig> {
        let base = match self.preset {
            Preset::Desk => SeparatorConfig::desk(),
            Preset::Full => SeparatorConfig::default(),
        };
        overlay(base, &self.separator, "separator")
    }

    pub fn avtasnet(&self) -> CliResult<AvTasNetConfig> {
        let base = match self.preset {
            Preset::Desk => EncoderConfig::desk(),
            Preset::Full => EncoderConfig::default(),
        };
        let cfg = AvTasNetConfig {
            encoder: overlay(base, &self.encoder, "encoder")?,
            separator: self.separator()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn favsnet(&self) -> CliResult<FavsConfig> {
        ensure_keys(&self.stft, &["window", "hop"], "stft")?;
        let mut cfg = overlay(FavsConfig::default(), &self.stft, "stft")?;
        cfg.separator = self.separator()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn ensure_keys(map: &Map<String, Value>, allowed: &[&str], what: &str) -> CliResult<()> {
    match map.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(CliError::config(format!("[{what}]: unknown key {k:?}"))),
        None => Ok(()),
    }
}
