//! Experiment configuration file.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use dynae::trainer::TrainConfig;

/// The only configuration format version understood.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dynae,
    Betavae,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dynae => "dynae",
            ModelKind::Betavae => "betavae",
        }
    }
}

/// A training experiment. Unknown keys are rejected so a misspelling fails
/// before any computation starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Free-form label of the data recipe, kept for provenance.
    #[serde(default)]
    pub recipe: Option<String>,
    /// Dataset directory written by `dynae generate`.
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_model() -> ModelKind {
    ModelKind::Dynae
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| format!("invalid config: {e}"))?;
        if cfg.version != CONFIG_VERSION {
            return Err(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            ));
        }
        cfg.train
            .validate()
            .map_err(|e| format!("invalid training settings: {e}"))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::from_json(&text)
    }
}
