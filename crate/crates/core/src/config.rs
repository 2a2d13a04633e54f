//! Run configuration: one TOML file with a section per stage.
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! manifest = "cohort/manifest.json"
//!
//! [pretrain]
//! epochs = 50
//!
//! [generate]
//! combos = ["wsi->rna", "wsi+rna->dnam"]
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::downstream::{FewShotConfig, SurvivalConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PretrainConfig};
use crate::recon::{default_grid, Combo};
use crate::synth::SynthConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Cohort used for pre-training and fine-tuning.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Held-out cohort for `generate` and `evaluate`; falls back to `manifest`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    /// Empty means every `wsi->o` and `wsi+o'->o` over the cohort's modalities.
    pub combos: Vec<Combo>,
    pub grid: Vec<f64>,
    /// Welch test level selecting features for direction accuracy.
    pub alpha: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            combos: Vec::new(),
            grid: default_grid(),
            alpha: 0.01,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub subtype: FewShotConfig,
    pub survival: SurvivalConfig,
    pub generate: GenerateConfig,
}

impl RunConfig {
    /// Parse without validating. Errors name the offending key path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<file>", e.message().to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::config(if key == "." { "<file>".to_string() } else { key }, e.into_inner().message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<config>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.subtype.options().validate("subtype")?;
        if self.subtype.k == 0 {
            return Err(Error::config("subtype.k", "must be positive"));
        }
        if self.subtype.runs == 0 {
            return Err(Error::config("subtype.runs", "must be positive"));
        }
        self.survival.options().validate("survival")?;
        if self.survival.folds < 2 {
            return Err(Error::config("survival.folds", "need at least 2 folds"));
        }
        if self.survival.num_intervals < 2 {
            return Err(Error::config("survival.num_intervals", "need at least 2 intervals"));
        }
        let g = &self.generate;
        if g.grid.is_empty() || g.grid.iter().any(|t| !(-1.0..=1.0).contains(t)) {
            return Err(Error::config("generate.grid", "thresholds must lie in [-1, 1]"));
        }
        if !(g.alpha > 0.0 && g.alpha < 1.0) {
            return Err(Error::config("generate.alpha", format!("{} outside (0, 1)", g.alpha)));
        }
        Ok(())
    }
}
