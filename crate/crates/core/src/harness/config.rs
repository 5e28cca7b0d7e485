//! Experiment description loaded from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{MissingPolicy, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::{Activation, TrainingConfig};
use crate::vcp::{Region, VcpMethod};

/// Runs longer than this need an explicit opt-in.
pub const DESK_EPOCH_LIMIT: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub missing: MissingPolicy,
    #[serde(default)]
    pub expansion: Option<ExpansionConfig>,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub epsilon: EpsilonPolicy,
    #[serde(default)]
    pub vcp: VcpConfig,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

fn default_checkpoint_every() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    Csv { path: PathBuf, label_column: String },
}

/// Synthetic two-Gaussian data; without `seed` the run seed is used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub m: usize,
    pub n: usize,
    pub separation: f64,
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SyntheticConfig {
    /// Reads a standalone synthetic-data description.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn resolve(&self, run_seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            m: self.m,
            n: self.n,
            separation: self.separation,
            label_noise: self.label_noise,
            seed: self.seed.unwrap_or(run_seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionConfig {
    pub degree: usize,
    #[serde(default = "default_true")]
    pub include_bias: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Linear {
        /// Defaults to `false` when the expansion supplies a constant term.
        #[serde(default)]
        fit_bias: Option<bool>,
    },
    Mlp {
        layers: Vec<usize>,
        #[serde(default)]
        activation: Activation,
        #[serde(default)]
        dropout_rate: f64,
    },
}

/// Named radii from the reference settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonPreset {
    /// Degree-6 expanded logistic regression on 9 inputs.
    ExpandedLogistic,
    /// MLPs on 9 standardized inputs.
    Mlp9,
    /// MLPs on 14 standardized inputs.
    Mlp14,
}

impl EpsilonPreset {
    pub fn value(self) -> f64 {
        match self {
            EpsilonPreset::ExpandedLogistic => 35.00,
            EpsilonPreset::Mlp9 => 1.500,
            EpsilonPreset::Mlp14 => 0.373,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum EpsilonPolicy {
    Fixed(f64),
    /// `base * sqrt(n' / n)` from input to model feature dimension.
    Rescale {
        base: f64,
    },
    Preset(EpsilonPreset),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VcpConfig {
    #[serde(default)]
    pub region: Region,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub method: VcpMethod,
}

fn default_samples() -> usize {
    1000
}

impl Default for VcpConfig {
    fn default() -> Self {
        Self {
            region: Region::Ball,
            samples: default_samples(),
            method: VcpMethod::MonteCarlo,
        }
    }
}

impl ExperimentConfig {
    /// Parses a config document. A `run.json` written by a previous run is
    /// accepted too; its `config` member is used.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        // Any schema problem in an experiment description is a config error.
        let json_err =
            |e: serde_json::Error| Error::config(origin.display().to_string(), e.to_string());
        let value: serde_json::Value = serde_json::from_str(text).map_err(json_err)?;
        let value = match value {
            serde_json::Value::Object(mut map)
                if map.contains_key("code_version") && map.contains_key("config") =>
            {
                map.remove("config").expect("checked")
            }
            other => other,
        };
        let mut config: Self = serde_json::from_value(value).map_err(json_err)?;
        if let DatasetSource::Csv { path, .. } = &mut config.dataset {
            if path.is_relative() {
                if let Some(dir) = origin.parent() {
                    *path = dir.join(&*path);
                }
            }
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Checks field ranges. Runs beyond [`DESK_EPOCH_LIMIT`] epochs need `full`.
    pub fn validate(&self, full: bool) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction", "must lie in (0, 1)"));
        }
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.resolve(self.seed).validate()?;
        }
        if let Some(e) = &self.expansion {
            if e.degree == 0 {
                return Err(Error::config("expansion.degree", "must be at least 1"));
            }
        }
        match &self.model {
            ModelConfig::Linear { .. } => {}
            ModelConfig::Mlp {
                layers,
                dropout_rate,
                ..
            } => {
                if layers.is_empty() || layers.contains(&0) {
                    return Err(Error::config(
                        "model.mlp.layers",
                        "need at least one positive width",
                    ));
                }
                if !(0.0..1.0).contains(dropout_rate) {
                    return Err(Error::config(
                        "model.mlp.dropout_rate",
                        "must lie in [0, 1)",
                    ));
                }
            }
        }
        self.training.validate()?;
        if !full && self.training.epochs > DESK_EPOCH_LIMIT {
            return Err(Error::config(
                "training.epochs",
                format!(
                    "{} epochs exceeds the desk limit of {DESK_EPOCH_LIMIT}; pass --full to run it",
                    self.training.epochs
                ),
            ));
        }
        if self.checkpoint_every == 0 || self.checkpoint_every > self.training.epochs {
            return Err(Error::config(
                "checkpoint_every",
                "must lie in [1, training.epochs]",
            ));
        }
        let eps = match self.epsilon {
            EpsilonPolicy::Fixed(v) | EpsilonPolicy::Rescale { base: v } => v,
            EpsilonPolicy::Preset(p) => p.value(),
        };
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::config("epsilon", "must be positive and finite"));
        }
        if self.vcp.samples == 0 {
            return Err(Error::config("vcp.samples", "must be at least 1"));
        }
        if self.vcp.method == VcpMethod::Analytic
            && !matches!(self.model, ModelConfig::Linear { .. })
        {
            return Err(Error::config(
                "vcp.method",
                "analytic estimation needs a linear model",
            ));
        }
        Ok(())
    }

    /// Resolved radius for a run mapping `input_dim` raw features to
    /// `feature_dim` model inputs.
    pub fn resolve_epsilon(&self, input_dim: usize, feature_dim: usize) -> Result<f64> {
        match self.epsilon {
            EpsilonPolicy::Fixed(v) => Ok(v),
            EpsilonPolicy::Preset(p) => Ok(p.value()),
            EpsilonPolicy::Rescale { base } => {
                crate::vcp::rescale_epsilon(base, input_dim, feature_dim)
            }
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
