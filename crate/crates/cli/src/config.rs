//! Experiment configuration: parsing, serialization and field-level validation.

use std::fmt;
use std::path::{Path, PathBuf};

use fluctuant_core::dynamics::{build_rate_model, ModelSpec, RateModel};
use fluctuant_core::{Error as CoreError, ModelParams};
use serde::{Deserialize, Serialize};

use crate::experiments::Experiment;

/// A configuration problem tied to a dotted field path such as `params.rho`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Attach a core validation error to the block it came from.
    pub fn from_core(block: &str, err: &CoreError) -> Self {
        match err {
            CoreError::InvalidParameter { name, reason } => {
                let field = if name.contains('.') {
                    (*name).to_string()
                } else {
                    format!("{block}.{name}")
                };
                Self::new(field, reason.clone())
            }
            other => Self::new(block, other.to_string()),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsBlock {
    pub rho: f64,
    pub n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring_factor: Option<usize>,
    /// Macroscopic horizon T; defaults to the last checkpoint of the experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub trajectories: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub model: ModelSpec,
    pub params: ParamsBlock,
    pub budget: Budget,
    pub experiment: Experiment,
}

fn default_output() -> PathBuf {
    PathBuf::from("fluctuant-out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl Format {
    pub fn of(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            _ => Format::Toml,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, format: Format) -> Result<Self, ConfigError> {
        match format {
            Format::Toml => toml::from_str(text).map_err(|e| ConfigError::new(toml_field(&e), e.message().to_string())),
            Format::Json => serde_json::from_str(text).map_err(|e| ConfigError::new("config", e.to_string())),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text, Format::of(path))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes to JSON")
    }

    /// Compact JSON used for hashing.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes to JSON")
    }

    pub fn horizon(&self) -> f64 {
        self.params.horizon.unwrap_or_else(|| self.experiment.horizon())
    }

    /// Resolved physical parameters.
    pub fn model_params(&self) -> Result<ModelParams, ConfigError> {
        let p = &self.params;
        let horizon = self.horizon();
        let base = match p.ring_factor {
            Some(f) => ModelParams::with_ring_factor(p.rho, p.n, horizon, f),
            None => ModelParams::new(p.rho, p.n, horizon),
        }
        .map_err(|e| ConfigError::from_core("params", &e))?;
        match p.ring_size {
            Some(size) => base.with_ring_size(size).map_err(|e| ConfigError::from_core("params", &e)),
            None => Ok(base),
        }
    }

    pub fn rate_model(&self) -> Result<RateModel, ConfigError> {
        build_rate_model(&self.model, self.params.n).map_err(|e| ConfigError::from_core("model", &e))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let params = self.model_params()?;
        if let Some(h) = self.params.horizon {
            if h < self.experiment.horizon() {
                return Err(ConfigError::new(
                    "params.horizon",
                    format!("{h} is before the last checkpoint {}", self.experiment.horizon()),
                ));
            }
        }
        let model = self.rate_model()?;
        if model.min_ring() > params.ring_size {
            return Err(ConfigError::new(
                "params.ring_size",
                format!("the model needs at least {} sites", model.min_ring()),
            ));
        }
        if self.budget.trajectories == 0 && self.experiment.uses_trajectories() {
            return Err(ConfigError::new("budget.trajectories", "must be positive"));
        }
        if self.budget.workers == Some(0) {
            return Err(ConfigError::new("budget.workers", "must be positive"));
        }
        self.experiment.validate(&params, &model)
    }
}

fn toml_field(e: &toml::de::Error) -> String {
    // toml reports "unknown field `x`" or "invalid value ... for key `params.rho`" in its message
    let msg = e.message();
    if let Some(start) = msg.find("for key `") {
        let rest = &msg[start + 9..];
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    "config".to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn presets_round_trip() {
        for name in presets::NAMES {
            let cfg = presets::preset(name).unwrap();
            let back = ExperimentConfig::parse(&cfg.to_toml(), Format::Toml).unwrap();
            assert_eq!(back, cfg, "{name}");
            let back = ExperimentConfig::parse(&cfg.to_json(), Format::Json).unwrap();
            assert_eq!(back, cfg, "{name}");
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn density_error_names_the_field() {
        let mut cfg = presets::preset("kv").unwrap();
        cfg.params.rho = 1.5;
        assert_eq!(cfg.validate().unwrap_err().field, "params.rho");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = presets::preset("kv").unwrap().to_toml().replace("seed =", "sede = 1\nseed =");
        assert!(ExperimentConfig::parse(&text, Format::Toml).is_err());
    }
}
