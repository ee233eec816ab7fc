//! Flat key-value run configuration.
//!
//! The file is TOML restricted to top-level `key = value` pairs. Keys are the
//! [`SolverConfig`] field names plus `cpv_threshold`, `confidence`, `gamma`
//! and `eta`. Missing keys take their defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monitor::{DEFAULT_CONFIDENCE, DEFAULT_CPV_THRESHOLD};
use crate::solver::SolverConfig;

pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_ETA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub solver: SolverConfig,
    pub cpv_threshold: f64,
    pub confidence: f64,
    pub gamma: f64,
    pub eta: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            solver: SolverConfig::default(),
            cpv_threshold: DEFAULT_CPV_THRESHOLD,
            confidence: DEFAULT_CONFIDENCE,
            gamma: DEFAULT_GAMMA,
            eta: DEFAULT_ETA,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.cpv_threshold > 0.0 && self.cpv_threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "cpv_threshold must lie in (0, 1], got {}",
                self.cpv_threshold
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidArgument(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidArgument(format!("config: {e}")))?;
        let known = toml::Table::try_from(PipelineConfig::default())
            .expect("default config serialises");
        for (key, value) in &table {
            if !known.contains_key(key) {
                return Err(Error::InvalidArgument(format!("config: unknown key `{key}`")));
            }
            if value.is_table() || value.is_array() {
                return Err(Error::InvalidArgument(format!(
                    "config: `{key}` must be a scalar value"
                )));
            }
        }
        let mut merged = known;
        for (key, value) in table {
            // Integers are accepted where floats are expected.
            let value = match (&merged[&key], value) {
                (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                (_, v) => v,
            };
            merged.insert(key, value);
        }
        let config: PipelineConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidArgument(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
