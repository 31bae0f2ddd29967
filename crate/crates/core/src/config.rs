//! Run configuration: one TOML file with a section per module.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineMethod, BaselineParams, GridConfig};
use crate::error::{io_err, LseError, Result};
use crate::model::ModelConfig;
use crate::signal::GeneratorConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub grid: GridConfig,
    /// Parameters used by `eval` and `sweep-snr`.
    pub params: Vec<BaselineParams>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            params: BaselineMethod::ALL.iter().map(|&m| BaselineParams::reference(m)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub batch_size: usize,
    pub lambdas: Vec<f64>,
    pub lambda_seeds: Vec<u64>,
    pub snr_db: Vec<f64>,
    /// Windows in each single-SNR test set.
    pub snr_windows: usize,
    pub snr_seed: u64,
    /// Include per-window arrays in JSON reports.
    pub per_window: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            batch_size: 256,
            lambdas: vec![0.0, 0.1, 0.2, 0.5, 1.0],
            lambda_seeds: (0..14).collect(),
            snr_db: vec![5.0, 10.0, 15.0, 20.0],
            snr_windows: 10_000,
            snr_seed: 1_000_003,
            per_window: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub baselines: BaselineSection,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub evaluation: EvalSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| LseError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            LseError::Config(m) => LseError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        for p in &self.baselines.params {
            p.validate()?;
        }
        if self.model.outputs != self.generator.max_components {
            return Err(LseError::Config(format!(
                "model.outputs ({}) must equal generator.max_components ({})",
                self.model.outputs, self.generator.max_components
            )));
        }
        if self.evaluation.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(LseError::Config("evaluation.lambdas must lie in [0, 1]".into()));
        }
        if self.evaluation.batch_size == 0 {
            return Err(LseError::Config("evaluation.batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| LseError::Config(e.to_string()))
    }

    /// Writes the resolved configuration as `config.toml` in `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.toml");
        fs::write(&path, self.to_toml()?).map_err(io_err(&path))
    }
}
