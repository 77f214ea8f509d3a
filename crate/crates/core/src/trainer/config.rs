use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MetricRecord, ModelConfig, Schedule, TrainConfig};
use crate::error::{Error, Result};
use crate::gan::LossWeights;
use crate::synth::SynthesisParams;

pub const RUN_CONFIG_VERSION: u32 = 1;

/// On-disk TOML description of a full run: how to synthesize the initial
/// corpus and how to train on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    /// Initial synthetic samples to generate before training.
    pub samples: usize,
    /// Save a checkpoint every this many updates; 0 saves only at the end.
    pub checkpoint_every: usize,
    pub synthesis: SynthesisParams,
    pub schedule: Schedule,
    pub weights: LossWeights,
    pub models: ModelConfig,
    pub data: DataConfig,
}

/// Corpus locations. Relative paths are taken from the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Real patches: a store with a manifest, or folders named by style.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub real_dir: Option<PathBuf>,
    /// A store of initial synthetic samples; generated from `real_dir` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_dir: Option<PathBuf>,
}

impl DataConfig {
    /// Resolve relative paths against `base`.
    pub fn resolved(&self, base: &Path) -> Self {
        let fix = |p: &Option<PathBuf>| {
            p.as_ref().map(|p| {
                if p.is_relative() {
                    base.join(p)
                } else {
                    p.clone()
                }
            })
        };
        Self {
            real_dir: fix(&self.real_dir),
            synth_dir: fix(&self.synth_dir),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: RUN_CONFIG_VERSION,
            seed: 0,
            samples: 200,
            checkpoint_every: 0,
            synthesis: SynthesisParams::default(),
            schedule: Schedule::default(),
            weights: LossWeights::default(),
            models: ModelConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != RUN_CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {RUN_CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.synthesis.validate()?;
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            schedule: self.schedule.clone(),
            weights: self.weights,
            models: self.models.clone(),
            seed: self.seed,
        }
    }
}

/// Training log as CSV with columns `step,stage,network,loss`.
pub fn write_metrics_csv(history: &[MetricRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "stage", "network", "loss"])?;
    for r in history {
        w.write_record([
            r.step.to_string(),
            r.stage.to_string(),
            r.network.to_string(),
            r.loss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
