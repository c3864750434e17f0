use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::datapipe::AugmentPolicy;
use crate::error::{Error, Result};
use crate::optim::AdamWConfig;

pub const DATA_ROOT_ENV: &str = "EFFCD_DATA_ROOT";

/// Changed-class IoU, or the mean of changed and unchanged IoU.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMetric {
    #[default]
    Iou,
    MeanIou,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Defaults to `$EFFCD_DATA_ROOT`.
    #[serde(default)]
    pub root: Option<PathBuf>,
    /// Split manifest for flat `{A,B,label}` layouts.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default = "default_train_split")]
    pub train_split: String,
    #[serde(default = "default_val_split")]
    pub val_split: String,
    /// Generate this many synthetic pairs instead of reading files.
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub pairs: usize,
    pub size: usize,
}

fn default_train_split() -> String {
    "train".into()
}

fn default_val_split() -> String {
    "val".into()
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: None,
            manifest: None,
            train_split: default_train_split(),
            val_split: default_val_split(),
            synthetic: None,
        }
    }
}

impl DataConfig {
    pub fn resolved_root(&self) -> Result<PathBuf> {
        self.root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .ok_or_else(|| Error::Config(format!("no data root: set data.root or ${DATA_ROOT_ENV}")))
    }
}

/// Everything a training run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Named preset used when `model` is absent.
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Training budget in optimizer steps; required.
    pub max_steps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub augment: AugmentPolicy,
    /// Validate every this many steps (and after the last one).
    #[serde(default = "default_val_every")]
    pub val_every: u64,
    #[serde(default)]
    pub selection_metric: SelectionMetric,
    #[serde(default = "default_checkpoint_dir")]
    pub checkpoint_dir: PathBuf,
}

fn default_preset() -> String {
    "nano".into()
}

fn default_batch_size() -> usize {
    2
}

fn default_val_every() -> u64 {
    50
}

fn default_checkpoint_dir() -> PathBuf {
    PathBuf::from("checkpoints")
}

impl RunConfig {
    /// Defaults for `preset` with an explicit step budget.
    pub fn new(preset: &str, max_steps: u64) -> Self {
        Self {
            preset: preset.into(),
            model: None,
            optimizer: AdamWConfig::default(),
            batch_size: default_batch_size(),
            max_steps,
            seed: 0,
            data: DataConfig::default(),
            augment: AugmentPolicy::default(),
            val_every: default_val_every(),
            selection_metric: SelectionMetric::default(),
            checkpoint_dir: default_checkpoint_dir(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// The explicit model, or the preset.
    pub fn model_config(&self) -> Result<ModelConfig> {
        match &self.model {
            Some(m) => Ok(m.clone()),
            None => ModelConfig::preset(&self.preset),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?.validate()?;
        self.optimizer.validate()?;
        self.augment.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.val_every == 0 {
            return Err(Error::Config("val_every must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_defaults() {
        let cfg = RunConfig::from_toml("max_steps = 10\n").unwrap();
        assert_eq!(cfg.batch_size, 2);
        assert_eq!(cfg.optimizer, AdamWConfig::default());
        assert_eq!(cfg.model_config().unwrap(), ModelConfig::nano());
        let mut full = cfg.clone();
        full.model = Some(ModelConfig::nano());
        full.data.synthetic = Some(SyntheticConfig { pairs: 4, size: 64 });
        assert_eq!(RunConfig::from_toml(&full.to_toml()).unwrap(), full);
    }

    #[test]
    fn unknown_keys_and_missing_budget_rejected() {
        assert!(RunConfig::from_toml("max_steps = 1\nlearning_rate = 0.1\n").is_err());
        assert!(RunConfig::from_toml("max_steps = 1\n[optimizer]\nlr = 1e-3\nmomentum = 0.9\n").is_err());
        assert!(RunConfig::from_toml("seed = 3\n").is_err());
    }
}
