//! Experiment configuration file (TOML). Every field has a default; the
//! defaults are the spoken-digit preset.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use soundmorph::features::MfccConfig;
use soundmorph::morph::DecodeMode;
use soundmorph::nn::{ArchTag, ModelConfig};
use soundmorph::train::TrainConfig;

use crate::error::{io_err, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Digits,
    Drums,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Directory of WAV files.
    pub dir: Option<PathBuf>,
    /// Manifest written by an earlier run or by `cluster-drums`; wins over `dir`.
    pub manifest: Option<PathBuf>,
    /// Seed of the digit train/test shuffle.
    pub split_seed: u64,
    /// Seed of the drum k-means initialization.
    pub cluster_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Digits,
            dir: None,
            manifest: None,
            split_seed: 0,
            cluster_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: ArchTag,
    /// Seed of the weight initialization.
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            arch: ArchTag::Dc,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub mfcc: MfccConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            reason: e.message().to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = toml::to_string_pretty(self).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|e| io_err(path, e))
    }

    pub fn model_config(&self) -> ModelConfig {
        match self.dataset.kind {
            DatasetKind::Digits => ModelConfig::digits(self.model.arch, self.model.seed),
            DatasetKind::Drums => ModelConfig::drums(self.model.arch, self.model.seed),
        }
    }
}

/// What `serve` needs at startup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub bind: String,
    pub decode_mode: DecodeMode,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_digit_preset() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.train.epochs, 117);
        assert_eq!(cfg.model_config().latent_dim, 20);
    }

    #[test]
    fn nested_overrides_and_round_trip() {
        let cfg: ExperimentConfig = toml::from_str(
            "[model]\narch = \"CC\"\n[train]\nepochs = 3\n[train.weights]\nlambda_class = 0.0\n[dataset]\nkind = \"drums\"\n",
        )
        .unwrap();
        assert_eq!(cfg.model.arch, ArchTag::Cc);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.weights.lambda_class, 0.0);
        assert_eq!(cfg.train.weights.lambda_recon, 1.0);
        assert_eq!(cfg.model_config().latent_dim, 30);
        let text = toml::to_string_pretty(&cfg).unwrap();
        assert_eq!(toml::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("[train]\nepoch = 3\n").is_err());
    }
}
