use anyhow::{bail, Context, Result};
use gossipspeech::data::DataConfig;
use gossipspeech::RunConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Everything one experiment needs. Every field has a default and unknown
/// keys are rejected, so a typo fails loudly instead of silently using a
/// default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Corpus directory written by `gen-data` and read by training.
    pub data_dir: PathBuf,
    /// Where training writes metrics, checkpoints and provenance.
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub run: RunConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            run: RunConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads `path`, or the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// One seed for the whole experiment: corpus, partition, model init
    /// and agent streams.
    pub fn override_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.data.partition.seed = seed;
        self.run.seed = seed;
        self.run.model.seed = seed;
    }

    /// Cross-checks the data and model sections.
    pub fn validate(&self) -> Result<()> {
        let alphabet = self.data.alphabet()?;
        let model = &self.run.model;
        if alphabet.len() != model.alphabet_size {
            bail!("data alphabet has {} symbols but run.model.alphabet_size is {}", alphabet.len(), model.alphabet_size);
        }
        if self.data.feature_dim != model.input_features {
            bail!(
                "data.feature_dim is {} but run.model.input_features is {}",
                self.data.feature_dim,
                model.input_features
            );
        }
        self.run.validate()?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"run": {"rounds": 3}}"#).is_ok());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"run": {"rouds": 3}}"#).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        assert_eq!(serde_json::from_str::<ExperimentConfig>("{}").unwrap(), cfg);
    }

    #[test]
    fn mismatched_sections_fail_validation() {
        let mut cfg = ExperimentConfig::default();
        cfg.data.alphabet = "AB ".into();
        assert!(cfg.validate().is_err());
    }
}
