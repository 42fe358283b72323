use std::path::{Path, PathBuf};

use anyhow::Context;
use epochface_core::clustering::ClusterConfig;
use epochface_core::inversion::{ProjectConfig, TmtConfig};
use epochface_core::metrics::ClassifierTrainConfig;
use epochface_core::perception::EmbedderTrainConfig;
use epochface_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Synthetic corpus used when no manifest is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub resolution: usize,
    pub world_seed: u64,
    /// Identities `0..train_identities` are rendered for training.
    pub train_identities: usize,
    /// Identities after the training range, used by `evaluate`.
    pub test_identities: usize,
    pub decades: Vec<u16>,
    /// Line-delimited image manifest; replaces the synthetic corpus when set.
    pub manifest: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            resolution: 16,
            world_seed: 1,
            train_identities: 200,
            test_identities: 25,
            decades: vec![1900, 1910, 1920],
            manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    /// Load weights from here instead of training.
    pub path: Option<PathBuf>,
    pub identities: usize,
    pub variants: u64,
    pub train: EmbedderTrainConfig,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            path: None,
            identities: 120,
            variants: 3,
            train: EmbedderTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    /// Cosine threshold for identity accuracy; calibrated on the corpus when absent.
    pub id_threshold: Option<f64>,
    /// Fixed RBF bandwidth for KMMD; the median heuristic when absent.
    pub kmmd_bandwidth: Option<f64>,
    pub classifier: ClassifierTrainConfig,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            id_threshold: None,
            kmmd_bandwidth: None,
            classifier: ClassifierTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub data: DataConfig,
    pub parent: TrainConfig,
    pub family: TrainConfig,
    pub embedder: EmbedderConfig,
    pub project: ProjectConfig,
    pub tune: TmtConfig,
    pub evaluate: EvaluateConfig,
    pub cluster: ClusterConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            parent: TrainConfig {
                iterations: 6000,
                id_loss_weight: 0.0,
                ..TrainConfig::default()
            },
            family: TrainConfig::default(),
            embedder: EmbedderConfig::default(),
            project: ProjectConfig::default(),
            tune: TmtConfig::default(),
            evaluate: EvaluateConfig::default(),
            cluster: ClusterConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(p) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let cfg: Config = toml::from_str(&text)
            .map_err(|e| epochface_core::Error::InvalidInput(format!("{}: {e}", p.display())))?;
        Ok(cfg)
    }

    /// Apply a command-line seed to every seeded stage.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.parent.seed = s;
            self.family.seed = s;
            self.embedder.train.seed = s;
            self.project.seed = s;
            self.evaluate.classifier.seed = s;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: Config = toml::from_str("[data]\nresolution = 8\n[cluster]\nepsilon = 0.7\n").unwrap();
        assert_eq!(cfg.data.resolution, 8);
        assert_eq!(cfg.data.decades, vec![1900, 1910, 1920]);
        assert_eq!(cfg.cluster.epsilon, 0.7);
        assert_eq!(cfg.cluster.alpha, 3.0);
    }

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = Config::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<Config>(&text).unwrap(), cfg);
    }

    #[test]
    fn seed_override() {
        let cfg = Config::default().with_seed(Some(42));
        assert_eq!((cfg.parent.seed, cfg.project.seed), (42, 42));
    }
}
