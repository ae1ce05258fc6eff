//! The run configuration: one section per component plus file paths.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credit::AdvantageConfig;
use crate::policy::OptimizerConfig;
use crate::retrieval::RetrievalConfig;
use crate::reward::RewardConfig;
use crate::sim::{DatasetConfig, SimConfig};

#[derive(Debug, Error, PartialEq)]
#[error("invalid config section [{section}]: {message}")]
pub struct ConfigError {
    pub section: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Merge threshold on embedding cosine similarity.
    pub similarity_threshold: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { similarity_threshold: 0.85 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Line-delimited task file; generated from `[dataset]` when unset.
    pub dataset: Option<PathBuf>,
    pub graph_store: PathBuf,
    pub metrics_out: PathBuf,
    pub policy_out: PathBuf,
    /// Embedding service URL; the built-in trigram embedder when unset.
    pub embedding_url: Option<String>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            graph_store: PathBuf::from("graph.json"),
            metrics_out: PathBuf::from("metrics.jsonl"),
            policy_out: PathBuf::from("policy.json"),
            embedding_url: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub reward: RewardConfig,
    pub advantage: AdvantageConfig,
    pub optimizer: OptimizerConfig,
    pub retrieval: RetrievalConfig,
    pub graph: GraphConfig,
    pub sim: SimConfig,
    pub dataset: DatasetConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err =
            |section: &'static str| move |e: &dyn std::fmt::Display| ConfigError { section, message: e.to_string() };
        self.reward.validate().map_err(|e| err("reward")(&e))?;
        self.advantage.validate().map_err(|e| err("advantage")(&e))?;
        self.optimizer.validate().map_err(|e| err("optimizer")(&e))?;
        self.retrieval.validate().map_err(|e| err("retrieval")(&e))?;
        self.sim.validate().map_err(|e| err("sim")(&e))?;
        self.dataset.validate().map_err(|e| err("dataset")(&e))?;
        let t = self.graph.similarity_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(ConfigError { section: "graph", message: format!("similarity_threshold {t} outside (0, 1]") });
        }
        Ok(())
    }
}
