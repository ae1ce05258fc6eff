//! A synthetic tool-use environment and the end-to-end training loop.
//!
//! Tasks are short pipelines of integer skills. The agent can reuse tools
//! from memory, create new ones (which may fail on first run), fall back to
//! a sandbox that sometimes exceeds its time budget, or answer. Each
//! training iteration samples tasks, runs rollouts against a frozen memory
//! snapshot, evolves memory from the best rollouts, computes two-level
//! advantages and takes one policy-gradient step.

mod env;
mod rollout;
mod runtime;
mod task;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credit::CreditError;
use crate::par::Execution;
use crate::policy::PolicyError;
use crate::retrieval::RetrievalError;
use crate::reward::RewardError;

pub use env::{
    new_policy, MemorySnapshot, Observation, RetrievalStatus, RolloutPolicy, SimAction, SimEnv, SimState, NUM_ACTIONS,
    NUM_STATES,
};
pub use rollout::{run_rollout, Decision, Rollout};
pub use runtime::{creation_arguments, interpret, tool_names, RuntimeConfig, SimToolRuntime, PYTHON_TOOL};
pub use task::{
    curriculum_datasets, evaluate, generate_dataset, read_dataset, write_dataset, DatasetConfig, Family, Operation,
    Skill, SyntheticTask,
};
pub use train::{rollout_seed, run_iteration, run_training, IterationMetrics, IterationReport};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid sim config: {0}")]
    InvalidConfig(String),
    #[error("action {action} is not available in state {state}")]
    InvalidAction { state: usize, action: usize },
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Credit(#[from] CreditError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub max_turns: usize,
    pub rollout_num: usize,
    /// Tasks sampled per iteration.
    pub batch_tasks: usize,
    pub iterations: u64,
    pub seed: u64,
    /// Rollout worker threads; 0 uses the global pool.
    pub workers: usize,
    pub execution: Execution,
    /// Skip policy updates (random-policy baseline when the policy is
    /// uniform).
    pub frozen_policy: bool,
    pub temperature: f64,
    pub direct_accuracy: f64,
    pub runtime: RuntimeConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            max_turns: 6,
            rollout_num: 8,
            batch_tasks: 4,
            iterations: 200,
            seed: 7,
            workers: 0,
            execution: Execution::Parallel,
            frozen_policy: false,
            temperature: 1.0,
            direct_accuracy: 0.02,
            runtime: RuntimeConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.max_turns < 2 {
            return Err(SimError::InvalidConfig("max_turns must allow a plan and an answer (>= 2)".into()));
        }
        if self.rollout_num == 0 || self.batch_tasks == 0 {
            return Err(SimError::InvalidConfig("rollout_num and batch_tasks must be >= 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(SimError::InvalidConfig("temperature must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.direct_accuracy) || !(0.0..=1.0).contains(&self.runtime.creation_failure_rate) {
            return Err(SimError::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
