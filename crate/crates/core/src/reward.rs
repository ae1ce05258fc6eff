//! Composite reward signal: outcome, behavioral (planning, creation,
//! execution), format and penalty components, plus returns.
//!
//! The terminal step's breakdown carries the outcome reward, so the sum of
//! per-step totals equals the trajectory return `R_orm + sum_t r_t`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{extract_answer, ActionKind, ActionRecord, Phase, Step, Task, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("task {0} carries no ground truth")]
    MissingGroundTruth(String),
    #[error("return-to-go start {start} out of range for {len} steps")]
    IndexOutOfRange { start: usize, len: usize },
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub r_success: f64,
    pub r_planning: f64,
    pub r_creation: f64,
    pub r_execution: f64,
    pub lambda_format: f64,
    pub penalty_redundant_call: f64,
    pub penalty_failed_creation: f64,
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_success: 1.0,
            r_planning: 0.1,
            r_creation: 0.2,
            r_execution: 0.1,
            lambda_format: 0.05,
            penalty_redundant_call: -0.2,
            penalty_failed_creation: -0.3,
            gamma: 1.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let bad = |m: &str| Err(RewardError::InvalidConfig(m.to_owned()));
        if self.r_success.is_nan() || self.r_success <= 0.0 {
            return bad("r_success must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.penalty_redundant_call > 0.0 || self.penalty_failed_creation > 0.0 {
            return bad("penalties must be non-positive");
        }
        let all = [self.r_planning, self.r_creation, self.r_execution, self.lambda_format];
        if all.iter().chain([self.penalty_redundant_call, self.penalty_failed_creation].iter()).any(|x| !x.is_finite())
        {
            return bad("reward magnitudes must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RewardBreakdown {
    pub outcome: f64,
    pub planning: f64,
    pub creation: f64,
    pub execution: f64,
    pub format: f64,
    pub penalty: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn component_sum(&self) -> f64 {
        self.outcome + self.planning + self.creation + self.execution + self.format + self.penalty
    }

    fn finalize(mut self) -> Self {
        self.total = self.component_sum();
        self
    }
}

/// Per-step facts the reward depends on beyond the step itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepContext {
    /// The trajectory's plan parsed into a complete subtask DAG.
    pub plan_parsed: bool,
    /// An identical (tool name, arguments) call was already issued earlier
    /// in the trajectory.
    pub redundant: bool,
}

/// Compares a predicted answer to the ground truth.
pub trait AnswerJudge: Sync {
    fn is_correct(&self, predicted: &str, truth: &str) -> bool;
}

/// Normalized string equality (trim, lowercase, collapse whitespace);
/// numeric answers also compare as values with relative tolerance 1e-9.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizedMatchJudge;

fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl AnswerJudge for NormalizedMatchJudge {
    fn is_correct(&self, predicted: &str, truth: &str) -> bool {
        let (p, t) = (normalize_text(predicted), normalize_text(truth));
        if p == t {
            return true;
        }
        match (p.parse::<f64>(), t.parse::<f64>()) {
            (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs()),
            _ => false,
        }
    }
}

/// `r_success` when the extracted answer is judged correct, else 0.
pub fn outcome_reward(
    t: &Trajectory,
    task: &Task,
    judge: &dyn AnswerJudge,
    cfg: &RewardConfig,
) -> Result<f64, RewardError> {
    let truth = task.ground_truth.as_deref().ok_or_else(|| RewardError::MissingGroundTruth(task.id.clone()))?;
    Ok(match extract_answer(t) {
        Some(ans) if judge.is_correct(&ans, truth) => cfg.r_success,
        _ => 0.0,
    })
}

fn creation_succeeded(action: &ActionRecord) -> bool {
    action.conforms_to_registration() && action.execution.as_ref().is_none_or(|e| e.success)
}

/// Behavioral, format and penalty rewards for one step.
///
/// Format reward applies to Planning and Action steps, the ones whose
/// structure the policy emits as a turn.
pub fn step_reward(step: &Step, cfg: &RewardConfig, ctx: StepContext) -> RewardBreakdown {
    let mut r = RewardBreakdown::default();
    match step.phase {
        Phase::Planning => {
            if ctx.plan_parsed {
                r.planning = cfg.r_planning;
            }
        }
        Phase::Action => {
            if let Some(action) = &step.action {
                if action.kind == ActionKind::McpCreate {
                    if creation_succeeded(action) {
                        r.creation = cfg.r_creation;
                    } else {
                        r.penalty += cfg.penalty_failed_creation;
                    }
                }
                if action.is_tool() && action.execution.as_ref().is_some_and(|e| e.is_valid_output()) {
                    r.execution = cfg.r_execution;
                }
                if action.is_tool() && ctx.redundant {
                    r.penalty += cfg.penalty_redundant_call;
                }
            }
        }
        Phase::Retrieve | Phase::Think => return r,
    }
    if !step.format_violation {
        r.format = cfg.lambda_format;
    }
    r.finalize()
}

/// Flags, for each step, whether its tool call repeats an earlier identical
/// (tool name, arguments) pair.
pub fn redundancy_flags(steps: &[Step]) -> Vec<bool> {
    let mut seen: Vec<(&Option<String>, &ActionKind, &std::collections::BTreeMap<String, serde_json::Value>)> =
        Vec::new();
    steps
        .iter()
        .map(|s| match &s.action {
            Some(a) if a.is_tool() => {
                let key = (&a.tool_name, &a.kind, &a.arguments);
                if seen.contains(&key) {
                    true
                } else {
                    seen.push(key);
                    false
                }
            }
            _ => false,
        })
        .collect()
}

/// Assigns every step's breakdown, with `outcome` added to the terminal
/// step. Returns the trajectory return.
pub fn apply_rewards(t: &mut Trajectory, outcome: f64, cfg: &RewardConfig) -> f64 {
    let plan_parsed = t.plan.is_some();
    let redundant = redundancy_flags(&t.steps);
    for (step, red) in t.steps.iter_mut().zip(redundant) {
        step.rewards = step_reward(step, cfg, StepContext { plan_parsed, redundant: red });
    }
    if let Some(last) = t.steps.last_mut() {
        last.rewards.outcome = outcome;
        last.rewards.total = last.rewards.component_sum();
    }
    trajectory_return(t)
}

/// Judges the trajectory against its task and applies all rewards.
pub fn score_trajectory(
    t: &mut Trajectory,
    task: &Task,
    cfg: &RewardConfig,
    judge: &dyn AnswerJudge,
) -> Result<f64, RewardError> {
    let outcome = outcome_reward(t, task, judge, cfg)?;
    t.final_answer = extract_answer(t);
    t.outcome = outcome > 0.0;
    Ok(apply_rewards(t, outcome, cfg))
}

/// `R(tau) = R_orm + sum_t r_t`.
pub fn total_return(outcome: f64, step_totals: &[f64]) -> f64 {
    outcome + step_totals.iter().sum::<f64>()
}

/// Return of a scored trajectory (outcome included via the terminal step).
pub fn trajectory_return(t: &Trajectory) -> f64 {
    t.steps.iter().map(|s| s.rewards.total).sum()
}

/// `R_t = sum_{k=t..T} gamma^(k-t) r_k`.
pub fn return_to_go(rewards: &[f64], start: usize, gamma: f64) -> Result<f64, RewardError> {
    if start >= rewards.len() {
        return Err(RewardError::IndexOutOfRange { start, len: rewards.len() });
    }
    Ok(rewards[start..].iter().rev().fold(0.0, |acc, r| r + gamma * acc))
}

/// Return-to-go from every step, computed in one backward pass.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for k in (0..rewards.len()).rev() {
        acc = rewards[k] + gamma * acc;
        out[k] = acc;
    }
    out
}
