//! Tasks, plans, phase-tagged steps and trajectories.
//!
//! A rollout is recorded as an ordered list of [`Step`]s. Each step carries
//! the phase it belongs to, an optional [`ActionRecord`] (present exactly for
//! `Action` steps), and the reward breakdown assigned by
//! [`crate::reward`].

mod answer;
mod corpus;
mod parse;
mod plan;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::reward::RewardBreakdown;

pub use answer::{extract_answer, extract_answer_text, extract_boxed};
pub use corpus::{read_corpus, write_corpus, CorpusError, CorpusRecord};
pub use parse::{normalize_label, parse_trajectory, render_steps, MALFORMED_TOOL};
pub use plan::{parse_plan, PlanError, PlanGraph, Subtask};

/// Name of the built-in tool through which the agent creates new tools.
pub const MCP_CREATE_TOOL: &str = "create_and_execute_mcp";

/// Argument keys a tool creation call must carry to conform to the
/// registration format.
pub const MCP_REQUIRED_KEYS: [&str; 6] = ["name", "description", "arguments", "returns", "code", "inputs"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub query: String,
    #[serde(default)]
    pub ground_truth: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Planning,
    Retrieve,
    Think,
    Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Answer,
    ToolCall,
    McpCreate,
}

/// What the environment reported after executing a tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ExecutionOutcome {
    pub success: bool,
    #[serde(default)]
    pub output: String,
    #[serde(default)]
    pub error: String,
    /// Elapsed cost in milliseconds (simulated or wall-clock).
    #[serde(default)]
    pub elapsed_ms: u64,
    #[serde(default)]
    pub timed_out: bool,
}

impl ExecutionOutcome {
    pub fn ok(output: impl Into<String>, elapsed_ms: u64) -> Self {
        Self { success: true, output: output.into(), error: String::new(), elapsed_ms, timed_out: false }
    }

    pub fn failed(error: impl Into<String>, elapsed_ms: u64) -> Self {
        Self { success: false, output: String::new(), error: error.into(), elapsed_ms, timed_out: false }
    }

    pub fn timeout(elapsed_ms: u64) -> Self {
        Self { timed_out: true, ..Self::failed("timeout", elapsed_ms) }
    }

    /// Success flag set, non-empty output, and no timeout.
    pub fn is_valid_output(&self) -> bool {
        self.success && !self.output.trim().is_empty() && !self.timed_out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub kind: ActionKind,
    /// Invoked tool for `ToolCall`; the created tool's name for `McpCreate`.
    #[serde(default)]
    pub tool_name: Option<String>,
    #[serde(default)]
    pub arguments: BTreeMap<String, Value>,
    #[serde(default)]
    pub raw_text: String,
    #[serde(default)]
    pub execution: Option<ExecutionOutcome>,
}

impl ActionRecord {
    pub fn answer(text: impl Into<String>) -> Self {
        Self {
            kind: ActionKind::Answer,
            tool_name: None,
            arguments: BTreeMap::new(),
            raw_text: text.into(),
            execution: None,
        }
    }

    pub fn tool_call(name: impl Into<String>, arguments: BTreeMap<String, Value>) -> Self {
        Self {
            kind: ActionKind::ToolCall,
            tool_name: Some(name.into()),
            arguments,
            raw_text: String::new(),
            execution: None,
        }
    }

    /// A creation call; `tool_name` comes from the `name` argument when present.
    pub fn mcp_create(arguments: BTreeMap<String, Value>) -> Self {
        let tool_name = arguments
            .get("name")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .unwrap_or_else(|| MCP_CREATE_TOOL.to_owned());
        Self {
            kind: ActionKind::McpCreate,
            tool_name: Some(tool_name),
            arguments,
            raw_text: String::new(),
            execution: None,
        }
    }

    pub fn with_execution(mut self, outcome: ExecutionOutcome) -> Self {
        self.execution = Some(outcome);
        self
    }

    pub fn is_tool(&self) -> bool {
        matches!(self.kind, ActionKind::ToolCall | ActionKind::McpCreate)
    }

    /// True when a creation call carries every registration key: the text
    /// fields non-empty and `inputs` an object.
    pub fn conforms_to_registration(&self) -> bool {
        let text_ok = |k: &&str| matches!(self.arguments.get(*k), Some(Value::String(s)) if !s.trim().is_empty());
        self.kind == ActionKind::McpCreate
            && MCP_REQUIRED_KEYS[..5].iter().all(text_ok)
            && matches!(self.arguments.get(MCP_REQUIRED_KEYS[5]), Some(Value::Object(_)))
    }

    pub fn argument_str(&self, key: &str) -> Option<&str> {
        self.arguments.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub phase: Phase,
    #[serde(default)]
    pub subtask_label: Option<String>,
    #[serde(default)]
    pub content: String,
    #[serde(default)]
    pub action: Option<ActionRecord>,
    #[serde(default)]
    pub format_violation: bool,
    #[serde(default)]
    pub rewards: RewardBreakdown,
}

impl Step {
    pub fn new(index: usize, phase: Phase, content: impl Into<String>) -> Self {
        Self {
            index,
            phase,
            subtask_label: None,
            content: content.into(),
            action: None,
            format_violation: false,
            rewards: RewardBreakdown::default(),
        }
    }

    pub fn action(index: usize, action: ActionRecord) -> Self {
        Self { action: Some(action), ..Self::new(index, Phase::Action, "") }
    }

    pub fn with_label(mut self, label: Option<String>) -> Self {
        self.subtask_label = label;
        self
    }

    /// `phase == Action` exactly when an action is attached.
    pub fn is_consistent(&self) -> bool {
        (self.phase == Phase::Action) == self.action.is_some()
    }

    pub fn is_tool_step(&self) -> bool {
        self.action.as_ref().is_some_and(ActionRecord::is_tool)
    }

    /// Planning and Action steps count towards the turn budget.
    pub fn is_turn(&self) -> bool {
        matches!(self.phase, Phase::Planning | Phase::Action)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub rollout_index: usize,
    #[serde(default)]
    pub plan_raw: String,
    #[serde(default)]
    pub plan: Option<PlanGraph>,
    pub steps: Vec<Step>,
    #[serde(default)]
    pub final_answer: Option<String>,
    #[serde(default)]
    pub outcome: bool,
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>, rollout_index: usize) -> Self {
        Self {
            task_id: task_id.into(),
            rollout_index,
            plan_raw: String::new(),
            plan: None,
            steps: Vec::new(),
            final_answer: None,
            outcome: false,
        }
    }

    /// Appends a step, assigning the next contiguous index.
    pub fn push(&mut self, mut step: Step) -> usize {
        step.index = self.steps.len();
        self.steps.push(step);
        self.steps.len() - 1
    }

    /// Number of Planning and Action steps.
    pub fn turns(&self) -> usize {
        self.steps.iter().filter(|s| s.is_turn()).count()
    }

    pub fn reindex(&mut self) {
        for (i, s) in self.steps.iter_mut().enumerate() {
            s.index = i;
        }
    }

    /// Per-step reward totals; the terminal step's total includes the outcome.
    pub fn reward_sequence(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.rewards.total).collect()
    }

    pub fn tool_steps(&self) -> impl Iterator<Item = &Step> {
        self.steps.iter().filter(|s| s.is_tool_step())
    }

    /// Checks the structural invariants: contiguous indices, phase/action
    /// agreement, at most `max_turns` turns.
    pub fn check_invariants(&self, max_turns: usize) -> Result<(), String> {
        for (i, s) in self.steps.iter().enumerate() {
            if s.index != i {
                return Err(format!("step {i} carries index {}", s.index));
            }
            if !s.is_consistent() {
                return Err(format!("step {i} has phase {:?} with action {:?}", s.phase, s.action.is_some()));
            }
        }
        if self.turns() > max_turns {
            return Err(format!("{} turns exceed max_turns {max_turns}", self.turns()));
        }
        Ok(())
    }
}
