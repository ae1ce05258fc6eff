//! States, actions and transitions of the synthetic tool environment.
//!
//! A rollout plans once, then works through the task pipeline one subtask
//! at a time. Each subtask turn emits a Retrieve step (hybrid ranking over
//! the memory snapshot), a Think step and an Action step. The policy sees
//! the current skill and whether the top retrieved tool implements it.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::runtime::{creation_arguments, interpret, python_code, SimToolRuntime, PYTHON_TOOL};
use super::task::{Skill, SyntheticTask};
use super::SimError;
use crate::memory::{NodeId, ToolGraph};
use crate::policy::SoftmaxToyPolicy;
use crate::retrieval::{rank_one, EmbeddingProvider, RetrievalConfig, ScoredTool, SparseIndex};
use crate::trajectory::{ActionRecord, Phase, PlanGraph, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimAction {
    PlanStructured,
    PlanFreeform,
    /// Call the top retrieved memory tool.
    ReuseRetrieved,
    /// Create a well-formed tool and run it.
    CreateTool,
    /// Create a tool whose spec lacks registration keys.
    CreateIncomplete,
    /// One-off sandbox computation.
    CallPython,
    Answer,
}

impl SimAction {
    pub const ALL: [SimAction; 7] = [
        SimAction::PlanStructured,
        SimAction::PlanFreeform,
        SimAction::ReuseRetrieved,
        SimAction::CreateTool,
        SimAction::CreateIncomplete,
        SimAction::CallPython,
        SimAction::Answer,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Outcome of retrieval for the current subtask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalStatus {
    /// Memory is empty.
    Empty,
    /// The top tool implements the needed skill.
    Hit,
    /// The top tool implements something else.
    Miss,
}

impl RetrievalStatus {
    const ALL: [RetrievalStatus; 3] = [RetrievalStatus::Empty, RetrievalStatus::Hit, RetrievalStatus::Miss];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Observation {
    Planning,
    Subtask {
        skill: Skill,
        retrieval: RetrievalStatus,
    },
    /// Every subtask is complete.
    Done,
}

pub const NUM_STATES: usize = 1 + Skill::ALL.len() * 3 + 1;
pub const NUM_ACTIONS: usize = SimAction::ALL.len();

impl Observation {
    pub fn state_index(self) -> usize {
        match self {
            Observation::Planning => 0,
            Observation::Subtask { skill, retrieval } => {
                1 + skill.index() * 3 + RetrievalStatus::ALL.iter().position(|r| *r == retrieval).expect("listed")
            }
            Observation::Done => NUM_STATES - 1,
        }
    }

    pub fn from_state_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Observation::Planning),
            i if i == NUM_STATES - 1 => Some(Observation::Done),
            i if i < NUM_STATES => Some(Observation::Subtask {
                skill: Skill::ALL[(i - 1) / 3],
                retrieval: RetrievalStatus::ALL[(i - 1) % 3],
            }),
            _ => None,
        }
    }

    pub fn available(self) -> Vec<SimAction> {
        use SimAction::*;
        match self {
            Observation::Planning => vec![PlanStructured, PlanFreeform],
            Observation::Subtask { retrieval: RetrievalStatus::Empty, .. } => {
                vec![CreateTool, CreateIncomplete, CallPython, Answer]
            }
            Observation::Subtask { .. } => vec![ReuseRetrieved, CreateTool, CreateIncomplete, CallPython, Answer],
            Observation::Done => vec![Answer],
        }
    }
}

/// The uniform masked policy over the environment's state and action space.
pub fn new_policy(temperature: f64) -> SoftmaxToyPolicy {
    let mut p = SoftmaxToyPolicy::new(NUM_STATES, NUM_ACTIONS, temperature);
    for s in 0..NUM_STATES {
        let obs = Observation::from_state_index(s).expect("state in range");
        let avail: Vec<usize> = obs.available().into_iter().map(SimAction::index).collect();
        p.restrict(s, &avail);
    }
    p
}

/// Immutable view of memory shared by every rollout of one iteration.
pub struct MemorySnapshot<'a> {
    pub graph: &'a ToolGraph,
    pub index: SparseIndex,
    pub provider: &'a dyn EmbeddingProvider,
    pub retrieval: RetrievalConfig,
}

impl<'a> MemorySnapshot<'a> {
    pub fn new(graph: &'a ToolGraph, provider: &'a dyn EmbeddingProvider, retrieval: RetrievalConfig) -> Self {
        Self { graph, index: SparseIndex::from_graph(graph), provider, retrieval }
    }

    pub fn rank(&self, query: &str) -> Result<Vec<ScoredTool>, SimError> {
        Ok(rank_one(query, self.graph, &self.index, self.provider, &self.retrieval)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub subtask: usize,
    pub value: i64,
    pub turns_used: usize,
    pub planned: bool,
    pub plan_raw: String,
    pub plan: Option<PlanGraph>,
    pub answered: bool,
    /// Top retrieved tool for the current subtask.
    pub retrieved: Option<NodeId>,
    pub retrieval: RetrievalStatus,
}

/// The environment for one task.
pub struct SimEnv<'a> {
    pub task: &'a SyntheticTask,
    pub runtime: SimToolRuntime,
    pub max_turns: usize,
    /// Probability that answering before finishing the pipeline still
    /// guesses the right value.
    pub direct_accuracy: f64,
}

fn label(i: usize) -> String {
    format!("ST{}", i + 1)
}

impl<'a> SimEnv<'a> {
    pub fn reset(&self) -> SimState {
        SimState {
            subtask: 0,
            value: self.task.start,
            turns_used: 0,
            planned: false,
            plan_raw: String::new(),
            plan: None,
            answered: false,
            retrieved: None,
            retrieval: RetrievalStatus::Empty,
        }
    }

    pub fn is_terminal(&self, st: &SimState) -> bool {
        st.answered || st.turns_used >= self.max_turns
    }

    /// Only an answer fits in the remaining budget.
    pub fn must_answer(&self, st: &SimState) -> bool {
        st.planned && st.turns_used + 1 >= self.max_turns
    }

    /// Runs retrieval for the current subtask (when one is open) and
    /// returns the observation with the Retrieve and Think steps it emits.
    pub fn observe(
        &self,
        st: &mut SimState,
        memory: &MemorySnapshot<'_>,
    ) -> Result<(Observation, Vec<Step>), SimError> {
        if !st.planned {
            return Ok((Observation::Planning, Vec::new()));
        }
        let Some(op) = self.task.pipeline.get(st.subtask) else {
            let think = Step::new(0, Phase::Think, format!("all subtasks done; value {}", st.value));
            return Ok((Observation::Done, vec![think]));
        };
        let mut listing = Vec::new();
        let mut current: Vec<ScoredTool> = Vec::new();
        for (i, later) in self.task.pipeline[st.subtask..].iter().enumerate() {
            let ranked = memory.rank(&later.skill.subtask_text(later.k))?;
            listing.push(json!({
                "subtask": label(st.subtask + i),
                "tools": ranked.iter().map(|s| json!({"tool": s.name, "text": s.text, "sem": s.sem, "hyb": s.hyb})).collect::<Vec<_>>(),
            }));
            if i == 0 {
                current = ranked;
            }
        }
        st.retrieved = current.first().map(|s| s.id);
        st.retrieval = match current.first() {
            None => RetrievalStatus::Empty,
            Some(top) => {
                let code = memory.graph.node(top.id).map(|n| n.code.as_str()).unwrap_or_default();
                if interpret(code) == Some(op.skill) {
                    RetrievalStatus::Hit
                } else {
                    RetrievalStatus::Miss
                }
            }
        };
        let l = Some(label(st.subtask));
        let retrieve =
            Step::new(0, Phase::Retrieve, serde_json::Value::Array(listing).to_string()).with_label(l.clone());
        let think = Step::new(
            0,
            Phase::Think,
            format!("{}: {} on {}; top tool {:?}", label(st.subtask), op.skill.name(), st.value, st.retrieval),
        )
        .with_label(l);
        Ok((Observation::Subtask { skill: op.skill, retrieval: st.retrieval }, vec![retrieve, think]))
    }

    /// Applies `action` and returns the emitted step.
    pub fn step<R: Rng + ?Sized>(
        &self,
        st: &mut SimState,
        obs: Observation,
        action: SimAction,
        memory: &MemorySnapshot<'_>,
        rng: &mut R,
    ) -> Result<Step, SimError> {
        if self.is_terminal(st) || !obs.available().contains(&action) {
            return Err(SimError::InvalidAction { state: obs.state_index(), action: action.index() });
        }
        st.turns_used += 1;
        if let Observation::Planning = obs {
            st.planned = true;
            let texts: Vec<String> = self.task.pipeline.iter().map(|o| o.skill.subtask_text(o.k)).collect();
            if action == SimAction::PlanStructured {
                let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
                let plan = PlanGraph::chain(&refs).expect("chain plans are valid");
                st.plan_raw = plan.render();
                st.plan = Some(plan);
            } else {
                st.plan_raw = format!("First {}.", texts.join(", then "));
            }
            return Ok(Step::new(0, Phase::Planning, st.plan_raw.clone()));
        }

        let l = self.task.pipeline.get(st.subtask).map(|_| label(st.subtask));
        if action == SimAction::Answer {
            st.answered = true;
            let value = if st.subtask >= self.task.pipeline.len() {
                st.value
            } else if rng.gen_bool(self.direct_accuracy) {
                self.task.ground_truth
            } else {
                self.task.ground_truth + rng.gen_range(1..=9)
            };
            return Ok(Step::action(0, ActionRecord::answer(format!("\\boxed{{{value}}}"))).with_label(l));
        }

        let op = self.task.pipeline[st.subtask];
        let (x, k) = (st.value, op.k);
        let (record, outcome) = match action {
            SimAction::ReuseRetrieved => {
                let node = st
                    .retrieved
                    .and_then(|id| memory.graph.node(id))
                    .ok_or(SimError::InvalidAction { state: obs.state_index(), action: action.index() })?;
                let out = self.runtime.call(&node.spec(), x, k);
                let args = BTreeMap::from([("x".to_owned(), json!(x)), ("k".to_owned(), json!(k))]);
                (ActionRecord::tool_call(node.name.clone(), args), out)
            }
            SimAction::CreateTool | SimAction::CreateIncomplete => {
                let args =
                    creation_arguments(op.skill, rng.gen_range(0..1_000_000), x, k, action == SimAction::CreateTool);
                let out = self.runtime.create_and_execute(&args);
                (ActionRecord::mcp_create(args), out)
            }
            SimAction::CallPython => {
                let args = BTreeMap::from([("code".to_owned(), json!(python_code(op.skill, x, k)))]);
                (ActionRecord::tool_call(PYTHON_TOOL, args), self.runtime.python(op.skill, x, k))
            }
            SimAction::PlanStructured | SimAction::PlanFreeform | SimAction::Answer => unreachable!("handled above"),
        };
        if outcome.is_valid_output() {
            st.value = outcome.output.trim().parse().unwrap_or(st.value);
            st.subtask += 1;
        }
        Ok(Step::action(0, record.with_execution(outcome)).with_label(l))
    }
}

/// Chooses actions during rollouts.
pub trait RolloutPolicy: Sync {
    /// Chooses an action in `obs`; returns it with its log-probability.
    fn act(&self, obs: Observation, rng: &mut dyn rand::RngCore) -> (SimAction, f64);
}

impl RolloutPolicy for SoftmaxToyPolicy {
    fn act(&self, obs: Observation, rng: &mut dyn rand::RngCore) -> (SimAction, f64) {
        let (a, lp) = self.sample(obs.state_index(), rng);
        (SimAction::from_index(a).expect("action in range"), lp)
    }
}
