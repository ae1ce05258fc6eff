//! Candidate buffering and end-of-iteration registration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{IncomingTool, MergeReport, NodeId, Subgraph, ToolGraph, ToolSpec};
use crate::retrieval::EmbeddingProvider;
use crate::reward::trajectory_return;
use crate::trajectory::{ActionKind, ActionRecord, ExecutionOutcome, PlanGraph, Trajectory};

impl ToolSpec {
    /// The spec a creation call declares; missing text fields are empty.
    pub fn from_creation(a: &ActionRecord) -> Self {
        let text = |k: &str| a.argument_str(k).unwrap_or_default().to_owned();
        Self {
            name: a.tool_name.clone().unwrap_or_default(),
            description: text("description"),
            arguments_doc: text("arguments"),
            returns_doc: text("returns"),
            code: text("code"),
        }
    }
}

/// A successfully executed tool creation awaiting registration.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub spec: ToolSpec,
    /// Index of the source trajectory in the iteration's rollout list.
    pub trajectory: usize,
    pub step: usize,
    pub step_reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidatePool {
    candidates: Vec<Candidate>,
}

impl CandidatePool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Buffers a creation; only execution-successful ones are admitted.
    pub fn admit(&mut self, candidate: Candidate, outcome: &ExecutionOutcome) -> bool {
        if !outcome.success || outcome.timed_out {
            return false;
        }
        self.candidates.push(candidate);
        true
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Collects every successful creation recorded in `rollouts`.
    pub fn from_rollouts(rollouts: &[Trajectory]) -> Self {
        let mut pool = Self::new();
        for (ti, t) in rollouts.iter().enumerate() {
            for s in &t.steps {
                let Some(a) = &s.action else { continue };
                if a.kind != ActionKind::McpCreate || !a.conforms_to_registration() {
                    continue;
                }
                let Some(outcome) = &a.execution else { continue };
                let spec = ToolSpec::from_creation(a);
                pool.admit(Candidate { spec, trajectory: ti, step: s.index, step_reward: s.rewards.total }, outcome);
            }
        }
        pool
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "fate", content = "node")]
pub enum CandidateFate {
    /// Became a new node.
    Registered(NodeId),
    /// Folded into another node.
    Merged(NodeId),
    /// Came from a rollout that was not its task's best.
    Discarded,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegistrationReport {
    /// One fate per pool candidate, in pool order.
    pub fates: Vec<CandidateFate>,
    /// Winning rollout index per task.
    pub winners: BTreeMap<String, usize>,
    pub merge: MergeReport,
}

impl RegistrationReport {
    pub fn count(&self, pred: impl Fn(&CandidateFate) -> bool) -> usize {
        self.fates.iter().filter(|f| pred(f)).count()
    }
}

/// Projects a plan onto tool space: nodes are the mapped subtasks' tools in
/// plan order, edges the plan edges whose endpoints are both mapped.
/// Self-loops from two subtasks sharing a tool are dropped.
pub fn extract_subgraph<K: Ord + Clone>(plan: &PlanGraph, phi: &BTreeMap<String, K>) -> (Vec<K>, Vec<(K, K)>) {
    let mut nodes: Vec<K> = Vec::new();
    for st in plan.subtasks() {
        if let Some(k) = phi.get(&st.label) {
            if !nodes.contains(k) {
                nodes.push(k.clone());
            }
        }
    }
    let mut edges: Vec<(K, K)> = Vec::new();
    for (u, v) in plan.edges() {
        if let (Some(a), Some(b)) = (phi.get(u), phi.get(v)) {
            if a != b && !edges.contains(&(a.clone(), b.clone())) {
                edges.push((a.clone(), b.clone()));
            }
        }
    }
    (nodes, edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum ToolKey {
    Candidate(usize),
    Node(NodeId),
}

/// Maps each subtask to the last successfully executed memory tool in it:
/// a creation from the pool, or an existing node called by name. Calls to
/// tools outside memory leave the subtask unmapped.
fn subtask_tools(t: &Trajectory, ti: usize, pool: &CandidatePool, graph: &ToolGraph) -> BTreeMap<String, ToolKey> {
    let mut created: BTreeMap<&str, usize> = BTreeMap::new();
    let mut phi = BTreeMap::new();
    for s in &t.steps {
        let Some(a) = &s.action else { continue };
        if !a.execution.as_ref().is_some_and(|e| e.is_valid_output()) {
            continue;
        }
        let name = a.tool_name.as_deref().unwrap_or_default();
        let key = match a.kind {
            ActionKind::McpCreate => {
                pool.candidates().iter().position(|c| c.trajectory == ti && c.step == s.index).map(|ci| {
                    created.insert(name, ci);
                    ToolKey::Candidate(ci)
                })
            }
            ActionKind::ToolCall => created
                .get(name)
                .map(|&ci| ToolKey::Candidate(ci))
                .or_else(|| graph.find_by_name(name).map(|n| ToolKey::Node(n.id))),
            ActionKind::Answer => None,
        };
        if let (Some(key), Some(label)) = (key, &s.subtask_label) {
            phi.insert(label.clone(), key);
        }
    }
    phi
}

/// End-of-iteration memory evolution.
///
/// For each task the rollout with the highest return wins (ties go to the
/// lower rollout index). The winner's created tools and its plan subgraph
/// are merged into `graph`; every other candidate is discarded.
pub fn register_iteration(
    pool: &CandidatePool,
    rollouts: &[Trajectory],
    graph: &mut ToolGraph,
    provider: &dyn EmbeddingProvider,
    iteration: u64,
) -> RegistrationReport {
    let mut report = RegistrationReport { fates: vec![CandidateFate::Discarded; pool.len()], ..Default::default() };

    let mut best: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for (ti, t) in rollouts.iter().enumerate() {
        let r = trajectory_return(t);
        let entry = best.entry(t.task_id.as_str()).or_insert((ti, r));
        let incumbent = &rollouts[entry.0];
        if r > entry.1 || (r == entry.1 && t.rollout_index < incumbent.rollout_index) {
            *entry = (ti, r);
        }
    }

    let mut subgraphs = Vec::new();
    let mut owners: Vec<Vec<ToolKey>> = Vec::new();
    for (task, &(ti, ret)) in &best {
        report.winners.insert((*task).to_owned(), rollouts[ti].rollout_index);
        let t = &rollouts[ti];
        let phi = subtask_tools(t, ti, pool, graph);
        let (mut keys, edges) = match &t.plan {
            Some(plan) => extract_subgraph(plan, &phi),
            None => (Vec::new(), Vec::new()),
        };
        for (ci, c) in pool.candidates().iter().enumerate() {
            if c.trajectory == ti && !keys.contains(&ToolKey::Candidate(ci)) {
                keys.push(ToolKey::Candidate(ci));
            }
        }
        if keys.is_empty() {
            continue;
        }
        let nodes = keys
            .iter()
            .map(|k| match *k {
                ToolKey::Candidate(ci) => {
                    IncomingTool::embedded(pool.candidates()[ci].spec.clone(), provider, ret, iteration)
                }
                ToolKey::Node(id) => {
                    IncomingTool::from_node(graph.node(id).expect("mapped node exists"), ret, iteration)
                }
            })
            .collect();
        let pos = |k: &ToolKey| keys.iter().position(|x| x == k).expect("edge endpoint is a node");
        let edges = edges.iter().map(|(a, b)| (pos(a), pos(b))).collect();
        subgraphs.push(Subgraph { nodes, edges });
        owners.push(keys);
    }

    report.merge = graph.merge(&subgraphs);

    // Among candidates resolving to a freshly inserted node, the first in
    // merge order (name, description) is the one that created it.
    let mut resolved: Vec<(usize, NodeId)> = Vec::new();
    for (si, keys) in owners.iter().enumerate() {
        for (ni, k) in keys.iter().enumerate() {
            if let ToolKey::Candidate(ci) = k {
                resolved.push((*ci, report.merge.resolved[si][ni]));
            }
        }
    }
    resolved.sort_by(|a, b| {
        let (sa, sb) = (&pool.candidates()[a.0].spec, &pool.candidates()[b.0].spec);
        (&sa.name, &sa.description, a.0).cmp(&(&sb.name, &sb.description, b.0))
    });
    let mut claimed: Vec<NodeId> = Vec::new();
    for (ci, id) in resolved {
        let fresh = report.merge.inserted.contains(&id) && !claimed.contains(&id);
        report.fates[ci] = if fresh {
            claimed.push(id);
            CandidateFate::Registered(id)
        } else {
            CandidateFate::Merged(id)
        };
    }
    report
}
