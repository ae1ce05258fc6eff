//! Two-level group-relative credit assignment.
//!
//! Episode level: each trajectory's return is z-scored within its rollout
//! group (all rollouts of one task). Step level: every tool-bearing action
//! is keyed by a canonical tool identity, its anchor, and its return-to-go
//! is z-scored within the anchor's group across the rollout group. The two
//! are combined as `A = A_E + omega * A_S`; steps without an anchor receive
//! `A_E` only, and `omega = 0` recovers plain group-relative (GRPO) credit.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{NodeId, ToolGraph, ToolSpec};
use crate::par::{map_slice, Execution};
use crate::retrieval::EmbeddingProvider;
use crate::reward::{returns_to_go, trajectory_return};
use crate::trajectory::{ActionKind, Trajectory, MALFORMED_TOOL, MCP_CREATE_TOOL};

/// Environment tools that exist outside memory.
pub const BASE_TOOLS: [&str; 3] = ["search", "execute_python_code", "python"];

#[derive(Debug, Error, PartialEq)]
pub enum CreditError {
    #[error("advantage group is empty")]
    EmptyGroup,
    #[error("step {step} of trajectory {trajectory} calls unknown tool {name:?}")]
    UnknownTool { name: String, trajectory: usize, step: usize },
    #[error("invalid advantage config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvantageConfig {
    pub omega: f64,
    pub eps: f64,
    pub single_vanishing: bool,
    /// Discount for return-to-go.
    pub gamma: f64,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        Self { omega: 1.0, eps: 1e-8, single_vanishing: true, gamma: 1.0 }
    }
}

impl AdvantageConfig {
    pub fn validate(&self) -> Result<(), CreditError> {
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(CreditError::InvalidConfig(format!("omega {} must be finite and >= 0", self.omega)));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(CreditError::InvalidConfig(format!("eps {} must be > 0", self.eps)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(CreditError::InvalidConfig(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        Ok(())
    }
}

/// Z-scores `values` with the population standard deviation.
///
/// Groups of one, or with std below `eps`, vanish to all zeros under
/// single-vanishing; otherwise the divisor is `max(std, eps)`.
pub fn normalize_group(values: &[f64], cfg: &AdvantageConfig) -> Result<Vec<f64>, CreditError> {
    if values.is_empty() {
        return Err(CreditError::EmptyGroup);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if cfg.single_vanishing && (values.len() == 1 || std < cfg.eps) {
        return Ok(vec![0.0; values.len()]);
    }
    let denom = std.max(cfg.eps);
    Ok(values.iter().map(|v| (v - mean) / denom).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeGroup {
    pub task_id: String,
    /// (batch index, total return), by rollout index.
    pub members: Vec<(usize, f64)>,
}

/// Rollout groups of a batch, by task id.
pub fn episode_groups(batch: &[Trajectory]) -> Vec<EpisodeGroup> {
    let mut by_task: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in batch.iter().enumerate() {
        by_task.entry(&t.task_id).or_default().push(i);
    }
    by_task
        .into_iter()
        .map(|(task, mut idx)| {
            idx.sort_by_key(|&i| (batch[i].rollout_index, i));
            EpisodeGroup {
                task_id: task.to_owned(),
                members: idx.iter().map(|&i| (i, trajectory_return(&batch[i]))).collect(),
            }
        })
        .collect()
}

pub fn episode_advantage(g: &EpisodeGroup, cfg: &AdvantageConfig) -> Result<Vec<f64>, CreditError> {
    let returns: Vec<f64> = g.members.iter().map(|m| m.1).collect();
    normalize_group(&returns, cfg)
}

/// Canonical tool identity used to group steps.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// A registered memory tool.
    Node { id: NodeId, name: String },
    /// A base environment tool, or a created tool that did not enter memory.
    Tool(String),
}

impl fmt::Display for Anchor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Anchor::Node { id, name } => write!(f, "node:{id}:{name}"),
            Anchor::Tool(name) => write!(f, "tool:{name}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMember {
    /// Batch index of the trajectory.
    pub trajectory: usize,
    pub step: usize,
    pub return_to_go: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepGroup {
    pub anchor: Anchor,
    /// Ordered by (task id, rollout index, step index).
    pub members: Vec<StepMember>,
}

pub fn step_advantage(g: &StepGroup, cfg: &AdvantageConfig) -> Result<Vec<f64>, CreditError> {
    let rtg: Vec<f64> = g.members.iter().map(|m| m.return_to_go).collect();
    normalize_group(&rtg, cfg)
}

pub fn combine(a_e: f64, a_s: Option<f64>, cfg: &AdvantageConfig) -> f64 {
    match a_s {
        Some(s) => a_e + cfg.omega * s,
        None => a_e,
    }
}

fn node_anchor(g: &ToolGraph, id: NodeId) -> Anchor {
    Anchor::Node { id, name: g.node(id).map(|n| n.name.clone()).unwrap_or_default() }
}

/// Resolves creation steps to the node they were merged into (similarity
/// at or above the registry threshold), or to their own name.
fn creation_anchor(spec: &ToolSpec, registry: &ToolGraph, provider: &dyn EmbeddingProvider) -> Anchor {
    match registry.merge_target(&provider.embed(&spec.embedding_text())) {
        Some(id) => node_anchor(registry, id),
        None => Anchor::Tool(spec.name.clone()),
    }
}

/// Groups the tool-bearing action steps of `batch` by anchor.
///
/// Creation steps are canonicalized by similarity against `registry` (the
/// post-merge memory). A call resolves, in order, to a tool created earlier
/// in the same trajectory, one created elsewhere in the batch, a registry
/// node of that name, or a base tool; anything else is `UnknownTool`.
pub fn build_step_groups(
    batch: &[Trajectory],
    registry: &ToolGraph,
    provider: &dyn EmbeddingProvider,
    cfg: &AdvantageConfig,
) -> Result<BTreeMap<Anchor, StepGroup>, CreditError> {
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|&a, &b| {
        (&batch[a].task_id, batch[a].rollout_index, a).cmp(&(&batch[b].task_id, batch[b].rollout_index, b))
    });

    let mut batch_created: BTreeMap<&str, Anchor> = BTreeMap::new();
    let mut step_anchor: BTreeMap<(usize, usize), Anchor> = BTreeMap::new();
    for &ti in &order {
        for s in &batch[ti].steps {
            let Some(a) = s.action.as_ref().filter(|a| a.kind == ActionKind::McpCreate) else { continue };
            let anchor = creation_anchor(&ToolSpec::from_creation(a), registry, provider);
            if let Some(name) = a.tool_name.as_deref() {
                batch_created.entry(name).or_insert_with(|| anchor.clone());
            }
            step_anchor.insert((ti, s.index), anchor);
        }
    }

    let mut groups: BTreeMap<Anchor, StepGroup> = BTreeMap::new();
    for &ti in &order {
        let t = &batch[ti];
        let rtg = returns_to_go(&t.reward_sequence(), cfg.gamma);
        let mut own_created: BTreeMap<&str, Anchor> = BTreeMap::new();
        for (pos, s) in t.steps.iter().enumerate() {
            let Some(a) = s.action.as_ref().filter(|a| a.is_tool()) else { continue };
            let name = a.tool_name.as_deref().unwrap_or(MCP_CREATE_TOOL);
            let anchor = match a.kind {
                ActionKind::McpCreate => {
                    let anchor = step_anchor[&(ti, s.index)].clone();
                    own_created.insert(name, anchor.clone());
                    anchor
                }
                _ => own_created
                    .get(name)
                    .or_else(|| batch_created.get(name))
                    .cloned()
                    .or_else(|| registry.find_by_name(name).map(|n| node_anchor(registry, n.id)))
                    .or_else(|| {
                        (BASE_TOOLS.contains(&name) || name == MCP_CREATE_TOOL || name == MALFORMED_TOOL)
                            .then(|| Anchor::Tool(name.to_owned()))
                    })
                    .ok_or_else(|| CreditError::UnknownTool { name: name.to_owned(), trajectory: ti, step: s.index })?,
            };
            groups
                .entry(anchor.clone())
                .or_insert_with(|| StepGroup { anchor, members: Vec::new() })
                .members
                .push(StepMember { trajectory: ti, step: s.index, return_to_go: rtg[pos] });
        }
    }
    Ok(groups)
}

/// Advantage record of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepAdvantage {
    pub task_id: String,
    pub rollout_index: usize,
    pub step: usize,
    pub episode: f64,
    pub anchor: Option<Anchor>,
    pub step_level: Option<f64>,
    pub combined: f64,
}

/// Episode and step advantages for every step of every trajectory, in
/// batch order. Step groups are formed within each rollout group.
pub fn compute_advantages(
    batch: &[Trajectory],
    registry: &ToolGraph,
    provider: &dyn EmbeddingProvider,
    cfg: &AdvantageConfig,
    exec: Execution,
) -> Result<Vec<Vec<StepAdvantage>>, CreditError> {
    cfg.validate()?;
    let groups = episode_groups(batch);
    let per_group = map_slice(exec, &groups, |g| -> Result<_, CreditError> {
        let a_e = episode_advantage(g, cfg)?;
        let members: Vec<Trajectory> = g.members.iter().map(|&(i, _)| batch[i].clone()).collect();
        let step_groups = build_step_groups(&members, registry, provider, cfg)?;
        let mut step_level: BTreeMap<(usize, usize), (Anchor, f64)> = BTreeMap::new();
        for sg in step_groups.values() {
            for (m, a) in sg.members.iter().zip(step_advantage(sg, cfg)?) {
                step_level.insert((g.members[m.trajectory].0, m.step), (sg.anchor.clone(), a));
            }
        }
        Ok(g.members
            .iter()
            .zip(a_e)
            .map(|(&(bi, _), ae)| {
                let t = &batch[bi];
                let records = t
                    .steps
                    .iter()
                    .map(|s| {
                        let sl = step_level.get(&(bi, s.index));
                        StepAdvantage {
                            task_id: t.task_id.clone(),
                            rollout_index: t.rollout_index,
                            step: s.index,
                            episode: ae,
                            anchor: sl.map(|x| x.0.clone()),
                            step_level: sl.map(|x| x.1),
                            combined: combine(ae, sl.map(|x| x.1), cfg),
                        }
                    })
                    .collect::<Vec<_>>();
                (bi, records)
            })
            .collect::<Vec<_>>())
    });
    let mut out = vec![Vec::new(); batch.len()];
    for group in per_group {
        for (bi, records) in group? {
            out[bi] = records;
        }
    }
    Ok(out)
}
