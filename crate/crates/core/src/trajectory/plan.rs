use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::normalize_label;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("plan has no ##DAG_LIST section")]
    MissingDagList,
    #[error("plan defines no subtasks")]
    NoSubtasks,
    #[error("subtask {0} is defined twice")]
    DuplicateLabel(String),
    #[error("dependency list names unknown subtask {0}")]
    DanglingEdge(String),
    #[error("dependency list entry `{0}` is not a label pair")]
    BadEdge(String),
    #[error("dependency list contains a cycle through {0}")]
    Cycle(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub label: String,
    pub description: String,
    #[serde(default)]
    pub steps: Vec<String>,
}

/// A validated subtask DAG: unique labels, no dangling or cyclic edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPlan", into = "RawPlan")]
pub struct PlanGraph {
    subtasks: Vec<Subtask>,
    edges: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize)]
struct RawPlan {
    subtasks: Vec<Subtask>,
    edges: Vec<(String, String)>,
}

impl TryFrom<RawPlan> for PlanGraph {
    type Error = PlanError;

    fn try_from(raw: RawPlan) -> Result<Self, Self::Error> {
        PlanGraph::new(raw.subtasks, raw.edges)
    }
}

impl From<PlanGraph> for RawPlan {
    fn from(p: PlanGraph) -> Self {
        RawPlan { subtasks: p.subtasks, edges: p.edges }
    }
}

impl PlanGraph {
    pub fn new(subtasks: Vec<Subtask>, edges: Vec<(String, String)>) -> Result<Self, PlanError> {
        if subtasks.is_empty() {
            return Err(PlanError::NoSubtasks);
        }
        let mut seen = BTreeSet::new();
        for s in &subtasks {
            if !seen.insert(s.label.clone()) {
                return Err(PlanError::DuplicateLabel(s.label.clone()));
            }
        }
        let mut dedup = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            for l in [&a, &b] {
                if !seen.contains(l) {
                    return Err(PlanError::DanglingEdge(l.clone()));
                }
            }
            if a == b {
                return Err(PlanError::Cycle(a));
            }
            if !dedup.contains(&(a.clone(), b.clone())) {
                dedup.push((a, b));
            }
        }
        let plan = Self { subtasks, edges: dedup };
        plan.topological_order()?;
        Ok(plan)
    }

    /// A single chain ST1 -> ST2 -> ... over the given descriptions.
    pub fn chain(descriptions: &[&str]) -> Result<Self, PlanError> {
        let subtasks: Vec<Subtask> = descriptions
            .iter()
            .enumerate()
            .map(|(i, d)| Subtask { label: format!("ST{}", i + 1), description: d.to_string(), steps: Vec::new() })
            .collect();
        let edges = subtasks.windows(2).map(|w| (w[0].label.clone(), w[1].label.clone())).collect();
        Self::new(subtasks, edges)
    }

    pub fn subtasks(&self) -> &[Subtask] {
        &self.subtasks
    }

    pub fn edges(&self) -> &[(String, String)] {
        &self.edges
    }

    pub fn subtask(&self, label: &str) -> Option<&Subtask> {
        self.subtasks.iter().find(|s| s.label == label)
    }

    /// Kahn's algorithm; ready subtasks are taken in definition order.
    pub fn topological_order(&self) -> Result<Vec<&str>, PlanError> {
        let pos: BTreeMap<&str, usize> = self.subtasks.iter().enumerate().map(|(i, s)| (s.label.as_str(), i)).collect();
        let mut indegree = vec![0usize; self.subtasks.len()];
        for (_, b) in &self.edges {
            indegree[pos[b.as_str()]] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..indegree.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.subtasks.len());
        while let Some(i) = ready.pop_first() {
            let label = self.subtasks[i].label.as_str();
            order.push(label);
            for (a, b) in &self.edges {
                if a == label {
                    let j = pos[b.as_str()];
                    indegree[j] -= 1;
                    if indegree[j] == 0 {
                        ready.insert(j);
                    }
                }
            }
        }
        if order.len() < self.subtasks.len() {
            let stuck = (0..indegree.len()).find(|&i| indegree[i] > 0).unwrap_or(0);
            return Err(PlanError::Cycle(self.subtasks[stuck].label.clone()));
        }
        Ok(order)
    }

    /// Renders the plan in the `##DAG_LIST` / `##STn:` text form.
    pub fn render(&self) -> String {
        let mut out = String::from("##DAG_LIST\n[");
        if self.edges.is_empty() {
            let labels: Vec<String> = self.subtasks.iter().map(|s| format!("({})", s.label)).collect();
            out.push_str(&labels.join(", "));
        } else {
            let pairs: Vec<String> = self.edges.iter().map(|(a, b)| format!("({a}, {b})")).collect();
            out.push_str(&pairs.join(", "));
        }
        out.push_str("]\n");
        for s in &self.subtasks {
            out.push_str(&format!("##{}:{}\n", s.label, s.description));
            for (i, step) in s.steps.iter().enumerate() {
                out.push_str(&format!("{}. {}\n", i + 1, step));
            }
        }
        out
    }
}

fn tuple_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([^()]*)\)").expect("valid regex"))
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^##\s*(ST[_\s]*\d+)\s*:?\s*(.*)$").expect("valid regex"))
}

/// Parses planning output into a [`PlanGraph`].
///
/// The dependency list is the first non-empty line after `##DAG_LIST` (or
/// the remainder of that line). `(A, B)` means B depends on A; a lone `(A)`
/// only mentions a node.
pub fn parse_plan(raw: &str) -> Result<PlanGraph, PlanError> {
    let lines: Vec<&str> = raw.lines().map(str::trim).collect();
    let dag_at =
        lines.iter().position(|l| l.to_ascii_uppercase().starts_with("##DAG_LIST")).ok_or(PlanError::MissingDagList)?;
    let inline = lines[dag_at]["##DAG_LIST".len()..].trim();
    let dag_line = if inline.is_empty() {
        lines[dag_at + 1..].iter().find(|l| !l.is_empty()).copied().unwrap_or("")
    } else {
        inline
    };

    let mut mentioned = Vec::new();
    let mut edges = Vec::new();
    if !dag_line.starts_with("##") {
        for cap in tuple_re().captures_iter(dag_line) {
            let inner = cap[1].trim();
            let parts: Vec<&str> = inner.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
            let labels: Vec<String> = parts.iter().filter_map(|p| normalize_label(p)).collect();
            if labels.len() != parts.len() {
                return Err(PlanError::BadEdge(inner.to_owned()));
            }
            match labels.as_slice() {
                [a] => mentioned.push(a.clone()),
                [a, b] => edges.push((a.clone(), b.clone())),
                _ => return Err(PlanError::BadEdge(inner.to_owned())),
            }
        }
    }

    let mut subtasks: Vec<Subtask> = Vec::new();
    for line in &lines[dag_at + 1..] {
        if let Some(cap) = header_re().captures(line) {
            let label = normalize_label(&cap[1]).ok_or_else(|| PlanError::BadEdge(cap[1].to_owned()))?;
            subtasks.push(Subtask { label, description: cap[2].trim().to_owned(), steps: Vec::new() });
        } else if let Some(current) = subtasks.last_mut() {
            if !line.is_empty() {
                let step = line.trim_start_matches(|c: char| c.is_ascii_digit()).trim_start_matches('.').trim();
                current.steps.push(step.to_owned());
            }
        }
    }
    for m in &mentioned {
        if !subtasks.iter().any(|s| &s.label == m) {
            return Err(PlanError::DanglingEdge(m.clone()));
        }
    }
    PlanGraph::new(subtasks, edges)
}
