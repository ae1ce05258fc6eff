//! Line-delimited trajectory corpus, the ingestion and replay format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{extract_answer, parse_plan, parse_trajectory, Step, Trajectory};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("corpus io: {0}")]
    Io(#[from] std::io::Error),
}

/// One corpus line. `steps` may be omitted when `raw` carries the tagged
/// agent output instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub task_id: String,
    pub rollout_index: usize,
    #[serde(default)]
    pub plan_raw: String,
    #[serde(default)]
    pub steps: Vec<Step>,
    #[serde(default)]
    pub final_answer: Option<String>,
    #[serde(default)]
    pub outcome: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

impl CorpusRecord {
    pub fn into_trajectory(self) -> Trajectory {
        let mut steps = self.steps;
        if steps.is_empty() {
            if let Some(raw) = &self.raw {
                steps = parse_trajectory(raw);
            }
        }
        let mut t = Trajectory {
            task_id: self.task_id,
            rollout_index: self.rollout_index,
            plan: parse_plan(&self.plan_raw).ok(),
            plan_raw: self.plan_raw,
            steps,
            final_answer: self.final_answer,
            outcome: self.outcome,
        };
        t.reindex();
        if t.final_answer.is_none() {
            t.final_answer = extract_answer(&t);
        }
        t
    }
}

impl From<&Trajectory> for CorpusRecord {
    fn from(t: &Trajectory) -> Self {
        Self {
            task_id: t.task_id.clone(),
            rollout_index: t.rollout_index,
            plan_raw: t.plan_raw.clone(),
            steps: t.steps.clone(),
            final_answer: t.final_answer.clone(),
            outcome: t.outcome,
            raw: None,
        }
    }
}

/// Reads a corpus; blank lines are skipped, errors carry the 1-based line.
pub fn read_corpus(reader: impl BufRead) -> Result<Vec<Trajectory>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed { line: i + 1, message: e.to_string() })?;
        out.push(record.into_trajectory());
    }
    Ok(out)
}

pub fn write_corpus<'a>(
    mut writer: impl Write,
    trajectories: impl IntoIterator<Item = &'a Trajectory>,
) -> Result<(), CorpusError> {
    for t in trajectories {
        let line = serde_json::to_string(&CorpusRecord::from(t))
            .map_err(|e| CorpusError::Malformed { line: 0, message: e.to_string() })?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}
