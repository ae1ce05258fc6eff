//! Versioned JSON persistence of the tool graph.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DepEdge, ToolGraph, ToolNode};

pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("corrupt graph store {path} at {location}: {message}")]
    Corrupt { path: String, location: String, message: String },
    #[error("graph store io {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStore {
    pub version: u32,
    pub threshold: f64,
    #[serde(default)]
    pub next_id: u64,
    pub nodes: Vec<ToolNode>,
    pub edges: Vec<DepEdge>,
}

impl From<&ToolGraph> for GraphStore {
    fn from(g: &ToolGraph) -> Self {
        Self {
            version: STORE_VERSION,
            threshold: g.similarity_threshold(),
            next_id: g.next_id(),
            nodes: g.nodes().cloned().collect(),
            edges: g.edges().collect(),
        }
    }
}

impl GraphStore {
    /// Validates the document and builds the graph. `path` only labels errors.
    pub fn into_graph(self, path: &str) -> Result<ToolGraph, StoreError> {
        let corrupt =
            |location: String, message: String| StoreError::Corrupt { path: path.to_owned(), location, message };
        if self.version != STORE_VERSION {
            return Err(corrupt("version".into(), format!("unsupported version {}", self.version)));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(corrupt("threshold".into(), format!("threshold {} outside (0, 1]", self.threshold)));
        }
        let mut ids = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !ids.insert(n.id) {
                return Err(corrupt(format!("nodes[{i}]"), format!("duplicate node id {}", n.id)));
            }
            if n.name.trim().is_empty() {
                return Err(corrupt(format!("nodes[{i}]"), "empty node name".into()));
            }
            let norm = n.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(corrupt(format!("nodes[{i}].embedding"), format!("norm {norm} is not 1")));
            }
        }
        let mut pairs = BTreeSet::new();
        for (i, e) in self.edges.iter().enumerate() {
            if !ids.contains(&e.from) || !ids.contains(&e.to) {
                return Err(corrupt(format!("edges[{i}]"), format!("dangling edge {} -> {}", e.from, e.to)));
            }
            if e.from == e.to || e.weight == 0 || !pairs.insert((e.from, e.to)) {
                return Err(corrupt(format!("edges[{i}]"), "self-loop, zero weight or duplicate edge".into()));
            }
        }
        Ok(ToolGraph::from_parts(self.nodes, self.edges, self.threshold, self.next_id))
    }
}

impl ToolGraph {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GraphStore::from(self)).expect("graph store serializes")
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self, StoreError> {
        let store: GraphStore = serde_json::from_str(text).map_err(|e| StoreError::Corrupt {
            path: path.to_owned(),
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        store.into_graph(path)
    }

    pub fn store(&self, path: &Path) -> Result<(), StoreError> {
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text).map_err(|source| StoreError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let text =
            fs::read_to_string(path).map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{IncomingTool, ToolSpec};
    use crate::retrieval::{EmbeddingProvider, TrigramEmbedder};

    fn sample() -> ToolGraph {
        let e = TrigramEmbedder::default();
        let mut g = ToolGraph::new(0.85);
        let mk = |n: &str| ToolSpec {
            name: n.into(),
            description: format!("{n} numbers"),
            arguments_doc: "x (int)".into(),
            returns_doc: "int".into(),
            code: format!("op:{n}"),
        };
        let a = g.insert(IncomingTool::embedded(mk("add"), &e, 1.5, 0));
        let b = g.insert(IncomingTool::embedded(mk("reverse"), &e, 0.5, 1));
        g.add_edge(a, b, 2);
        assert_eq!(e.dim(), 256);
        g
    }

    #[test]
    fn store_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let g = sample();
        g.store(&path).unwrap();
        let back = ToolGraph::load(&path).unwrap();
        assert_eq!(back.structure(), g.structure());
        assert_eq!(back, g);
    }

    #[test]
    fn corrupt_documents_report_location() {
        let err = ToolGraph::from_json("{\"version\": 1,\n \"nodes\": [", "mem").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let mut store = GraphStore::from(&sample());
        store.edges[0].to = 99;
        let err = store.into_graph("mem").unwrap_err();
        assert!(err.to_string().contains("edges[0]"), "{err}");

        let mut store = GraphStore::from(&sample());
        store.nodes[1].embedding[0] += 0.5;
        assert!(store.into_graph("mem").unwrap_err().to_string().contains("nodes[1].embedding"));

        let mut store = GraphStore::from(&sample());
        store.version = 9;
        assert!(store.into_graph("mem").is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(ToolGraph::load(Path::new("/nonexistent/graph.json")), Err(StoreError::Io { .. })));
    }
}
