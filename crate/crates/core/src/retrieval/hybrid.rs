use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{cosine, EmbeddingError, EmbeddingProvider, SparseIndex};
use crate::memory::{NodeId, ToolGraph, ToolNode};
use crate::par::{map_slice, Execution};

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Weight of the sparse score; `1 - alpha` weights the dense score.
    pub alpha: f64,
    pub top_k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { alpha: 0.5, top_k: 3 }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(RetrievalError::InvalidConfig(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.top_k == 0 {
            return Err(RetrievalError::InvalidConfig("top_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn fuse(&self, text: f64, sem: f64) -> f64 {
        self.alpha * text + (1.0 - self.alpha) * sem
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTool {
    pub id: NodeId,
    pub name: String,
    /// σ^text
    pub text: f64,
    /// σ^sem
    pub sem: f64,
    /// σ^hyb
    pub hyb: f64,
}

/// σ^sem: cosine of the query embedding with the node embedding.
pub fn dense_score(query: &str, node: &ToolNode, provider: &dyn EmbeddingProvider) -> Result<f64, EmbeddingError> {
    cosine(&provider.embed(query), &node.embedding)
}

/// Ranks every node of `g` against one query and keeps the top `cfg.top_k`
/// by σ^hyb descending, then name ascending, then id.
pub fn rank_one(
    query: &str,
    g: &ToolGraph,
    index: &SparseIndex,
    provider: &dyn EmbeddingProvider,
    cfg: &RetrievalConfig,
) -> Result<Vec<ScoredTool>, RetrievalError> {
    cfg.validate()?;
    let q_sparse = index.query_vector(query);
    let q_dense = provider.embed(query);
    let mut scored = Vec::with_capacity(g.len());
    for n in g.nodes() {
        let text = index.score_vector(&q_sparse, n.id);
        let sem = cosine(&q_dense, &n.embedding)?;
        scored.push(ScoredTool { id: n.id, name: n.name.clone(), text, sem, hyb: cfg.fuse(text, sem) });
    }
    scored.sort_by(|a, b| b.hyb.total_cmp(&a.hyb).then_with(|| a.name.cmp(&b.name)).then(a.id.cmp(&b.id)));
    scored.truncate(cfg.top_k);
    Ok(scored)
}

/// Ranked tools per subplan; an empty graph yields empty lists.
pub fn hybrid_rank(
    plans: &[String],
    g: &ToolGraph,
    provider: &dyn EmbeddingProvider,
    cfg: &RetrievalConfig,
    exec: Execution,
) -> Result<Vec<Vec<ScoredTool>>, RetrievalError> {
    cfg.validate()?;
    let index = SparseIndex::from_graph(g);
    map_slice(exec, plans, |p| rank_one(p, g, &index, provider, cfg)).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{IncomingTool, ToolSpec};
    use crate::retrieval::TrigramEmbedder;

    fn graph(tools: &[(&str, &str)]) -> ToolGraph {
        let e = TrigramEmbedder::default();
        let mut g = ToolGraph::new(1.0);
        for (name, desc) in tools {
            let spec = ToolSpec {
                name: (*name).into(),
                description: (*desc).into(),
                arguments_doc: String::new(),
                returns_doc: String::new(),
                code: String::new(),
            };
            g.insert(IncomingTool::embedded(spec, &e, 0.0, 0));
        }
        g
    }

    fn corpus() -> ToolGraph {
        graph(&[
            ("digit_reverser", "reverse the decimal digits of an integer"),
            ("gcd_tool", "greatest common divisor of two integers"),
            ("adder", "add a constant to a number"),
            ("squarer", "square an integer"),
            ("digit_sum", "sum of decimal digits"),
        ])
    }

    #[test]
    fn fusion_is_linear() {
        let cfg = RetrievalConfig::default();
        assert!((cfg.fuse(0.8, 0.4) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn empty_graph_gives_empty_lists() {
        let e = TrigramEmbedder::default();
        let out =
            hybrid_rank(&["x".into()], &ToolGraph::new(0.85), &e, &RetrievalConfig::default(), Execution::Sequential)
                .unwrap();
        assert_eq!(out, vec![Vec::<ScoredTool>::new()]);
    }

    #[test]
    fn alpha_one_is_sparse_order() {
        let g = corpus();
        let e = TrigramEmbedder::default();
        let cfg = RetrievalConfig { alpha: 1.0, top_k: 5 };
        let ranked = hybrid_rank(&["reverse digits".into()], &g, &e, &cfg, Execution::Sequential).unwrap();
        let idx = SparseIndex::from_graph(&g);
        let mut oracle: Vec<(f64, String)> =
            g.nodes().map(|n| (idx.score("reverse digits", n.id), n.name.clone())).collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let names: Vec<String> = ranked[0].iter().map(|s| s.name.clone()).collect();
        assert_eq!(names, oracle.into_iter().map(|(_, n)| n).collect::<Vec<_>>());
        assert_eq!(names[0], "digit_reverser");
    }

    #[test]
    fn top_k_and_ties_by_name() {
        let g = graph(&[("b_tool", "same text"), ("a_tool", "same text"), ("c_tool", "other")]);
        let e = TrigramEmbedder::default();
        let cfg = RetrievalConfig { alpha: 1.0, top_k: 2 };
        let r = hybrid_rank(&["same text".into()], &g, &e, &cfg, Execution::Parallel).unwrap();
        assert_eq!(r[0].len(), 2);
        assert_eq!(r[0][0].text, r[0][1].text);
        assert_eq!(r[0][0].name, "a_tool");
    }

    #[test]
    fn invalid_config_rejected() {
        let e = TrigramEmbedder::default();
        let bad = RetrievalConfig { alpha: 1.5, top_k: 3 };
        assert!(hybrid_rank(&[], &corpus(), &e, &bad, Execution::Sequential).is_err());
        let bad = RetrievalConfig { alpha: 0.5, top_k: 0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dense_score_mismatch() {
        let g = corpus();
        let n = g.nodes().next().unwrap();
        assert!(dense_score("x", n, &TrigramEmbedder::new(8)).is_err());
        let s = dense_score(&format!("{}: {}", n.name, n.description), n, &TrigramEmbedder::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
