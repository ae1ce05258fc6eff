use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::retrieval::{cosine, normalize, EmbeddingProvider};

pub type NodeId = u64;

/// Maximum length of a consolidated node's description.
const DESCRIPTION_CAP: usize = 240;

/// The registrable description of a tool, as given to the creation tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub arguments_doc: String,
    #[serde(default)]
    pub returns_doc: String,
    #[serde(default)]
    pub code: String,
}

impl ToolSpec {
    /// Text the similarity embedding is computed from: `name: description`.
    pub fn embedding_text(&self) -> String {
        format!("{}: {}", self.name, self.description)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolNode {
    pub id: NodeId,
    pub name: String,
    pub description: String,
    pub arguments_doc: String,
    pub returns_doc: String,
    pub code: String,
    pub embedding: Vec<f64>,
    pub cumulative_reward: f64,
    pub use_count: u64,
    pub created_at_iteration: u64,
}

impl ToolNode {
    pub fn spec(&self) -> ToolSpec {
        ToolSpec {
            name: self.name.clone(),
            description: self.description.clone(),
            arguments_doc: self.arguments_doc.clone(),
            returns_doc: self.returns_doc.clone(),
            code: self.code.clone(),
        }
    }

    /// Folds another tool's statistics into this one: the code body of the
    /// higher-reward side wins, rewards and use counts accumulate, and the
    /// description is extended up to a length cap.
    fn absorb(&mut self, spec: &ToolSpec, reward: f64, uses: u64) {
        if reward > self.cumulative_reward && !spec.code.is_empty() {
            self.code = spec.code.clone();
        }
        self.cumulative_reward += reward;
        self.use_count += uses;
        let extra = spec.description.trim();
        if !extra.is_empty() && !self.description.contains(extra) {
            let joined = format!("{} | {}", self.description, extra);
            if joined.chars().count() <= DESCRIPTION_CAP {
                self.description = joined;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub weight: u64,
}

/// A tool arriving for registration, with its embedding and the reward it
/// is credited with.
#[derive(Debug, Clone, PartialEq)]
pub struct IncomingTool {
    pub spec: ToolSpec,
    embedding: Vec<f64>,
    pub reward: f64,
    pub uses: u64,
    pub iteration: u64,
}

impl IncomingTool {
    /// The embedding is normalized on construction.
    pub fn new(spec: ToolSpec, embedding: Vec<f64>, reward: f64, uses: u64, iteration: u64) -> Self {
        Self { spec, embedding: normalize(embedding), reward, uses, iteration }
    }

    pub fn embedded(spec: ToolSpec, provider: &dyn EmbeddingProvider, reward: f64, iteration: u64) -> Self {
        let e = provider.embed(&spec.embedding_text());
        Self::new(spec, e, reward, 1, iteration)
    }

    /// A copy of an existing node, credited with `reward` and one use.
    pub fn from_node(node: &ToolNode, reward: f64, iteration: u64) -> Self {
        Self::new(node.spec(), node.embedding.clone(), reward, 1, iteration)
    }

    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }
}

/// A task-specific subgraph; edges index into `nodes`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Subgraph {
    pub nodes: Vec<IncomingTool>,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergeReport {
    /// Final node id of every incoming node, per subgraph.
    pub resolved: Vec<Vec<NodeId>>,
    pub inserted: Vec<NodeId>,
    /// Incoming nodes folded into an already present node.
    pub folded: usize,
    /// Existing node pairs consolidated during the fixed-point passes,
    /// as (removed, kept).
    pub consolidated: Vec<(NodeId, NodeId)>,
    pub incoming_edge_weight: u64,
    /// Edge weight dropped because redirection produced a self-loop.
    pub dropped_self_loop_weight: u64,
}

/// Node ids with names and the edge endpoint set; counters are ignored.
pub type Structure = (Vec<(NodeId, String)>, BTreeSet<(NodeId, NodeId)>);

#[derive(Debug, Clone, PartialEq)]
pub struct ToolGraph {
    nodes: BTreeMap<NodeId, ToolNode>,
    edges: BTreeMap<(NodeId, NodeId), u64>,
    similarity_threshold: f64,
    next_id: NodeId,
}

impl ToolGraph {
    pub fn new(similarity_threshold: f64) -> Self {
        assert!(similarity_threshold > 0.0 && similarity_threshold <= 1.0, "similarity threshold must lie in (0, 1]");
        Self { nodes: BTreeMap::new(), edges: BTreeMap::new(), similarity_threshold, next_id: 1 }
    }

    pub(crate) fn from_parts(
        nodes: Vec<ToolNode>,
        edges: Vec<DepEdge>,
        similarity_threshold: f64,
        next_id: NodeId,
    ) -> Self {
        let max_id = nodes.iter().map(|n| n.id).max().unwrap_or(0);
        Self {
            nodes: nodes.into_iter().map(|n| (n.id, n)).collect(),
            edges: edges.into_iter().map(|e| ((e.from, e.to), e.weight)).collect(),
            similarity_threshold,
            next_id: next_id.max(max_id + 1),
        }
    }

    pub fn similarity_threshold(&self) -> f64 {
        self.similarity_threshold
    }

    pub fn next_id(&self) -> NodeId {
        self.next_id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&ToolNode> {
        self.nodes.get(&id)
    }

    /// Nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &ToolNode> {
        self.nodes.values()
    }

    /// Edges in (from, to) order.
    pub fn edges(&self) -> impl Iterator<Item = DepEdge> + '_ {
        self.edges.iter().map(|(&(from, to), &weight)| DepEdge { from, to, weight })
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn total_edge_weight(&self) -> u64 {
        self.edges.values().sum()
    }

    /// Lowest-id node with exactly this name.
    pub fn find_by_name(&self, name: &str) -> Option<&ToolNode> {
        self.nodes.values().find(|n| n.name == name)
    }

    /// Most similar node to `embedding`; ties go to the lowest id. Nodes of
    /// a different dimension never match.
    pub fn most_similar(&self, embedding: &[f64]) -> Option<(NodeId, f64)> {
        let mut best: Option<(NodeId, f64)> = None;
        for n in self.nodes.values() {
            let Ok(sim) = cosine(&n.embedding, embedding) else { continue };
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((n.id, sim));
            }
        }
        best
    }

    /// Node `embedding` would fold into under the merge threshold.
    pub fn merge_target(&self, embedding: &[f64]) -> Option<NodeId> {
        self.most_similar(embedding).filter(|&(_, s)| s >= self.similarity_threshold).map(|(id, _)| id)
    }

    /// Inserts a node without similarity checks.
    pub fn insert(&mut self, tool: IncomingTool) -> NodeId {
        let id = self.next_id;
        self.next_id += 1;
        self.nodes.insert(
            id,
            ToolNode {
                id,
                name: tool.spec.name,
                description: tool.spec.description,
                arguments_doc: tool.spec.arguments_doc,
                returns_doc: tool.spec.returns_doc,
                code: tool.spec.code,
                embedding: tool.embedding,
                cumulative_reward: tool.reward,
                use_count: tool.uses,
                created_at_iteration: tool.iteration,
            },
        );
        id
    }

    /// Adds (or re-observes) an edge; `false` for self-loops or unknown ends.
    pub fn add_edge(&mut self, from: NodeId, to: NodeId, weight: u64) -> bool {
        if from == to || !self.nodes.contains_key(&from) || !self.nodes.contains_key(&to) || weight == 0 {
            return false;
        }
        *self.edges.entry((from, to)).or_insert(0) += weight;
        true
    }

    pub fn structure(&self) -> Structure {
        (self.nodes.values().map(|n| (n.id, n.name.clone())).collect(), self.edges.keys().copied().collect())
    }

    pub fn has_dangling_edges(&self) -> bool {
        self.edges.keys().any(|(a, b)| !self.nodes.contains_key(a) || !self.nodes.contains_key(b))
    }

    /// Highest pairwise similarity at or above the threshold, lowest ids on ties.
    fn closest_pair(&self) -> Option<(NodeId, NodeId)> {
        let nodes: Vec<&ToolNode> = self.nodes.values().collect();
        let mut best: Option<(NodeId, NodeId, f64)> = None;
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                let Ok(sim) = cosine(&a.embedding, &b.embedding) else { continue };
                if sim >= self.similarity_threshold && best.is_none_or(|(_, _, s)| sim > s) {
                    best = Some((a.id, b.id, sim));
                }
            }
        }
        best.map(|(a, b, _)| (a, b))
    }

    /// Folds node `from` into `keep`, redirecting its edges. Returns the
    /// weight of self-loops the redirection dropped.
    fn fold_node(&mut self, from: NodeId, keep: NodeId) -> u64 {
        let Some(gone) = self.nodes.remove(&from) else { return 0 };
        if let Some(target) = self.nodes.get_mut(&keep) {
            target.absorb(&gone.spec(), gone.cumulative_reward, gone.use_count);
        }
        let touched: Vec<((NodeId, NodeId), u64)> =
            self.edges.iter().filter(|((a, b), _)| *a == from || *b == from).map(|(&k, &w)| (k, w)).collect();
        let mut dropped = 0;
        for ((a, b), w) in touched {
            self.edges.remove(&(a, b));
            let a = if a == from { keep } else { a };
            let b = if b == from { keep } else { b };
            if a == b {
                dropped += w;
            } else {
                *self.edges.entry((a, b)).or_insert(0) += w;
            }
        }
        dropped
    }

    /// Merges pairs of nodes at or above the threshold until none remain.
    /// The lower id survives. Returns (removed, kept) pairs and dropped
    /// self-loop weight.
    pub fn consolidate(&mut self) -> (Vec<(NodeId, NodeId)>, u64) {
        let mut pairs = Vec::new();
        let mut dropped = 0;
        while let Some((keep, from)) = self.closest_pair() {
            dropped += self.fold_node(from, keep);
            pairs.push((from, keep));
        }
        (pairs, dropped)
    }

    /// Integrates task subgraphs. Incoming nodes, in canonical (name)
    /// order, are inserted when no node reaches the threshold; the rest then
    /// fold into their most similar node. Edges are redirected onto the
    /// resolved nodes. Consolidation runs to a fixed point before and after.
    pub fn merge(&mut self, subgraphs: &[Subgraph]) -> MergeReport {
        let (pre_pairs, pre_dropped) = self.consolidate();
        let mut report = MergeReport {
            resolved: subgraphs.iter().map(|s| vec![0; s.nodes.len()]).collect(),
            dropped_self_loop_weight: pre_dropped,
            ..Default::default()
        };
        let mut order: Vec<(usize, usize)> =
            subgraphs.iter().enumerate().flat_map(|(si, s)| (0..s.nodes.len()).map(move |ni| (si, ni))).collect();
        order.sort_by(|&(sa, na), &(sb, nb)| {
            let (a, b) = (&subgraphs[sa].nodes[na].spec, &subgraphs[sb].nodes[nb].spec);
            (&a.name, &a.description, sa, na).cmp(&(&b.name, &b.description, sb, nb))
        });

        let mut folding = Vec::new();
        for (si, ni) in order {
            let tool = &subgraphs[si].nodes[ni];
            if self.merge_target(&tool.embedding).is_some() {
                folding.push((si, ni));
            } else {
                let id = self.insert(tool.clone());
                report.inserted.push(id);
                report.resolved[si][ni] = id;
            }
        }
        // Folds resolve against the node set after all insertions.
        for (si, ni) in folding {
            let tool = &subgraphs[si].nodes[ni];
            let target = self.merge_target(&tool.embedding).expect("a node at or above the threshold exists");
            self.nodes.get_mut(&target).expect("target exists").absorb(&tool.spec, tool.reward, tool.uses);
            report.folded += 1;
            report.resolved[si][ni] = target;
        }

        for (si, s) in subgraphs.iter().enumerate() {
            for &(a, b) in &s.edges {
                report.incoming_edge_weight += 1;
                let (from, to) = (report.resolved[si][a], report.resolved[si][b]);
                if !self.add_edge(from, to, 1) {
                    report.dropped_self_loop_weight += 1;
                }
            }
        }

        let (pairs, dropped) = self.consolidate();
        if !pairs.is_empty() {
            for ids in report.resolved.iter_mut() {
                for id in ids.iter_mut() {
                    while let Some(&(_, keep)) = pairs.iter().find(|(gone, _)| gone == id) {
                        *id = keep;
                    }
                }
            }
            report.inserted.retain(|id| self.nodes.contains_key(id));
        }
        report.consolidated = pre_pairs.into_iter().chain(pairs).collect();
        report.dropped_self_loop_weight += dropped;
        report
    }

    /// Graphviz document: one statement per node (labelled by name) and per
    /// edge (labelled by weight).
    pub fn export_dot(&self) -> String {
        let esc = |s: &str| s.replace('\\', "\\\\").replace('"', "\\\"");
        let mut out = String::from("digraph tool_graph {\n");
        for n in self.nodes.values() {
            out.push_str(&format!("  n{} [label=\"{}\"];\n", n.id, esc(&n.name)));
        }
        for e in self.edges() {
            out.push_str(&format!("  n{} -> n{} [label=\"{}\", weight={}];\n", e.from, e.to, e.weight, e.weight));
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        normalize(v.to_vec())
    }

    fn tool(name: &str, emb: &[f64]) -> IncomingTool {
        let spec = ToolSpec {
            name: name.into(),
            description: format!("{name} tool"),
            arguments_doc: String::new(),
            returns_doc: String::new(),
            code: format!("op:{name}"),
        };
        IncomingTool::new(spec, unit(emb), 1.0, 1, 0)
    }

    /// Two unit vectors with cosine exactly `c`.
    fn pair_with_cos(c: f64) -> (Vec<f64>, Vec<f64>) {
        (vec![1.0, 0.0, 0.0], vec![c, (1.0 - c * c).sqrt(), 0.0])
    }

    #[test]
    fn empty_merge_is_identity() {
        let mut g = ToolGraph::new(0.85);
        let a = g.insert(tool("a", &[1.0, 0.0, 0.0]));
        let b = g.insert(tool("b", &[0.0, 1.0, 0.0]));
        g.add_edge(a, b, 2);
        let before = g.clone();
        let r = g.merge(&[]);
        assert_eq!(g, before);
        assert!(r.inserted.is_empty());
    }

    #[test]
    fn similar_node_folds_and_edges_redirect() {
        let (v_existing, v_new) = pair_with_cos(0.95);
        let mut g = ToolGraph::new(0.85);
        let x = g.insert(tool("x", &[0.0, 0.0, 1.0]));
        let vp = g.insert(tool("v_prime", &v_existing));
        let sub = Subgraph { nodes: vec![tool("x", &[0.0, 0.0, 1.0]), tool("v", &v_new)], edges: vec![(0, 1)] };
        let r = g.merge(&[sub]);
        assert_eq!(g.len(), 2);
        assert_eq!(r.resolved, vec![vec![x, vp]]);
        let edges: Vec<(NodeId, NodeId)> = g.edges().map(|e| (e.from, e.to)).collect();
        assert_eq!(edges, vec![(x, vp)]);
        let node = g.node(vp).unwrap();
        assert_eq!(node.use_count, 2);
        assert_eq!(node.name, "v_prime");
    }

    #[test]
    fn dissimilar_node_is_inserted() {
        let (a, b) = pair_with_cos(0.3);
        let mut g = ToolGraph::new(0.85);
        g.insert(tool("a", &a));
        let r = g.merge(&[Subgraph { nodes: vec![tool("b", &b)], edges: vec![] }]);
        assert_eq!(g.len(), 2);
        assert_eq!(r.inserted.len(), 1);
    }

    #[test]
    fn redirection_self_loops_are_counted() {
        let (a, b) = pair_with_cos(0.99);
        let mut g = ToolGraph::new(0.85);
        let sub = Subgraph { nodes: vec![tool("a", &a), tool("b", &b)], edges: vec![(0, 1)] };
        let r = g.merge(&[sub]);
        assert_eq!(g.len(), 1);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(r.incoming_edge_weight, 1);
        assert_eq!(r.dropped_self_loop_weight, 1);
    }

    #[test]
    fn consolidation_reaches_fixed_point() {
        let mut g = ToolGraph::new(0.9);
        let a = g.insert(tool("a", &[1.0, 0.0, 0.0]));
        let b = g.insert(tool("b", &[0.99, 0.1, 0.0]));
        let c = g.insert(tool("c", &[0.0, 0.0, 1.0]));
        g.add_edge(c, b, 3);
        g.add_edge(a, b, 1);
        let (pairs, dropped) = g.consolidate();
        assert_eq!(pairs, vec![(b, a)]);
        assert_eq!(dropped, 1);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![DepEdge { from: c, to: a, weight: 3 }]);
    }

    #[test]
    fn higher_reward_code_wins() {
        let mut g = ToolGraph::new(0.5);
        let id = g.insert(tool("a", &[1.0, 0.0]));
        let mut better = tool("a2", &[1.0, 0.1]);
        better.spec.code = "better".into();
        better.reward = 5.0;
        g.merge(&[Subgraph { nodes: vec![better], edges: vec![] }]);
        let n = g.node(id).unwrap();
        assert_eq!(n.code, "better");
        assert_eq!(n.cumulative_reward, 6.0);
        assert!(n.description.contains("a2 tool"));
    }

    #[test]
    fn dot_export_shapes() {
        let empty = ToolGraph::new(0.85).export_dot();
        assert_eq!(empty, "digraph tool_graph {\n}\n");
        let mut g = ToolGraph::new(0.85);
        let ids: Vec<NodeId> =
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].iter().map(|v| g.insert(tool("t\"q", v))).collect();
        g.add_edge(ids[0], ids[1], 2);
        g.add_edge(ids[1], ids[2], 1);
        let dot = g.export_dot();
        assert_eq!(dot.lines().filter(|l| l.contains("[label=") && !l.contains("->")).count(), 3);
        assert_eq!(dot.lines().filter(|l| l.contains("->")).count(), 2);
        assert!(dot.contains("t\\\"q"));
    }
}
