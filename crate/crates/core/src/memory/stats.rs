use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ToolGraph;

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }

    pub fn component_size(&mut self, x: usize) -> usize {
        let r = self.find(x);
        self.size[r]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct GraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub component_count: usize,
    pub largest_component_size: usize,
}

impl ToolGraph {
    /// Node and edge counts plus weakly-connected component analysis.
    pub fn stats(&self) -> GraphStats {
        let index: BTreeMap<u64, usize> = self.nodes().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut uf = UnionFind::new(index.len());
        for e in self.edges() {
            uf.union(index[&e.from], index[&e.to]);
        }
        let mut components = 0;
        let mut largest = 0;
        for i in 0..index.len() {
            if uf.find(i) == i {
                components += 1;
                largest = largest.max(uf.component_size(i));
            }
        }
        GraphStats {
            node_count: self.len(),
            edge_count: self.edge_count(),
            component_count: components,
            largest_component_size: largest,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{IncomingTool, Subgraph, ToolSpec};

    fn tool(i: usize, dim: usize) -> IncomingTool {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        let spec = ToolSpec {
            name: format!("t{i}"),
            description: String::new(),
            arguments_doc: String::new(),
            returns_doc: String::new(),
            code: String::new(),
        };
        IncomingTool::new(spec, e, 0.0, 1, 0)
    }

    #[test]
    fn empty_graph_is_all_zero() {
        assert_eq!(ToolGraph::new(0.85).stats(), GraphStats::default());
    }

    #[test]
    fn disjoint_chains_then_bridge() {
        let mut g = ToolGraph::new(0.85);
        let ids: Vec<u64> = (0..4).map(|i| g.insert(tool(i, 8))).collect();
        g.add_edge(ids[0], ids[1], 1);
        g.add_edge(ids[2], ids[3], 1);
        let s = g.stats();
        assert_eq!((s.node_count, s.edge_count, s.component_count, s.largest_component_size), (4, 2, 2, 2));

        // A bridging subgraph reusing t1 and t2 joins the chains.
        let bridge = Subgraph { nodes: vec![tool(1, 8), tool(2, 8)], edges: vec![(0, 1)] };
        g.merge(&[bridge]);
        let after = g.stats();
        assert!(after.component_count < s.component_count);
        assert_eq!(after.largest_component_size, 4);
    }
}
