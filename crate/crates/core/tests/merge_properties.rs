use proptest::prelude::*;
use toolgraph_rl::memory::{IncomingTool, Subgraph, ToolGraph, ToolSpec};
use toolgraph_rl::retrieval::cosine;

fn tool(name: u8, emb: [f64; 3]) -> IncomingTool {
    let spec = ToolSpec {
        name: format!("tool{name}"),
        description: format!("tool {name}"),
        arguments_doc: String::new(),
        returns_doc: String::new(),
        code: String::new(),
    };
    IncomingTool::new(spec, emb.to_vec(), 1.0, 1, 0)
}

fn subgraph() -> impl Strategy<Value = Subgraph> {
    prop::collection::vec((0u8..12, prop::array::uniform3(0.05f64..1.0)), 1..5).prop_flat_map(|nodes| {
        let n = nodes.len();
        prop::collection::vec((0..n, 0..n), 0..=n + 1)
            .prop_map(move |edges| Subgraph { nodes: nodes.iter().map(|&(name, e)| tool(name, e)).collect(), edges })
    })
}

fn fixed_point(g: &ToolGraph) -> bool {
    let nodes: Vec<_> = g.nodes().collect();
    nodes.iter().enumerate().all(|(i, a)| {
        nodes[i + 1..].iter().all(|b| cosine(&a.embedding, &b.embedding).unwrap() < g.similarity_threshold())
    })
}

proptest! {
    #[test]
    fn merge_invariants(rounds in prop::collection::vec(prop::collection::vec(subgraph(), 1..4), 1..5)) {
        let mut g = ToolGraph::new(0.85);
        let mut registered = 0;
        for subgraphs in &rounds {
            registered += subgraphs.iter().map(|s| s.nodes.len()).sum::<usize>();
            let before = g.total_edge_weight();
            let report = g.merge(subgraphs);
            prop_assert!(!g.has_dangling_edges());
            prop_assert!(fixed_point(&g));
            prop_assert!(g.len() <= registered);
            prop_assert_eq!(g.total_edge_weight() + report.dropped_self_loop_weight, before + report.incoming_edge_weight);
            for (s, ids) in subgraphs.iter().zip(&report.resolved) {
                for &(a, b) in &s.edges {
                    let (from, to) = (ids[a], ids[b]);
                    prop_assert!(from == to || g.edges().any(|e| e.from == from && e.to == to));
                }
            }
            let mut again = g.clone();
            let second = again.merge(subgraphs);
            prop_assert!(second.inserted.is_empty());
            prop_assert_eq!(again.structure(), g.structure());
        }
    }

    #[test]
    fn store_round_trip_after_merges(rounds in prop::collection::vec(prop::collection::vec(subgraph(), 1..3), 1..4)) {
        let mut g = ToolGraph::new(0.85);
        for s in &rounds {
            g.merge(s);
        }
        let back = ToolGraph::from_json(&g.to_json(), "mem").unwrap();
        prop_assert_eq!(back, g);
    }
}
