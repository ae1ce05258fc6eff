//! The evolving tool graph: nodes are registered tools, edges are observed
//! execution-order dependencies between them.
//!
//! Lifecycle per training iteration: rollouts read an immutable snapshot;
//! afterwards [`register_iteration`] picks the best rollout per task, turns
//! its plan into a subgraph and [`ToolGraph::merge`]s it in.

mod graph;
mod registry;
mod stats;
mod store;

pub use graph::{DepEdge, IncomingTool, MergeReport, NodeId, Structure, Subgraph, ToolGraph, ToolNode, ToolSpec};
pub use registry::{extract_subgraph, register_iteration, Candidate, CandidateFate, CandidatePool, RegistrationReport};
pub use stats::{GraphStats, UnionFind};
pub use store::{GraphStore, StoreError, STORE_VERSION};
