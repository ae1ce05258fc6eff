//! Hybrid tool retrieval: α-weighted fusion of a sparse tf-idf score and a
//! dense embedding cosine, ranked over every node of the tool graph.
//!
//! Retrieval only recommends tools for the agent's context; it never
//! restricts which tools the environment will execute.

mod embed;
mod hybrid;
mod sparse;

pub(crate) use embed::fnv1a;
#[cfg(feature = "http-embedding")]
pub use embed::HttpEmbeddingProvider;
pub use embed::{cosine, normalize, EmbeddingError, EmbeddingProvider, TrigramEmbedder};
pub use hybrid::{dense_score, hybrid_rank, rank_one, RetrievalConfig, RetrievalError, ScoredTool};
pub use sparse::{tokenize, SparseIndex};
