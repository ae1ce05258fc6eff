//! Tool-memory anchored reinforcement learning for tool-using agents.
//!
//! The crate is organised around the training loop of a self-evolving agent:
//!
//! - [`trajectory`]: tasks, plans, phase-tagged steps, and the tag parser that
//!   turns agent output into them.
//! - [`reward`]: outcome, behavioral and format rewards, returns and
//!   return-to-go.
//! - [`credit`]: episode-level and tool-anchored step-level relative
//!   advantages and their combination.
//! - [`policy`]: the policy adapter contract, a softmax toy policy, and the
//!   clipped surrogate objective with a KL penalty.
//! - [`memory`]: the evolving directed tool graph with similarity merging,
//!   registration, statistics and persistence.
//! - [`retrieval`]: sparse tf-idf plus dense embedding hybrid ranking.
//! - [`sim`]: a synthetic tool environment and the end-to-end training loop.
//! - [`config`]: the run configuration shared by the library and the CLI.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to sequential iteration
//! otherwise.

pub mod config;
pub mod credit;
pub mod memory;
pub mod par;
pub mod policy;
pub mod retrieval;
pub mod reward;
pub mod sim;
pub mod trajectory;

pub use config::RunConfig;
