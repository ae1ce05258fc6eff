use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::MemorySnapshot;
use super::rollout::{run_rollout, Rollout};
use super::task::SyntheticTask;
use super::SimError;
use crate::config::RunConfig;
use crate::credit::compute_advantages;
use crate::memory::{register_iteration, CandidateFate, CandidatePool, RegistrationReport, ToolGraph};
use crate::par::{map_slice, with_workers};
use crate::policy::{evaluate, update, PolicySample, SoftmaxToyPolicy, UpdateMetrics};
use crate::retrieval::EmbeddingProvider;
use crate::reward::trajectory_return;
use crate::trajectory::Trajectory;

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub mean_return: f64,
    pub success_rate: f64,
    pub mean_turns: f64,
    pub objective: f64,
    pub mean_ratio: f64,
    pub kl: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub node_count: usize,
    pub edge_count: usize,
    pub component_count: usize,
    pub largest_component_size: usize,
    pub candidates: usize,
    pub registered: usize,
    pub merged: usize,
    pub discarded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub metrics: IterationMetrics,
    /// In (task, rollout) order.
    pub rollouts: Vec<Rollout>,
    pub registration: RegistrationReport,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the rollout stream for (iteration, dataset task, rollout).
pub fn rollout_seed(seed: u64, iteration: u64, task: u64, rollout: u64) -> u64 {
    [iteration, task, rollout].into_iter().fold(splitmix(seed), |acc, x| splitmix(acc ^ splitmix(x)))
}

/// One iteration: sample tasks, roll out against a snapshot of `graph`,
/// evolve memory, compute advantages and update the policy.
pub fn run_iteration(
    dataset: &[SyntheticTask],
    policy: &mut SoftmaxToyPolicy,
    graph: &mut ToolGraph,
    cfg: &RunConfig,
    provider: &dyn EmbeddingProvider,
    iteration: u64,
) -> Result<IterationReport, SimError> {
    if dataset.is_empty() {
        return Err(SimError::EmptyDataset);
    }
    let exec = cfg.sim.execution;
    let mut batch_rng = ChaCha8Rng::seed_from_u64(rollout_seed(cfg.sim.seed, iteration, u64::MAX, u64::MAX));
    let mut tasks: Vec<usize> =
        sample(&mut batch_rng, dataset.len(), cfg.sim.batch_tasks.min(dataset.len())).into_vec();
    tasks.sort_unstable();
    let jobs: Vec<(usize, usize)> = tasks.iter().flat_map(|&t| (0..cfg.sim.rollout_num).map(move |r| (t, r))).collect();

    let rollouts: Vec<Rollout> = {
        let snapshot = MemorySnapshot::new(graph, provider, cfg.retrieval);
        let frozen: &SoftmaxToyPolicy = policy;
        map_slice(exec, &jobs, |&(t, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(rollout_seed(cfg.sim.seed, iteration, t as u64, r as u64));
            run_rollout(&dataset[t], r, frozen, &snapshot, &cfg.sim, &cfg.reward, &mut rng)
        })
        .into_iter()
        .collect::<Result<_, _>>()?
    };
    let trajectories: Vec<Trajectory> = rollouts.iter().map(|r| r.trajectory.clone()).collect();

    let pool = CandidatePool::from_rollouts(&trajectories);
    let registration = register_iteration(&pool, &trajectories, graph, provider, iteration);

    let advantages = compute_advantages(&trajectories, graph, provider, &cfg.advantage, exec)?;
    let samples: Vec<PolicySample> = rollouts
        .iter()
        .zip(&advantages)
        .flat_map(|(r, adv)| {
            r.decisions.iter().map(|d| PolicySample::new(d.state, d.action, adv[d.step].combined, d.log_prob))
        })
        .collect();

    let um = if cfg.sim.frozen_policy {
        let r = evaluate(policy, &samples, &cfg.optimizer)?;
        UpdateMetrics {
            objective: r.objective,
            mean_ratio: r.mean_ratio,
            kl: r.kl,
            entropy: r.entropy,
            clip_fraction: r.clip_fraction,
            grad_norm: 0.0,
        }
    } else {
        update(policy, &samples, &cfg.optimizer, exec)?
    };

    let n = trajectories.len() as f64;
    let stats = graph.stats();
    let metrics = IterationMetrics {
        iteration,
        mean_return: trajectories.iter().map(trajectory_return).sum::<f64>() / n,
        success_rate: trajectories.iter().filter(|t| t.outcome).count() as f64 / n,
        mean_turns: trajectories.iter().map(|t| t.turns() as f64).sum::<f64>() / n,
        objective: um.objective,
        mean_ratio: um.mean_ratio,
        kl: um.kl,
        entropy: um.entropy,
        clip_fraction: um.clip_fraction,
        grad_norm: um.grad_norm,
        node_count: stats.node_count,
        edge_count: stats.edge_count,
        component_count: stats.component_count,
        largest_component_size: stats.largest_component_size,
        candidates: pool.len(),
        registered: registration.count(|f| matches!(f, CandidateFate::Registered(_))),
        merged: registration.count(|f| matches!(f, CandidateFate::Merged(_))),
        discarded: registration.count(|f| matches!(f, CandidateFate::Discarded)),
    };
    Ok(IterationReport { metrics, rollouts, registration })
}

/// Runs the iterations in `iterations`, calling `on_iteration` after each.
/// An empty range leaves policy and graph untouched.
pub fn run_training(
    dataset: &[SyntheticTask],
    policy: &mut SoftmaxToyPolicy,
    graph: &mut ToolGraph,
    cfg: &RunConfig,
    provider: &dyn EmbeddingProvider,
    iterations: Range<u64>,
    on_iteration: &mut (dyn FnMut(&IterationMetrics) + Send),
) -> Result<Vec<IterationMetrics>, SimError> {
    cfg.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    with_workers(cfg.sim.execution, cfg.sim.workers, || {
        let mut out = Vec::new();
        for it in iterations {
            let report = run_iteration(dataset, policy, graph, cfg, provider, it)?;
            on_iteration(&report.metrics);
            out.push(report.metrics);
        }
        Ok(out)
    })
}
