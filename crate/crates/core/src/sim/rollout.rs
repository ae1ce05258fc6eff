use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::env::{MemorySnapshot, Observation, RolloutPolicy, SimAction, SimEnv};
use super::runtime::SimToolRuntime;
use super::task::SyntheticTask;
use super::{SimConfig, SimError};
use crate::reward::{score_trajectory, NormalizedMatchJudge, RewardConfig};
use crate::trajectory::Trajectory;

/// A policy choice made during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// Index of the step the choice produced.
    pub step: usize,
    pub state: usize,
    pub action: usize,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub decisions: Vec<Decision>,
}

/// Plans, then retrieves, thinks and acts per subtask until the policy
/// answers or the turn budget runs out; the last turn is reserved for an
/// answer. Rewards are attached before returning.
pub fn run_rollout(
    task: &SyntheticTask,
    rollout_index: usize,
    policy: &dyn RolloutPolicy,
    memory: &MemorySnapshot<'_>,
    cfg: &SimConfig,
    reward: &RewardConfig,
    rng: &mut dyn RngCore,
) -> Result<Rollout, SimError> {
    let env = SimEnv {
        task,
        runtime: SimToolRuntime::new(cfg.runtime),
        max_turns: cfg.max_turns,
        direct_accuracy: cfg.direct_accuracy,
    };
    let mut st = env.reset();
    let mut t = Trajectory::new(task.id.clone(), rollout_index);
    let mut decisions = Vec::new();
    while !env.is_terminal(&st) {
        let (obs, pre) = env.observe(&mut st, memory)?;
        for s in pre {
            t.push(s);
        }
        let forced = obs != Observation::Planning && env.must_answer(&st);
        let (action, log_prob) = if forced {
            (SimAction::Answer, None)
        } else {
            let (a, lp) = policy.act(obs, rng);
            (a, Some(lp))
        };
        let step = env.step(&mut st, obs, action, memory, rng)?;
        let index = t.push(step);
        if let Some(log_prob) = log_prob {
            decisions.push(Decision { step: index, state: obs.state_index(), action: action.index(), log_prob });
        }
    }
    t.plan_raw = st.plan_raw;
    t.plan = st.plan;
    score_trajectory(&mut t, &task.task(), reward, &NormalizedMatchJudge)?;
    Ok(Rollout { trajectory: t, decisions })
}
