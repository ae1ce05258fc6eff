//! Clipped surrogate policy optimization with a KL penalty.
//!
//! The objective over a batch of advantaged actions is
//!
//! ```text
//! J = mean_i w_i * min(rho_i * A_i, clip(rho_i, 1 - eps, 1 + eps) * A_i)
//!     - beta * mean_i KL(pi(.|s_i) || pi_ref(.|s_i))
//! ```
//!
//! with `rho_i = exp(log pi(a_i|s_i) - log pi_old(a_i|s_i))`. Samples marked
//! as tool output are excluded when masking is on.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{map_slice, Execution};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("sample {0} has no rollout-time log-probability")]
    StaleRollout(usize),
    #[error("batch has no included samples")]
    EmptyBatch,
    #[error("non-finite gradient at parameter {0}")]
    NonFiniteGradient(usize),
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("sample {index}: state {state} / action {action} outside the policy")]
    OutOfRange { index: usize, state: usize, action: usize },
}

/// Policy over a finite action vocabulary, indexed by discrete states.
pub trait PolicyAdapter: Sync {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Current log-probabilities of every action; unavailable actions are
    /// `-inf`.
    fn log_probs(&self, state: usize) -> Vec<f64>;
    /// Frozen reference log-probabilities.
    fn ref_log_probs(&self, state: usize) -> Vec<f64>;

    fn log_prob(&self, state: usize, action: usize) -> f64 {
        self.log_probs(state)[action]
    }

    fn entropy(&self, state: usize) -> f64 {
        self.log_probs(state).iter().filter(|l| l.is_finite()).map(|&l| -l.exp() * l).sum()
    }

    /// Exact categorical `KL(pi || pi_ref)`; plugs may override with an
    /// estimator.
    fn kl(&self, state: usize) -> f64 {
        let (lp, lr) = (self.log_probs(state), self.ref_log_probs(state));
        lp.iter().zip(&lr).filter(|(l, _)| l.is_finite()).map(|(&l, &r)| l.exp() * (l - r)).sum::<f64>().max(0.0)
    }
}

/// A policy whose log-probabilities are differentiable in a flat
/// parameter vector.
pub trait Differentiable: PolicyAdapter {
    fn params(&self) -> &[f64];
    fn set_params(&mut self, params: Vec<f64>);
    /// Sparse gradient of `log pi(action|state)`.
    fn grad_log_prob(&self, state: usize, action: usize) -> Vec<(usize, f64)>;
    /// Sparse gradient of `KL(pi(.|state) || pi_ref(.|state))`.
    fn grad_kl(&self, state: usize) -> Vec<(usize, f64)>;
}

/// One advantaged action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicySample {
    pub state: usize,
    pub action: usize,
    pub advantage: f64,
    /// `log pi_old(action|state)` recorded at rollout time.
    pub old_log_prob: Option<f64>,
    /// Marks tool-execution output, which is excluded under masking.
    #[serde(default)]
    pub tool_output: bool,
    /// Per-sample weight (token count for external plugs; 1 for atomic
    /// actions).
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl PolicySample {
    pub fn new(state: usize, action: usize, advantage: f64, old_log_prob: f64) -> Self {
        Self { state, action, advantage, old_log_prob: Some(old_log_prob), tool_output: false, weight: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub clip_eps: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub mask_tool_outputs: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { clip_eps: 0.2, beta: 0.01, learning_rate: 0.5, mask_tool_outputs: true }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.clip_eps.is_nan() || self.clip_eps <= 0.0 {
            return Err(PolicyError::InvalidConfig(format!("clip_eps {} must be > 0", self.clip_eps)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(PolicyError::InvalidConfig(format!("beta {} must be finite and >= 0", self.beta)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PolicyError::InvalidConfig(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        Ok(())
    }
}

/// `rho = exp(log pi - log pi_old)`.
pub fn importance_ratio(p: &dyn PolicyAdapter, sample: &PolicySample, index: usize) -> Result<f64, PolicyError> {
    let old = sample.old_log_prob.ok_or(PolicyError::StaleRollout(index))?;
    Ok((p.log_prob(sample.state, sample.action) - old).exp())
}

/// `min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)`.
pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// True when the clipped branch is strictly active, so the term has zero
/// gradient in the ratio.
pub fn clip_active(ratio: f64, advantage: f64, eps: f64) -> bool {
    (advantage > 0.0 && ratio > 1.0 + eps) || (advantage < 0.0 && ratio < 1.0 - eps)
}

/// Mean per-state `KL(pi || pi_ref)`.
pub fn kl_penalty(p: &dyn PolicyAdapter, states: &[usize]) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    states.iter().map(|&s| p.kl(s)).sum::<f64>() / states.len() as f64
}

fn included<'a>(
    p: &dyn PolicyAdapter,
    batch: &'a [PolicySample],
    cfg: &OptimizerConfig,
) -> Result<Vec<(usize, &'a PolicySample)>, PolicyError> {
    let mut out = Vec::with_capacity(batch.len());
    for (i, s) in batch.iter().enumerate() {
        if s.state >= p.num_states() || s.action >= p.num_actions() {
            return Err(PolicyError::OutOfRange { index: i, state: s.state, action: s.action });
        }
        if s.old_log_prob.is_none() {
            return Err(PolicyError::StaleRollout(i));
        }
        if !(cfg.mask_tool_outputs && s.tool_output) && s.weight > 0.0 {
            out.push((i, s));
        }
    }
    if out.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ObjectiveReport {
    pub objective: f64,
    pub surrogate: f64,
    pub kl: f64,
    pub mean_ratio: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Evaluates the objective and its diagnostics.
pub fn evaluate(
    p: &dyn PolicyAdapter,
    batch: &[PolicySample],
    cfg: &OptimizerConfig,
) -> Result<ObjectiveReport, PolicyError> {
    let inc = included(p, batch, cfg)?;
    let wsum: f64 = inc.iter().map(|(_, s)| s.weight).sum();
    let mut r = ObjectiveReport::default();
    let mut clipped = 0.0;
    for &(i, s) in &inc {
        let rho = importance_ratio(p, s, i)?;
        let w = s.weight / wsum;
        r.surrogate += w * clipped_term(rho, s.advantage, cfg.clip_eps);
        r.kl += w * p.kl(s.state);
        r.entropy += w * p.entropy(s.state);
        r.mean_ratio += w * rho;
        if clip_active(rho, s.advantage, cfg.clip_eps) {
            clipped += w;
        }
    }
    r.clip_fraction = clipped;
    r.objective = r.surrogate - cfg.beta * r.kl;
    Ok(r)
}

/// The scalar objective to maximize.
pub fn clipped_objective(
    p: &dyn PolicyAdapter,
    batch: &[PolicySample],
    cfg: &OptimizerConfig,
) -> Result<f64, PolicyError> {
    evaluate(p, batch, cfg).map(|r| r.objective)
}

/// Analytic gradient of [`clipped_objective`]. Per-sample contributions
/// are computed with `exec` and summed in batch order.
pub fn objective_gradient<P: Differentiable>(
    p: &P,
    batch: &[PolicySample],
    cfg: &OptimizerConfig,
    exec: Execution,
) -> Result<Vec<f64>, PolicyError> {
    let inc = included(p, batch, cfg)?;
    let wsum: f64 = inc.iter().map(|(_, s)| s.weight).sum();
    let parts = map_slice(exec, &inc, |&(i, s)| -> Result<Vec<(usize, f64)>, PolicyError> {
        let w = s.weight / wsum;
        let rho = importance_ratio(p, s, i)?;
        let mut g = Vec::new();
        if !clip_active(rho, s.advantage, cfg.clip_eps) {
            let c = w * s.advantage * rho;
            g.extend(p.grad_log_prob(s.state, s.action).into_iter().map(|(k, v)| (k, c * v)));
        }
        if cfg.beta > 0.0 {
            g.extend(p.grad_kl(s.state).into_iter().map(|(k, v)| (k, -cfg.beta * w * v)));
        }
        Ok(g)
    });
    let mut grad = vec![0.0; p.params().len()];
    for part in parts {
        for (k, v) in part? {
            grad[k] += v;
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct UpdateMetrics {
    pub objective: f64,
    pub mean_ratio: f64,
    pub kl: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// One gradient-ascent step `theta += lr * grad J`. Metrics describe the
/// pre-update policy. A non-finite gradient leaves parameters untouched.
pub fn update<P: Differentiable>(
    p: &mut P,
    batch: &[PolicySample],
    cfg: &OptimizerConfig,
    exec: Execution,
) -> Result<UpdateMetrics, PolicyError> {
    cfg.validate()?;
    let report = evaluate(p, batch, cfg)?;
    let grad = objective_gradient(p, batch, cfg, exec)?;
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(PolicyError::NonFiniteGradient(k));
    }
    let params: Vec<f64> = p.params().iter().zip(&grad).map(|(t, g)| t + cfg.learning_rate * g).collect();
    p.set_params(params);
    Ok(UpdateMetrics {
        objective: report.objective,
        mean_ratio: report.mean_ratio,
        kl: report.kl,
        entropy: report.entropy,
        clip_fraction: report.clip_fraction,
        grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
    })
}

/// Tabular masked softmax: `pi(a|s) = softmax_a(theta[s, a] / temperature)`
/// over the actions available in `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxToyPolicy {
    num_states: usize,
    num_actions: usize,
    temperature: f64,
    theta: Vec<f64>,
    reference: Vec<f64>,
    available: Vec<bool>,
}

impl SoftmaxToyPolicy {
    /// Uniform policy (zero logits) that is also its own reference.
    pub fn new(num_states: usize, num_actions: usize, temperature: f64) -> Self {
        assert!(num_states > 0 && num_actions > 0, "policy needs states and actions");
        assert!(temperature > 0.0 && temperature.is_finite(), "temperature must be positive");
        let n = num_states * num_actions;
        Self {
            num_states,
            num_actions,
            temperature,
            theta: vec![0.0; n],
            reference: vec![0.0; n],
            available: vec![true; n],
        }
    }

    pub fn with_params(mut self, theta: Vec<f64>) -> Self {
        assert_eq!(theta.len(), self.theta.len());
        self.theta = theta;
        self
    }

    pub fn with_reference(mut self, reference: Vec<f64>) -> Self {
        assert_eq!(reference.len(), self.reference.len());
        self.reference = reference;
        self
    }

    /// Restricts `state` to `actions`; at least one must remain.
    pub fn restrict(&mut self, state: usize, actions: &[usize]) {
        assert!(!actions.is_empty(), "a state needs at least one available action");
        for a in 0..self.num_actions {
            self.available[state * self.num_actions + a] = actions.contains(&a);
        }
    }

    /// Freezes the current parameters as the reference.
    pub fn freeze_reference(&mut self) {
        self.reference = self.theta.clone();
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn is_available(&self, state: usize, action: usize) -> bool {
        self.available[state * self.num_actions + action]
    }

    fn log_softmax(&self, table: &[f64], state: usize) -> Vec<f64> {
        let row = state * self.num_actions..(state + 1) * self.num_actions;
        let avail = &self.available[row.clone()];
        let z: Vec<f64> = table[row].iter().map(|t| t / self.temperature).collect();
        let max = z.iter().zip(avail).filter(|(_, &a)| a).map(|(z, _)| *z).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().zip(avail).filter(|(_, &a)| a).map(|(z, _)| (z - max).exp()).sum::<f64>().ln();
        z.iter().zip(avail).map(|(z, &a)| if a { z - lse } else { f64::NEG_INFINITY }).collect()
    }

    pub fn probs(&self, state: usize) -> Vec<f64> {
        self.log_probs(state).into_iter().map(f64::exp).collect()
    }

    /// Draws an action by inverse-CDF sampling; returns it with its
    /// log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> (usize, f64) {
        let lp = self.log_probs(state);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (a, l) in lp.iter().enumerate() {
            if !l.is_finite() {
                continue;
            }
            last = a;
            acc += l.exp();
            if u < acc {
                return (a, *l);
            }
        }
        (last, lp[last])
    }
}

impl PolicyAdapter for SoftmaxToyPolicy {
    fn num_states(&self) -> usize {
        self.num_states
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn log_probs(&self, state: usize) -> Vec<f64> {
        self.log_softmax(&self.theta, state)
    }

    fn ref_log_probs(&self, state: usize) -> Vec<f64> {
        self.log_softmax(&self.reference, state)
    }
}

impl Differentiable for SoftmaxToyPolicy {
    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn set_params(&mut self, params: Vec<f64>) {
        assert_eq!(params.len(), self.theta.len());
        self.theta = params;
    }

    fn grad_log_prob(&self, state: usize, action: usize) -> Vec<(usize, f64)> {
        let lp = self.log_probs(state);
        let base = state * self.num_actions;
        (0..self.num_actions)
            .filter(|&b| lp[b].is_finite())
            .map(|b| {
                let ind = if b == action { 1.0 } else { 0.0 };
                (base + b, (ind - lp[b].exp()) / self.temperature)
            })
            .collect()
    }

    fn grad_kl(&self, state: usize) -> Vec<(usize, f64)> {
        let (lp, lr) = (self.log_probs(state), self.ref_log_probs(state));
        let kl: f64 = lp.iter().zip(&lr).filter(|(l, _)| l.is_finite()).map(|(&l, &r)| l.exp() * (l - r)).sum();
        let base = state * self.num_actions;
        (0..self.num_actions)
            .filter(|&c| lp[c].is_finite())
            .map(|c| (base + c, lp[c].exp() * (lp[c] - lr[c] - kl) / self.temperature))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Policy whose log-probabilities are fixed per call.
    struct Fixed {
        current: Vec<f64>,
        reference: Vec<f64>,
    }

    impl PolicyAdapter for Fixed {
        fn num_states(&self) -> usize {
            1
        }
        fn num_actions(&self) -> usize {
            self.current.len()
        }
        fn log_probs(&self, _: usize) -> Vec<f64> {
            self.current.clone()
        }
        fn ref_log_probs(&self, _: usize) -> Vec<f64> {
            self.reference.clone()
        }
    }

    fn no_kl() -> OptimizerConfig {
        OptimizerConfig { beta: 0.0, ..Default::default() }
    }

    #[test]
    fn ratio_examples() {
        let p = Fixed { current: vec![-1.0, -3.0], reference: vec![-1.0, -3.0] };
        let r = importance_ratio(&p, &PolicySample::new(0, 0, 1.0, -2.0), 0).unwrap();
        assert!((r - std::f64::consts::E).abs() < 1e-12);
        let r = importance_ratio(&p, &PolicySample::new(0, 1, 1.0, -1.0), 0).unwrap();
        assert!((r - (-2.0f64).exp()).abs() < 1e-12);
        let r = importance_ratio(&p, &PolicySample::new(0, 0, 1.0, -1.0), 0).unwrap();
        assert_eq!(r, 1.0);
        let stale = PolicySample { old_log_prob: None, ..PolicySample::new(0, 0, 1.0, 0.0) };
        assert_eq!(importance_ratio(&p, &stale, 3), Err(PolicyError::StaleRollout(3)));
    }

    #[test]
    fn objective_examples() {
        let lp = 1.5f64.ln();
        let p = Fixed { current: vec![lp, 0.5f64.ln()], reference: vec![0.0, 0.0] };
        let j = clipped_objective(&p, &[PolicySample::new(0, 0, 1.0, 0.0)], &no_kl()).unwrap();
        assert!((j - 1.2).abs() < 1e-12);
        let j = clipped_objective(&p, &[PolicySample::new(0, 1, -1.0, 0.0)], &no_kl()).unwrap();
        assert!((j + 0.8).abs() < 1e-12);
        let batch = [PolicySample::new(0, 0, 0.3, lp), PolicySample::new(0, 1, -0.7, 0.5f64.ln())];
        let j = clipped_objective(&p, &batch, &no_kl()).unwrap();
        assert!((j - (-0.2)).abs() < 1e-12);
        assert_eq!(clipped_objective(&p, &[], &no_kl()), Err(PolicyError::EmptyBatch));
    }

    #[test]
    fn kl_examples() {
        let p = Fixed { current: vec![0.5f64.ln(); 2], reference: vec![0.9f64.ln(), 0.1f64.ln()] };
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl_penalty(&p, &[0]) - expected).abs() < 1e-12);
        assert!((kl_penalty(&p, &[0]) - 0.5108).abs() < 1e-4);
        let same = SoftmaxToyPolicy::new(2, 3, 1.0);
        assert_eq!(kl_penalty(&same, &[0, 1]), 0.0);
    }

    #[test]
    fn masking_only_matters_with_tool_outputs() {
        let p = SoftmaxToyPolicy::new(1, 2, 1.0).with_params(vec![0.3, -0.2]);
        let lp = p.log_probs(0);
        let plain = [PolicySample::new(0, 0, 1.0, lp[0] - 0.1), PolicySample::new(0, 1, -0.5, lp[1])];
        let off = OptimizerConfig { mask_tool_outputs: false, ..Default::default() };
        assert_eq!(clipped_objective(&p, &plain, &off), clipped_objective(&p, &plain, &OptimizerConfig::default()));
        let mut with_tool = plain.to_vec();
        with_tool.push(PolicySample { tool_output: true, ..PolicySample::new(0, 1, 5.0, lp[1]) });
        assert_ne!(
            clipped_objective(&p, &with_tool, &off),
            clipped_objective(&p, &with_tool, &OptimizerConfig::default())
        );
    }

    #[test]
    fn zero_advantage_keeps_parameters() {
        let mut p = SoftmaxToyPolicy::new(2, 3, 1.0).with_params(vec![0.1, 0.2, 0.3, -0.1, 0.0, 0.5]);
        let before = p.params().to_vec();
        let lp = p.log_probs(0);
        let batch = [PolicySample::new(0, 1, 0.0, lp[1])];
        update(&mut p, &batch, &no_kl(), Execution::Sequential).unwrap();
        assert_eq!(p.params(), &before[..]);
    }

    #[test]
    fn positive_advantage_raises_logit() {
        let mut p = SoftmaxToyPolicy::new(1, 3, 1.0);
        let lp = p.log_probs(0);
        update(&mut p, &[PolicySample::new(0, 2, 1.0, lp[2])], &no_kl(), Execution::Sequential).unwrap();
        assert!(p.params()[2] > 0.0);
        assert!(p.log_prob(0, 2) > lp[2]);
    }

    #[test]
    fn strong_kl_restores_entropy() {
        let mut p = SoftmaxToyPolicy::new(1, 4, 1.0).with_params(vec![3.0, 0.0, -1.0, 0.5]);
        let cfg = OptimizerConfig { beta: 5.0, learning_rate: 0.1, ..Default::default() };
        let mut last = p.entropy(0);
        for _ in 0..20 {
            let lp = p.log_probs(0);
            update(&mut p, &[PolicySample::new(0, 0, 0.0, lp[0])], &cfg, Execution::Sequential).unwrap();
            let h = p.entropy(0);
            assert!(h > last);
            last = h;
        }
    }

    #[test]
    fn masked_actions_are_never_sampled() {
        let mut p = SoftmaxToyPolicy::new(1, 4, 1.0);
        p.restrict(0, &[1, 3]);
        let probs = p.probs(0);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!((probs[0], probs[2]), (0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (a, l) = p.sample(0, &mut rng);
            assert!(a == 1 || a == 3);
            assert!((l - 0.5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn nonfinite_gradient_aborts() {
        let mut p = SoftmaxToyPolicy::new(1, 2, 1.0);
        let before = p.clone();
        let batch = [PolicySample::new(0, 0, f64::INFINITY, p.log_prob(0, 0))];
        assert!(matches!(
            update(&mut p, &batch, &no_kl(), Execution::Sequential),
            Err(PolicyError::NonFiniteGradient(_))
        ));
        assert_eq!(p, before);
    }

    fn finite_difference(p: &SoftmaxToyPolicy, batch: &[PolicySample], cfg: &OptimizerConfig, h: f64) -> Vec<f64> {
        (0..p.params().len())
            .map(|k| {
                let mut plus = p.params().to_vec();
                let mut minus = plus.clone();
                plus[k] += h;
                minus[k] -= h;
                let jp = clipped_objective(&p.clone().with_params(plus), batch, cfg).unwrap();
                let jm = clipped_objective(&p.clone().with_params(minus), batch, cfg).unwrap();
                (jp - jm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = SoftmaxToyPolicy::new(2, 3, 0.7)
            .with_params((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .with_reference((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let batch = [
            PolicySample::new(0, 1, 0.8, p.log_prob(0, 1) - 0.05),
            PolicySample::new(1, 2, -0.4, p.log_prob(1, 2) + 0.1),
            PolicySample::new(1, 0, 1.3, p.log_prob(1, 0) - 0.5),
        ];
        let cfg = OptimizerConfig { beta: 0.3, ..Default::default() };
        let g = objective_gradient(&p, &batch, &cfg, Execution::Sequential).unwrap();
        let fd = finite_difference(&p, &batch, &cfg, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn clipping_bound(rho in 0.0f64..10.0, a in -5.0f64..5.0, eps in 0.01f64..0.9) {
            let term = clipped_term(rho, a, eps);
            prop_assert!(term <= a.abs() * (1.0 + eps) + 1e-12);
            if a >= 0.0 {
                prop_assert!(term.abs() <= a * (1.0 + eps) + 1e-12);
            }
        }

        #[test]
        fn huge_eps_is_unclipped(rho in 0.01f64..5.0, a in -3.0f64..3.0) {
            prop_assert!((clipped_term(rho, a, 1e12) - rho * a).abs() < 1e-9);
        }

        #[test]
        fn kl_nonnegative(t in prop::collection::vec(-3.0f64..3.0, 4), r in prop::collection::vec(-3.0f64..3.0, 4)) {
            let p = SoftmaxToyPolicy::new(1, 4, 1.0).with_params(t).with_reference(r);
            prop_assert!(p.kl(0) >= 0.0);
            prop_assert!((p.probs(0).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
