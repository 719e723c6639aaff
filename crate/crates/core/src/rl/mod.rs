//! Lagrangian actor-critic over the policy slot space.
//!
//! The actor is a masked softmax policy. A reward critic and a four-headed
//! safety critic score every slot at once. Multipliers `λ_k ≥ 0` trade
//! return against expected constraint cost; a deviation term `η·1[a ≠ ã]`
//! keeps the policy near the planner's proposal when that proposal is safe.

pub mod nn;
pub mod safety_value;
pub mod train;

use crate::replay::{self, RlTransition};
use crate::safety::ActionScorer;
use crate::slots::ACTION_SLOTS;
use crate::world::{Observation, OBSERVATION_DIM};
use nn::{Grad, Mlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use thiserror::Error;

pub const COST_HEADS: usize = 4;

/// Network input: the observation plus one bit saying whether the shield
/// rejected the planner's proposal in this state. The learner only ever acts
/// when that bit is set, and the observation alone cannot tell those states
/// apart from the (far more common) pass-through ones.
pub const INPUT_DIM: usize = OBSERVATION_DIM + 1;

pub fn net_input(obs: &Observation, rejected: bool) -> Vec<f64> {
    features_input(&obs.features(), rejected)
}

pub fn features_input(features: &[f64; OBSERVATION_DIM], rejected: bool) -> Vec<f64> {
    let mut x = features.to_vec();
    x.push(f64::from(u8::from(rejected)));
    x
}

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid rl config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in {0} update; step rejected")]
    NonFinite(&'static str),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint layout does not match: {0}")]
    Layout(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub gamma: f64,
    /// Weight of the deviation-from-proposal penalty.
    pub eta: f64,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub lambda_lr: f64,
    pub pg_estimator: PgEstimator,
    /// Fit the actor only on transitions where the learner chose the action
    /// (the proposal was rejected); elsewhere it never acts.
    pub actor_on_rejected: bool,
    /// Per-constraint cost budgets `b_k`.
    pub cost_budget: [f64; COST_HEADS],
    pub batch_size: usize,
    /// Joint steps between updates.
    pub update_period: u32,
    /// Transitions collected before the learner takes over overrides.
    pub warmup: usize,
    pub hidden: usize,
    pub grad_clip: f64,
    pub rl_capacity: usize,
    pub planner_capacity: usize,
    /// Consecutive rejected updates before training stops.
    pub max_rejections: u32,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            eta: 0.1,
            policy_lr: 1e-3,
            critic_lr: 1e-3,
            lambda_lr: 1e-2,
            pg_estimator: PgEstimator::Expected,
            actor_on_rejected: true,
            cost_budget: [0.01; COST_HEADS],
            batch_size: 64,
            update_period: 1,
            warmup: 1000,
            hidden: 64,
            grad_clip: 10.0,
            rl_capacity: 100_000,
            planner_capacity: 10_000,
            max_rejections: 10,
            seed: 0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be finite and nonnegative");
        }
        for lr in [self.policy_lr, self.critic_lr, self.lambda_lr] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad("learning rates must be finite and nonnegative");
            }
        }
        if self.batch_size == 0 || self.update_period == 0 || self.hidden == 0 {
            return bad("batch_size, update_period and hidden must be positive");
        }
        if self.rl_capacity < self.batch_size || self.planner_capacity == 0 {
            return bad("buffer capacities too small");
        }
        if self.cost_budget.iter().any(|b| !b.is_finite()) {
            return bad("cost budgets must be finite");
        }
        Ok(())
    }
}

/// Dual variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState {
    pub lambda: [f64; COST_HEADS],
    pub step_size: f64,
}

impl LagrangeState {
    pub fn new(step_size: f64) -> Self {
        Self {
            lambda: [0.0; COST_HEADS],
            step_size,
        }
    }

    /// Projected dual ascent: `λ_k ← max(0, λ_k + α (mean_cost_k − b_k))`.
    pub fn update(&mut self, mean_cost: &[f64; COST_HEADS], budget: &[f64; COST_HEADS]) {
        for k in 0..COST_HEADS {
            let next = self.lambda[k] + self.step_size * (mean_cost[k] - budget[k]);
            self.lambda[k] = if next.is_finite() { next.max(0.0) } else { self.lambda[k] };
        }
    }
}

pub fn lagrange_update(state: &LagrangeState, batch: &[&RlTransition], budget: &[f64; COST_HEADS]) -> LagrangeState {
    let mut next = state.clone();
    next.update(&mean_costs(batch), budget);
    next
}

pub fn mean_costs(batch: &[&RlTransition]) -> [f64; COST_HEADS] {
    let mut m = [0.0; COST_HEADS];
    if batch.is_empty() {
        return m;
    }
    for t in batch {
        for k in 0..COST_HEADS {
            m[k] += t.costs[k];
        }
    }
    m.map(|v| v / batch.len() as f64)
}

/// Softmax restricted to the set bits of `mask`; masked entries get 0.
pub fn masked_softmax(logits: &[f64], mask: u16) -> Vec<f64> {
    let allowed = |i: usize| mask & (1 << i) != 0;
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i))
        .map(|(_, &l)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| if allowed(i) { (l - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = p.iter().sum();
    if z > 0.0 && z.is_finite() {
        p.iter_mut().for_each(|v| *v /= z);
    }
    p
}

pub fn full_mask(n: usize) -> u16 {
    if n >= 16 {
        u16::MAX
    } else {
        (1u16 << n) - 1
    }
}

/// How the actor's gradient is estimated from a stored transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PgEstimator {
    /// `∇ log π(a|s) · A(s, a)` for the stored action only.
    Sampled,
    /// The same estimator in expectation over `a ~ π(·|s)`, i.e.
    /// `Σ_a ∇π(a|s) · A(s, a)`; every slot gets signal, and the stored
    /// (planner-chosen) action no longer biases it.
    Expected,
}

/// Advantage weights of one state, held constant when differentiating.
#[derive(Debug, Clone, PartialEq)]
pub enum PgWeights {
    /// Contributes `w · log π(a|x)`.
    Taken { a: usize, weight: f64 },
    /// Contributes `Σ_a π(a|x) · w_a`.
    AllActions(Vec<f64>),
}

/// One term of the policy surrogate `J = mean_i J_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PgSample {
    pub x: Vec<f64>,
    pub mask: u16,
    pub weights: PgWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: Mlp,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, actions: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new(&[inputs, hidden, hidden, actions], true, rng),
        }
    }

    pub fn actions(&self) -> usize {
        self.net.output_dim()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x)
    }

    pub fn probs(&self, x: &[f64], mask: u16) -> Vec<f64> {
        masked_softmax(&self.logits(x), mask)
    }

    /// Sample (or with `greedy`, take the argmax, ties to the lower index)
    /// and return the slot with its log-probability.
    pub fn act<R: Rng + ?Sized>(&self, x: &[f64], mask: u16, rng: &mut R, greedy: bool) -> (usize, f64) {
        let p = self.probs(x, mask);
        let a = if greedy {
            let mut best = None;
            for (i, &v) in p.iter().enumerate() {
                if mask & (1 << i) != 0 && best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            best.map_or(0, |(i, _)| i)
        } else {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &v) in p.iter().enumerate() {
                if v <= 0.0 {
                    continue;
                }
                acc += v;
                pick = Some(i);
                if u < acc {
                    break;
                }
            }
            pick.unwrap_or(0)
        };
        (a, p[a].ln())
    }

    pub fn surrogate(&self, samples: &[PgSample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        samples
            .iter()
            .map(|s| {
                let p = self.probs(&s.x, s.mask);
                match &s.weights {
                    PgWeights::Taken { a, weight } => weight * p[*a].ln(),
                    PgWeights::AllActions(w) => p.iter().zip(w).map(|(p, w)| p * w).sum(),
                }
            })
            .sum::<f64>()
            / samples.len() as f64
    }

    /// Analytic `∇θ J`.
    pub fn surrogate_grad(&self, samples: &[PgSample]) -> Grad {
        let mut g = self.net.zero_grad();
        let n = samples.len().max(1) as f64;
        for s in samples {
            let trace = self.net.forward_trace(&s.x);
            let p = masked_softmax(trace.output(), s.mask);
            let allowed = |j: usize| s.mask & (1 << j) != 0;
            let dl: Vec<f64> = match &s.weights {
                // d log π(a)/d logit_j = 1[j = a] − π_j
                PgWeights::Taken { a, weight } => (0..p.len())
                    .map(|j| {
                        if allowed(j) {
                            weight * (f64::from(u8::from(j == *a)) - p[j]) / n
                        } else {
                            0.0
                        }
                    })
                    .collect(),
                // d Σ_a π_a w_a / d logit_j = π_j (w_j − Σ_a π_a w_a)
                PgWeights::AllActions(w) => {
                    let mean: f64 = (0..p.len()).filter(|&a| allowed(a)).map(|a| p[a] * w[a]).sum();
                    (0..p.len())
                        .map(|j| if allowed(j) { p[j] * (w[j] - mean) / n } else { 0.0 })
                        .collect()
                }
            };
            self.net.backward(&trace, &dl, &mut g);
        }
        g
    }
}

/// State-action values for every slot, optionally several cost heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: Mlp,
    pub heads: usize,
    pub actions: usize,
}

/// One regression target for [`Critic::regress`].
#[derive(Debug, Clone, PartialEq)]
pub struct TdSample {
    pub x: Vec<f64>,
    pub a: usize,
    pub targets: Vec<f64>,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, actions: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new(&[inputs, hidden, hidden, actions * heads], true, rng),
            heads,
            actions,
        }
    }

    /// Output laid out head-major: `values[h * actions + a]`.
    pub fn values(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x)
    }

    /// `½ mean_i Σ_h (Q_h(x_i, a_i) − y_ih)²`.
    pub fn loss(&self, samples: &[TdSample]) -> f64 {
        let n = samples.len().max(1) as f64;
        samples
            .iter()
            .map(|s| {
                let v = self.values(&s.x);
                (0..self.heads)
                    .map(|h| (v[h * self.actions + s.a] - s.targets[h]).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / (2.0 * n)
    }

    /// One SGD step on [`Critic::loss`] with targets held fixed.
    pub fn regress(&mut self, samples: &[TdSample], lr: f64, clip: f64) -> Result<(), RlError> {
        let mut g = self.net.zero_grad();
        let n = samples.len().max(1) as f64;
        for s in samples {
            let trace = self.net.forward_trace(&s.x);
            let out = trace.output();
            let mut d = vec![0.0; out.len()];
            for h in 0..self.heads {
                let i = h * self.actions + s.a;
                d[i] = (out[i] - s.targets[h]) / n;
            }
            self.net.backward(&trace, &d, &mut g);
        }
        if !g.is_finite() {
            return Err(RlError::NonFinite("critic"));
        }
        g.clip(clip);
        self.net.apply(&g, -lr);
        Ok(())
    }
}

/// Actor, both critics and the multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub config: RlConfig,
    pub policy: Policy,
    pub reward_critic: Critic,
    pub cost_critic: Critic,
    pub lagrange: LagrangeState,
}

/// Scalar diagnostics from one learner update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub cost_loss: f64,
    pub mean_advantage: f64,
}

impl Agent {
    pub fn new(config: RlConfig) -> Result<Self, RlError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.hidden;
        Ok(Self {
            policy: Policy::new(INPUT_DIM, h, ACTION_SLOTS, &mut rng),
            reward_critic: Critic::new(INPUT_DIM, h, ACTION_SLOTS, 1, &mut rng),
            cost_critic: Critic::new(INPUT_DIM, h, ACTION_SLOTS, COST_HEADS, &mut rng),
            lagrange: LagrangeState::new(config.lambda_lr),
            config,
        })
    }

    /// `Q(s, ·) − λᵀ Q_c(s, ·)`.
    pub fn penalized_q(&self, x: &[f64]) -> [f64; ACTION_SLOTS] {
        let q = self.reward_critic.values(x);
        let qc = self.cost_critic.values(x);
        let mut out = [0.0; ACTION_SLOTS];
        for (a, o) in out.iter_mut().enumerate() {
            *o = q[a];
            for k in 0..COST_HEADS {
                *o -= self.lagrange.lambda[k] * qc[k * ACTION_SLOTS + a];
            }
        }
        out
    }

    /// Expected-SARSA TD regression of both critics.
    pub fn critic_update(&mut self, batch: &[&RlTransition]) -> Result<(f64, f64), RlError> {
        let g = self.config.gamma;
        let mut rs = Vec::with_capacity(batch.len());
        let mut cs = Vec::with_capacity(batch.len());
        for t in batch {
            let x = net_input(&t.s, t.rejected);
            let (vr, vc) = if t.done || g == 0.0 {
                (0.0, [0.0; COST_HEADS])
            } else {
                let xn = net_input(&t.s_next, t.rejected_next);
                let p = self.policy.probs(&xn, t.mask_next);
                let q = self.reward_critic.values(&xn);
                let qc = self.cost_critic.values(&xn);
                let vr: f64 = p.iter().zip(&q).map(|(p, q)| p * q).sum();
                let mut vc = [0.0; COST_HEADS];
                for (k, v) in vc.iter_mut().enumerate() {
                    *v = (0..ACTION_SLOTS).map(|a| p[a] * qc[k * ACTION_SLOTS + a]).sum();
                }
                (vr, vc)
            };
            rs.push(TdSample {
                x: x.clone(),
                a: t.a,
                targets: vec![t.r + g * vr],
            });
            cs.push(TdSample {
                x,
                a: t.a,
                targets: (0..COST_HEADS).map(|k| t.costs[k] + g * vc[k]).collect(),
            });
        }
        let lr = self.config.critic_lr;
        let clip = self.config.grad_clip;
        let before = (self.reward_critic.loss(&rs), self.cost_critic.loss(&cs));
        self.reward_critic.regress(&rs, lr, clip)?;
        self.cost_critic.regress(&cs, lr, clip)?;
        Ok(before)
    }

    /// Advantage-weighted samples for the policy surrogate.
    pub fn pg_samples(&self, batch: &[&RlTransition]) -> Vec<PgSample> {
        batch
            .iter()
            .map(|t| {
                let x = net_input(&t.s, t.rejected);
                let p = self.policy.probs(&x, t.mask);
                let q = self.penalized_q(&x);
                let u = |a: usize| q[a] - self.config.eta * f64::from(u8::from(t.proposed.is_some_and(|pa| pa != a)));
                let allowed = |a: usize| t.mask & (1 << a) != 0;
                let baseline: f64 = (0..ACTION_SLOTS).filter(|&a| allowed(a)).map(|a| p[a] * u(a)).sum();
                let weights = match self.config.pg_estimator {
                    PgEstimator::Sampled => PgWeights::Taken {
                        a: t.a,
                        weight: u(t.a) - baseline,
                    },
                    PgEstimator::Expected => PgWeights::AllActions(
                        (0..ACTION_SLOTS)
                            .map(|a| if allowed(a) { u(a) - baseline } else { 0.0 })
                            .collect(),
                    ),
                };
                PgSample { x, mask: t.mask, weights }
            })
            .collect()
    }

    /// Gradient ascent on the surrogate; returns the mean advantage of the
    /// stored actions.
    pub fn policy_gradient_step(&mut self, batch: &[&RlTransition]) -> Result<f64, RlError> {
        let kept: Vec<&RlTransition>;
        let batch = if self.config.actor_on_rejected {
            kept = batch.iter().copied().filter(|t| t.rejected).collect();
            if kept.is_empty() {
                return Ok(0.0);
            }
            &kept[..]
        } else {
            batch
        };
        let samples = self.pg_samples(batch);
        let mut g = self.policy.surrogate_grad(&samples);
        if !g.is_finite() {
            return Err(RlError::NonFinite("policy"));
        }
        g.clip(self.config.grad_clip);
        self.policy.net.apply(&g, self.config.policy_lr);
        let taken: f64 = batch
            .iter()
            .zip(&samples)
            .map(|(t, s)| match &s.weights {
                PgWeights::Taken { weight, .. } => *weight,
                PgWeights::AllActions(w) => w[t.a],
            })
            .sum();
        Ok(taken / samples.len().max(1) as f64)
    }

    /// Batch mean of the safety critic's `Q_c,k(s, a)`, an estimate of the
    /// discounted cost-to-go the multipliers are meant to bound.
    pub fn discounted_costs(&self, batch: &[&RlTransition]) -> [f64; COST_HEADS] {
        let mut m = [0.0; COST_HEADS];
        if batch.is_empty() {
            return m;
        }
        for t in batch {
            let qc = self.cost_critic.values(&net_input(&t.s, t.rejected));
            for (k, v) in m.iter_mut().enumerate() {
                *v += qc[k * ACTION_SLOTS + t.a];
            }
        }
        m.map(|v| v / batch.len() as f64)
    }

    pub fn lagrange_step(&mut self, batch: &[&RlTransition]) {
        let m = self.discounted_costs(batch);
        self.lagrange.update(&m, &self.config.cost_budget);
    }

    /// Critics, then actor, then multipliers, all on the same batch.
    pub fn update(&mut self, batch: &[&RlTransition]) -> Result<UpdateStats, RlError> {
        let snapshot = (self.reward_critic.clone(), self.cost_critic.clone());
        let (critic_loss, cost_loss) = match self.critic_update(batch) {
            Ok(l) => l,
            Err(e) => {
                (self.reward_critic, self.cost_critic) = snapshot;
                return Err(e);
            }
        };
        let mean_advantage = self.policy_gradient_step(batch)?;
        self.lagrange_step(batch);
        Ok(UpdateStats {
            critic_loss,
            cost_loss,
            mean_advantage,
        })
    }

    /// Binary checkpoint:
    ///
    /// ```text
    /// magic   8 bytes "SKYCKPT\0"
    /// version u32 LE (1)
    /// 3 × network (policy, reward critic, cost critic):
    ///   layer count L u32, then L+1 sizes u32
    ///   per layer: weights (out × in, row-major) then biases, f64 LE
    /// λ       4 × f64 LE
    /// ```
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), RlError> {
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&CKPT_VERSION.to_le_bytes())?;
        for net in [&self.policy.net, &self.reward_critic.net, &self.cost_critic.net] {
            let sizes = net.sizes();
            w.write_all(&((sizes.len() - 1) as u32).to_le_bytes())?;
            for s in sizes {
                w.write_all(&(s as u32).to_le_bytes())?;
            }
            for p in net.params() {
                w.write_all(&p.to_le_bytes())?;
            }
        }
        for l in self.lagrange.lambda {
            w.write_all(&l.to_le_bytes())?;
        }
        Ok(())
    }

    /// Restore parameters into an agent built from `config`; layer sizes
    /// must match.
    pub fn read_checkpoint<R: Read>(config: RlConfig, mut r: R) -> Result<Self, RlError> {
        let mut agent = Agent::new(config)?;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(RlError::BadMagic);
        }
        let v = replay::read_u32(&mut r)?;
        if v != CKPT_VERSION {
            return Err(RlError::UnsupportedVersion(v));
        }
        for net in [
            &mut agent.policy.net,
            &mut agent.reward_critic.net,
            &mut agent.cost_critic.net,
        ] {
            let layers = replay::read_u32(&mut r)? as usize;
            let mut sizes = Vec::with_capacity(layers + 1);
            for _ in 0..=layers {
                sizes.push(replay::read_u32(&mut r)? as usize);
            }
            if sizes != net.sizes() {
                return Err(RlError::Layout(format!("expected {:?}, found {:?}", net.sizes(), sizes)));
            }
            let mut flat = vec![0.0; net.num_params()];
            for p in &mut flat {
                *p = replay::read_f64(&mut r)?;
            }
            net.set_params(&flat);
        }
        for l in &mut agent.lagrange.lambda {
            *l = replay::read_f64(&mut r)?;
        }
        Ok(agent)
    }
}

const CKPT_MAGIC: &[u8; 8] = b"SKYCKPT\0";
const CKPT_VERSION: u32 = 1;

impl ActionScorer for Agent {
    /// The shield only asks after rejecting a proposal.
    fn scores(&self, features: &[f64; OBSERVATION_DIM]) -> [f64; ACTION_SLOTS] {
        self.penalized_q(&features_input(features, true))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Observation;

    fn obs(v: f64) -> Observation {
        Observation::from_features(&[v; OBSERVATION_DIM])
    }

    fn transition(r: f64, costs: [f64; 4], done: bool) -> RlTransition {
        RlTransition {
            s: obs(0.1),
            a: 2,
            proposed: Some(2),
            mask: full_mask(ACTION_SLOTS),
            r,
            s_next: obs(0.2),
            mask_next: full_mask(ACTION_SLOTS),
            costs,
            done,
            rejected: false,
            rejected_next: false,
        }
    }

    #[test]
    fn lagrange_arithmetic() {
        let mut l = LagrangeState::new(0.01);
        l.update(&[0.0; 4], &[0.0; 4]);
        assert_eq!(l.lambda, [0.0; 4]);
        l.update(&[0.5, 0.0, 0.0, 0.0], &[0.1; 4]);
        assert!((l.lambda[0] - 0.004).abs() < 1e-15);
        assert_eq!(l.lambda[1], 0.0);
    }

    #[test]
    fn greedy_and_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Policy::new(2, 4, 5, &mut rng);
        let last = p.net.layers.len() - 1;
        p.net.layers[last].b = vec![10.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(p.act(&[0.0, 0.0], full_mask(5), &mut rng, true).0, 0);
        let a = p.probs(&[0.3, 0.1], full_mask(5));
        p.net.layers[last].b.iter_mut().for_each(|b| *b += 7.5);
        let b = p.probs(&[0.3, 0.1], full_mask(5));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_probabilities() {
        let p = masked_softmax(&[1.0, 2.0, 3.0], 0b101);
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_data_is_a_critic_fixed_point() {
        let mut agent = Agent::new(RlConfig::default()).unwrap();
        let before = agent.clone();
        let t = transition(0.0, [0.0; 4], false);
        agent.critic_update(&[&t]).unwrap();
        assert_eq!(agent.reward_critic, before.reward_critic);
        assert_eq!(agent.cost_critic, before.cost_critic);
    }

    #[test]
    fn positive_advantage_raises_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = Policy::new(3, 8, 4, &mut rng);
        let x = vec![0.2, -0.1, 0.4];
        let before = p.logits(&x);
        let g = p.surrogate_grad(&[PgSample {
            x: x.clone(),
            mask: full_mask(4),
            weights: PgWeights::Taken { a: 1, weight: 1.0 },
        }]);
        p.net.apply(&g, 0.1);
        let after = p.logits(&x);
        assert!(after[1] - before[1] > 0.0);
        assert!(p.probs(&x, full_mask(4))[1] > 0.25);
    }

    #[test]
    fn gamma_zero_regresses_immediate_values() {
        let cfg = RlConfig {
            gamma: 0.0,
            critic_lr: 0.05,
            ..RlConfig::default()
        };
        let mut agent = Agent::new(cfg).unwrap();
        let t = transition(1.5, [0.3, 0.0, 0.0, 0.0], false);
        for _ in 0..3000 {
            agent.critic_update(&[&t]).unwrap();
        }
        let x = net_input(&t.s, t.rejected);
        assert!((agent.reward_critic.values(&x)[2] - 1.5).abs() < 1e-6);
        assert!((agent.cost_critic.values(&x)[2] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut agent = Agent::new(RlConfig::default()).unwrap();
        agent.lagrange.lambda = [0.1, 0.2, 0.3, 0.4];
        let t = transition(1.0, [0.1; 4], false);
        agent.update(&[&t]).unwrap();
        let mut buf = Vec::new();
        agent.write_checkpoint(&mut buf).unwrap();
        let back = Agent::read_checkpoint(RlConfig::default(), buf.as_slice()).unwrap();
        assert_eq!(back.policy, agent.policy);
        assert_eq!(back.cost_critic, agent.cost_critic);
        assert_eq!(back.lagrange.lambda, agent.lagrange.lambda);
        assert!(matches!(
            Agent::read_checkpoint(RlConfig::default(), &b"NOTACKPT"[..]),
            Err(RlError::BadMagic)
        ));
    }
}
