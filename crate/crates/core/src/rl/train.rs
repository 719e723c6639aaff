//! The integrated loop: planner proposes, shield checks, the learner picks
//! replacements for rejected proposals, both buffers fill, and the agent
//! updates every few steps.

use super::{net_input, Agent, RlError, COST_HEADS};
use crate::episode::{self, Controller, EpisodeOptions};
use crate::planner::{Planner, PlannerProposal};
use crate::replay::{PlannerRecord, ReplayBuffer, RlTransition};
use crate::safety::{Fallback, FallbackReason, OverrideOutcome, Shield};
use crate::slots::{SlotView, IDLE_SLOT};
use crate::world::{DroneId, DroneOutcome, Observation, World, WorldState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub episode: u64,
    pub reward: f64,
    /// Trailing mean of `reward` over the last (up to) 100 episodes.
    pub reward_ma: f64,
    pub mean_cost_battery: f64,
    pub mean_cost_duplicate: f64,
    pub mean_cost_route: f64,
    pub mean_cost_sector: f64,
    /// Total hinge cost of the learner's own choices this episode.
    pub hinge_cost: f64,
    pub overrides: u64,
    pub battery_mean: f64,
    pub distance_total: f64,
    pub success_rate: f64,
    pub lambda_battery: f64,
    pub lambda_duplicate: f64,
    pub lambda_route: f64,
    pub lambda_sector: f64,
    pub updates: u64,
    pub rejected_updates: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<TrainingRow>,
    /// Training stopped early after repeated non-finite updates.
    pub halted: bool,
    /// Smallest multiplier value observed after any update.
    pub min_lambda_seen: f64,
}

pub const MA_WINDOW: usize = 100;

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Mean of `f` over episodes `[from, to)`.
    pub fn block_mean(&self, from: usize, to: usize, f: impl Fn(&TrainingRow) -> f64) -> f64 {
        let rows = &self.rows[from.min(self.rows.len())..to.min(self.rows.len())];
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().map(f).sum::<f64>() / rows.len() as f64
    }
}

struct Pending {
    drone: DroneId,
    s: Observation,
    a: usize,
    proposed: Option<usize>,
    mask: u16,
    r: f64,
    costs: [f64; COST_HEADS],
    rejected: bool,
}

/// Controller that hands rejected proposals to the learner and records
/// transitions.
struct Learner<'a> {
    agent: &'a mut Agent,
    buffer: &'a mut ReplayBuffer<RlTransition>,
    rng: ChaCha8Rng,
    pending: Vec<Pending>,
    /// Per drone, the last transition waiting for its `rejected_next` flag.
    held: Vec<Option<RlTransition>>,
    steps: u64,
    episode_costs: [f64; COST_HEADS],
    episode_transitions: u64,
    updates: u64,
    rejected: u64,
    consecutive_rejections: u32,
    min_lambda: f64,
}

impl Learner<'_> {
    fn push(&mut self, t: RlTransition) {
        self.buffer.push(t);
        self.episode_transitions += 1;
    }

    fn release(&mut self, drone: DroneId, rejected_next: bool) {
        if let Some(mut t) = self.held.get_mut(drone).and_then(Option::take) {
            t.rejected_next = rejected_next;
            self.push(t);
        }
    }

    fn learn(&mut self) {
        let cfg = &self.agent.config;
        if self.buffer.len() < cfg.batch_size || self.steps % u64::from(cfg.update_period) != 0 {
            return;
        }
        let batch = self
            .buffer
            .sample_minibatch(cfg.batch_size, &mut self.rng)
            .expect("buffer holds a full batch");
        match self.agent.update(&batch) {
            Ok(_) => {
                self.updates += 1;
                self.consecutive_rejections = 0;
            }
            Err(e) => {
                log::warn!("{e}");
                self.rejected += 1;
                self.consecutive_rejections += 1;
            }
        }
        let m = self.agent.lagrange.lambda.iter().copied().fold(f64::INFINITY, f64::min);
        self.min_lambda = self.min_lambda.min(m);
    }
}

impl Controller for Learner<'_> {
    fn decide(
        &mut self,
        world: &World,
        state: &WorldState,
        drone: DroneId,
        proposal: &PlannerProposal,
        shield: &Shield,
    ) -> OverrideOutcome {
        let report = shield.evaluate(world, state, drone, proposal.proposed);
        let view = SlotView::new(world, state, drone);
        let s = world.observe(state, drone).expect("drone exists");
        let mask = view.mask();
        let proposed_slot = view.slot_of(proposal.proposed);
        let rejected = report.fault_class().is_some();
        self.release(drone, rejected);
        let (executed, slot, costs, reason) = match report.fault_class() {
            None => (proposal.proposed, proposed_slot.unwrap_or(IDLE_SLOT), [0.0; COST_HEADS], None),
            Some(class) if self.buffer.len() >= self.agent.config.warmup => {
                let (slot, _) = self.agent.policy.act(&net_input(&s, true), mask, &mut self.rng, false);
                let candidate = view.action(slot).expect("sampled inside the mask");
                let cand_report = shield.evaluate(world, state, drone, candidate);
                let (exec, reason) = if cand_report.is_feasible() {
                    (candidate, FallbackReason::Policy)
                } else {
                    shield.select_fallback(world, state, drone, class, Fallback::Policy(&*self.agent))
                };
                (exec, slot, cand_report.hinges(), Some(reason))
            }
            Some(class) => {
                let (exec, reason) = shield.ladder(world, state, drone, class);
                (exec, view.slot_of(exec).unwrap_or(IDLE_SLOT), [0.0; COST_HEADS], Some(reason))
            }
        };
        for k in 0..COST_HEADS {
            self.episode_costs[k] += costs[k];
        }
        self.pending.push(Pending {
            drone,
            s,
            a: slot,
            proposed: proposed_slot,
            mask,
            r: 0.0,
            costs,
            rejected,
        });
        let overridden = executed != proposal.proposed;
        OverrideOutcome {
            proposed: proposal.proposed,
            executed,
            overridden,
            fault_class: if overridden { report.fault_class() } else { None },
            fallback_reason: if overridden { reason } else { None },
            report,
        }
    }

    fn after_action(&mut self, _world: &World, _state: &WorldState, drone: DroneId, outcome: &DroneOutcome) {
        if let Some(p) = self.pending.iter_mut().rev().find(|p| p.drone == drone) {
            p.r = outcome.reward;
        }
    }

    fn end_step(&mut self, world: &World, state: &WorldState) {
        let terminal = world.is_terminal(state);
        if self.held.len() < state.drones.len() {
            self.held.resize(state.drones.len(), None);
        }
        for p in std::mem::take(&mut self.pending) {
            let done = terminal || state.drones[p.drone].is_depleted();
            let t = RlTransition {
                s: p.s,
                a: p.a,
                proposed: p.proposed,
                mask: p.mask,
                r: p.r,
                s_next: world.observe(state, p.drone).expect("drone exists"),
                mask_next: SlotView::new(world, state, p.drone).mask(),
                costs: p.costs,
                done,
                rejected: p.rejected,
                rejected_next: false,
            };
            if done {
                self.push(t);
            } else {
                self.held[p.drone] = Some(t);
            }
        }
        self.steps += 1;
        self.learn();
    }
}

/// Train `agent` for `episodes` episodes. Episode `i` is initialised from
/// `episode_seed(seed, i)`.
pub fn train(
    world: &World,
    planner: &mut dyn Planner,
    shield: &Shield,
    agent: &mut Agent,
    episodes: u64,
    seed: u64,
    memory_window: usize,
) -> Result<TrainingLog, RlError> {
    let cfg = agent.config.clone();
    let mut buffer = ReplayBuffer::new(cfg.rl_capacity).map_err(|e| RlError::InvalidConfig(e.to_string()))?;
    let mut memory: ReplayBuffer<PlannerRecord> =
        ReplayBuffer::new(cfg.planner_capacity).map_err(|e| RlError::InvalidConfig(e.to_string()))?;
    let mut log = TrainingLog {
        min_lambda_seen: agent.lagrange.lambda.iter().copied().fold(f64::INFINITY, f64::min),
        ..Default::default()
    };
    let mut learner = Learner {
        agent,
        buffer: &mut buffer,
        rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_1EA2),
        pending: Vec::new(),
        held: Vec::new(),
        steps: 0,
        episode_costs: [0.0; COST_HEADS],
        episode_transitions: 0,
        updates: 0,
        rejected: 0,
        consecutive_rejections: 0,
        min_lambda: f64::INFINITY,
    };
    let opts = EpisodeOptions {
        memory_window,
        ..EpisodeOptions::default()
    };
    let mut rewards: Vec<f64> = Vec::new();
    for ep in 0..episodes {
        learner.episode_costs = [0.0; COST_HEADS];
        learner.episode_transitions = 0;
        learner.held.clear();
        let res = episode::run_episode(
            world,
            episode::episode_seed(seed, ep),
            planner,
            shield,
            &mut learner,
            &mut memory,
            opts,
        );
        rewards.push(res.reward_total);
        let window = &rewards[rewards.len().saturating_sub(MA_WINDOW)..];
        let n = learner.episode_transitions.max(1) as f64;
        let c = learner.episode_costs;
        let l = learner.agent.lagrange.lambda;
        log.rows.push(TrainingRow {
            episode: ep,
            reward: res.reward_total,
            reward_ma: window.iter().sum::<f64>() / window.len() as f64,
            mean_cost_battery: c[0] / n,
            mean_cost_duplicate: c[1] / n,
            mean_cost_route: c[2] / n,
            mean_cost_sector: c[3] / n,
            hinge_cost: c.iter().sum(),
            overrides: res.overrides,
            battery_mean: res.battery_mean(),
            distance_total: res.distance_total,
            success_rate: res.success_rate,
            lambda_battery: l[0],
            lambda_duplicate: l[1],
            lambda_route: l[2],
            lambda_sector: l[3],
            updates: learner.updates,
            rejected_updates: learner.rejected,
        });
        if learner.consecutive_rejections >= cfg.max_rejections {
            log::error!("training halted after {} consecutive rejected updates", learner.consecutive_rejections);
            log.halted = true;
            break;
        }
    }
    log.min_lambda_seen = log.min_lambda_seen.min(learner.min_lambda);
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{FaultConfig, MockPlanner};
    use crate::rl::RlConfig;
    use crate::world::WorldConfig;

    #[test]
    fn zero_episodes() {
        let world = World::new(WorldConfig::default()).unwrap();
        let mut agent = Agent::new(RlConfig::default()).unwrap();
        let before = agent.clone();
        let mut planner = MockPlanner::new(FaultConfig::default(), 0.1);
        let log = train(&world, &mut planner, &Shield::default(), &mut agent, 0, 1, 16).unwrap();
        assert!(log.rows.is_empty());
        assert_eq!(agent, before);
    }

    #[test]
    fn short_run_fills_log() {
        let world = World::new(WorldConfig::default()).unwrap();
        let cfg = RlConfig {
            warmup: 100,
            ..RlConfig::default()
        };
        let mut agent = Agent::new(cfg).unwrap();
        let mut planner = MockPlanner::new(FaultConfig::default(), 0.1);
        let log = train(&world, &mut planner, &Shield::default(), &mut agent, 5, 3, 16).unwrap();
        assert_eq!(log.rows.len(), 5);
        assert!(log.rows.last().unwrap().updates > 0);
        assert!(log.min_lambda_seen >= 0.0);
        let mut out = Vec::new();
        log.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("episode,reward,reward_ma"));
    }
}
