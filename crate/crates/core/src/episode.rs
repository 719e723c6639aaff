//! One episode of the propose → filter → execute loop.

use crate::planner::{InjectedFault, Planner, PlannerProposal, ProposalIssue};
use crate::replay::{PlannerRecord, ReplayBuffer};
use crate::safety::{Fallback, FaultClass, HallucinationCounts, OverrideOutcome, Shield};
use crate::world::{DroneId, DroneOutcome, World, WorldState};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Proposals execute as-is; constraints are evaluated for the audit only.
    PlannerOnly,
    Safeguarded,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::PlannerOnly => "planner_only",
            Mode::Safeguarded => "safeguarded",
        }
    }
}

/// Decides what actually executes for each proposal.
pub trait Controller {
    fn decide(
        &mut self,
        world: &World,
        state: &WorldState,
        drone: DroneId,
        proposal: &PlannerProposal,
        shield: &Shield,
    ) -> OverrideOutcome;

    /// Called after the decided action was applied to the live state.
    fn after_action(&mut self, _world: &World, _state: &WorldState, _drone: DroneId, _outcome: &DroneOutcome) {}

    /// Called once per step after the clock advanced.
    fn end_step(&mut self, _world: &World, _state: &WorldState) {}
}

/// Executes proposals unfiltered (but still evaluated).
pub struct PassThrough;

impl Controller for PassThrough {
    fn decide(
        &mut self,
        world: &World,
        state: &WorldState,
        drone: DroneId,
        proposal: &PlannerProposal,
        shield: &Shield,
    ) -> OverrideOutcome {
        let report = shield.evaluate(world, state, drone, proposal.proposed);
        OverrideOutcome {
            proposed: proposal.proposed,
            executed: proposal.proposed,
            overridden: false,
            fault_class: None,
            fallback_reason: None,
            report,
        }
    }
}

/// Filters every proposal through the shield.
pub struct Shielded<'a> {
    pub fallback: Fallback<'a>,
}

impl Controller for Shielded<'_> {
    fn decide(
        &mut self,
        world: &World,
        state: &WorldState,
        drone: DroneId,
        proposal: &PlannerProposal,
        shield: &Shield,
    ) -> OverrideOutcome {
        shield.filter(world, state, drone, proposal.proposed, self.fallback)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: u32,
    pub drone_id: DroneId,
    pub x: f64,
    pub y: f64,
    pub soc: f64,
    pub mode: String,
    pub action: String,
    pub overridden: bool,
    pub reward: f64,
    pub delivered: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_seed: u64,
    pub layout_hash: String,
    pub steps: u32,
    pub spawned: usize,
    pub served: usize,
    pub success_rate: f64,
    /// kWh drawn per drone over pack capacity, capped at 1.
    pub battery_consumption: Vec<f64>,
    pub distance_total: f64,
    pub reward_total: f64,
    pub overrides: u64,
    /// Infeasible proposals by class (overridden or, in planner-only mode,
    /// executed anyway).
    pub hallucinations: HallucinationCounts,
    /// Injected faults per class, in [`InjectedFault::ALL`] order.
    pub injected: [u64; 4],
    /// Injected faults whose proposal was overridden.
    pub injected_overridden: [u64; 4],
    /// Sum of hinge costs of executed actions.
    pub executed_cost: f64,
    /// Executed actions with some `g_k > 0`.
    pub executed_violations: u64,
    pub depleted_drones: usize,
    pub planner_notes: u64,
    #[serde(skip)]
    pub trajectory: Vec<TrajectoryRecord>,
}

impl EpisodeResult {
    pub fn battery_mean(&self) -> f64 {
        mean(&self.battery_consumption)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOptions {
    /// Planner memory window (records).
    pub memory_window: usize,
    pub record_trajectory: bool,
    /// Panic if an executed action violates a constraint in safeguarded mode.
    pub assert_sound: bool,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            memory_window: 16,
            record_trajectory: false,
            assert_sound: false,
        }
    }
}

/// Episode seeds are decorrelated from the base seed per episode index.
pub fn episode_seed(seed: u64, episode: u64) -> u64 {
    seed ^ episode.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Run one episode from `init_episode(seed)` to termination.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    world: &World,
    seed: u64,
    planner: &mut dyn Planner,
    shield: &Shield,
    controller: &mut dyn Controller,
    memory: &mut ReplayBuffer<PlannerRecord>,
    opts: EpisodeOptions,
) -> EpisodeResult {
    let mut state = world.init_episode(seed);
    let n = state.drones.len();
    planner.reset(seed, n);
    let mut res = EpisodeResult {
        episode_seed: seed,
        layout_hash: state.layout_hash(),
        spawned: state.spawned(),
        ..Default::default()
    };
    while !world.is_terminal(&state) {
        for drone in 0..n {
            if state.drones[drone].is_depleted() {
                if opts.record_trajectory {
                    res.trajectory.push(record(&state, drone, "none", false, 0.0, 0));
                }
                continue;
            }
            let window = memory.recent_window(opts.memory_window);
            let proposal = planner.propose(world, &state, drone, &window);
            if proposal.note.is_some() {
                res.planner_notes += 1;
            }
            let outcome = controller.decide(world, &state, drone, &proposal, shield);
            tally(&mut res, &proposal, &outcome, world, &state, drone, shield, opts);
            memory.push(PlannerRecord {
                t: state.t,
                drone_id: drone,
                s: world.observe(&state, drone).expect("drone exists"),
                proposed: proposal.proposed,
                override_flag: outcome.overridden,
                fault_class: outcome.fault_class,
            });
            let out = world.apply_action(&mut state, drone, outcome.executed);
            controller.after_action(world, &state, drone, &out);
            res.reward_total += out.reward;
            if opts.record_trajectory {
                res.trajectory.push(record(
                    &state,
                    drone,
                    &outcome.executed.canonical(),
                    outcome.overridden,
                    out.reward,
                    out.delivered,
                ));
            }
        }
        world.finish_step(&mut state);
        controller.end_step(world, &state);
    }
    let cap = world.config().battery.capacity_kwh;
    res.steps = state.t;
    res.served = state.served();
    res.success_rate = if res.spawned == 0 {
        1.0
    } else {
        res.served as f64 / res.spawned as f64
    };
    res.battery_consumption = state
        .drones
        .iter()
        .map(|d| (d.energy_used_kwh / cap).min(1.0))
        .collect();
    res.distance_total = state.drones.iter().map(|d| d.cumulative_distance).sum();
    res.depleted_drones = state.drones.iter().filter(|d| d.is_depleted()).count();
    res
}

#[allow(clippy::too_many_arguments)]
fn tally(
    res: &mut EpisodeResult,
    proposal: &PlannerProposal,
    outcome: &OverrideOutcome,
    world: &World,
    state: &WorldState,
    drone: DroneId,
    shield: &Shield,
    opts: EpisodeOptions,
) {
    if let Some(f) = proposal.injected {
        let i = InjectedFault::ALL.iter().position(|&x| x == f).expect("known fault");
        res.injected[i] += 1;
        if outcome.overridden {
            res.injected_overridden[i] += 1;
        }
    }
    if outcome.overridden {
        res.overrides += 1;
    }
    if let Some(mut class) = outcome.fault_class.or_else(|| outcome.report.fault_class()) {
        if class == FaultClass::Invalid && matches!(proposal.note, Some(ProposalIssue::ParseFailure { .. })) {
            class = FaultClass::ParseFailure;
        }
        res.hallucinations.add(class);
    }
    let executed_report = if outcome.executed == outcome.proposed {
        outcome.report.clone()
    } else {
        shield.evaluate(world, state, drone, outcome.executed)
    };
    res.executed_cost += executed_report.cost;
    if !executed_report.violated.is_empty() {
        res.executed_violations += 1;
        if opts.assert_sound && outcome.overridden {
            panic!(
                "executed {} violates {:?} at t={} drone={drone}",
                outcome.executed, executed_report.violated, state.t
            );
        }
    }
}

fn record(state: &WorldState, drone: DroneId, action: &str, overridden: bool, reward: f64, delivered: u32) -> TrajectoryRecord {
    let d = &state.drones[drone];
    TrajectoryRecord {
        t: state.t,
        drone_id: drone,
        x: d.position.x,
        y: d.position.y,
        soc: d.soc.fraction(),
        mode: d.mode.label().to_string(),
        action: action.to_string(),
        overridden,
        reward,
        delivered,
    }
}

/// Convenience: run with the mode's standard controller and a fresh memory.
pub fn run_mode(
    world: &World,
    seed: u64,
    planner: &mut dyn Planner,
    shield: &Shield,
    mode: Mode,
    fallback: Fallback<'_>,
    opts: EpisodeOptions,
) -> EpisodeResult {
    let mut memory = ReplayBuffer::new(10_000).expect("nonzero capacity");
    match mode {
        Mode::PlannerOnly => run_episode(world, seed, planner, shield, &mut PassThrough, &mut memory, opts),
        Mode::Safeguarded => run_episode(
            world,
            seed,
            planner,
            shield,
            &mut Shielded { fallback },
            &mut memory,
            opts,
        ),
    }
}
