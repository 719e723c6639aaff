//! Proposal sources. The mock planner is a deterministic heuristic with
//! seeded fault injection; the LLM-backed planner lives in
//! [`crate::llm_client`].

use crate::action::{Action, Tier};
use crate::geometry::Sector;
use crate::replay::PlannerRecord;
use crate::safety::FaultClass;
use crate::world::{CustomerId, CustomerStatus, DroneId, DroneMode, World, WorldState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerSource {
    Mock,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectedFault {
    DuplicateVisit,
    BatteryIgnore,
    InefficientRoute,
    SectorImbalance,
}

impl InjectedFault {
    pub const ALL: [InjectedFault; 4] = [
        InjectedFault::DuplicateVisit,
        InjectedFault::BatteryIgnore,
        InjectedFault::InefficientRoute,
        InjectedFault::SectorImbalance,
    ];

    pub fn label(self) -> &'static str {
        match self {
            InjectedFault::DuplicateVisit => "duplicate_visit",
            InjectedFault::BatteryIgnore => "battery_ignore",
            InjectedFault::InefficientRoute => "inefficient_route",
            InjectedFault::SectorImbalance => "sector_imbalance",
        }
    }

    /// The override class a perfect detector would assign.
    pub fn expected_class(self) -> FaultClass {
        match self {
            InjectedFault::DuplicateVisit => FaultClass::DuplicateVisit,
            InjectedFault::BatteryIgnore => FaultClass::Battery,
            InjectedFault::InefficientRoute => FaultClass::InefficientRoute,
            InjectedFault::SectorImbalance => FaultClass::SectorImbalance,
        }
    }
}

impl fmt::Display for InjectedFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-proposal corruption probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultConfig {
    pub duplicate_visit: f64,
    pub battery_ignore: f64,
    pub inefficient_route: f64,
    pub sector_imbalance: f64,
}

impl Default for FaultConfig {
    fn default() -> Self {
        Self {
            duplicate_visit: 0.064,
            battery_ignore: 0.024,
            inefficient_route: 0.008,
            sector_imbalance: 0.004,
        }
    }
}

impl FaultConfig {
    pub fn off() -> Self {
        Self {
            duplicate_visit: 0.0,
            battery_ignore: 0.0,
            inefficient_route: 0.0,
            sector_imbalance: 0.0,
        }
    }

    pub fn rates(&self) -> [f64; 4] {
        [
            self.duplicate_visit,
            self.battery_ignore,
            self.inefficient_route,
            self.sector_imbalance,
        ]
    }

    pub fn validate(&self) -> Result<(), String> {
        for (f, r) in InjectedFault::ALL.iter().zip(self.rates()) {
            if !(0.0..=1.0).contains(&r) {
                return Err(format!("fault rate {} = {r} outside [0, 1]", f.label()));
            }
        }
        let total: f64 = self.rates().iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(format!("fault rates sum to {total}, more than 1"));
        }
        Ok(())
    }

    /// Map a uniform draw in `[0, 1)` onto a fault class (or none) by
    /// cumulative rate.
    pub fn classify(&self, u: f64) -> Option<InjectedFault> {
        let mut acc = 0.0;
        for (f, r) in InjectedFault::ALL.iter().zip(self.rates()) {
            acc += r;
            if u < acc {
                return Some(*f);
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerProposal {
    pub drone_id: DroneId,
    pub proposed: Action,
    pub tier: Tier,
    pub source: PlannerSource,
    /// Model output verbatim (LLM source only).
    pub raw_text: Option<String>,
    /// Ground-truth label of a deliberately corrupted proposal.
    pub injected: Option<InjectedFault>,
    /// Set when an LLM proposal could not be obtained or parsed.
    pub note: Option<ProposalIssue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProposalIssue {
    /// The reply had no readable action; the proposal is `Pass`.
    ParseFailure { raw: String },
    /// The endpoint failed; the proposal came from the fallback mock.
    EndpointUnavailable { detail: String },
    /// The memory window was cut to fit the prompt budget.
    MemoryTruncated { dropped: usize },
}

pub trait Planner: Send {
    /// Prepare for a new episode.
    fn reset(&mut self, episode_seed: u64, drone_count: usize);

    fn propose(
        &mut self,
        world: &World,
        state: &WorldState,
        drone: DroneId,
        memory: &[&PlannerRecord],
    ) -> PlannerProposal;
}

/// Fault-free heuristic decisions. The `bool` is true when the battery check
/// replaced the natural choice.
pub fn heuristic_global(world: &World, state: &WorldState, drone: DroneId, reserve: f64) -> (Action, bool) {
    match best_ratio_sector(state, drone) {
        None => (Action::GLOBAL_IDLE, false),
        Some(s) => {
            let ok = world
                .nearest_pending(state, s)
                .is_none_or(|c| world.soc_after_trip_via(state, drone, c.position) >= reserve);
            if ok {
                (Action::go_to(s), false)
            } else {
                (Action::GLOBAL_IDLE, true)
            }
        }
    }
}

pub fn heuristic_local(world: &World, state: &WorldState, drone: DroneId, reserve: f64) -> (Action, bool) {
    let plan = world.plan_carried(state, drone);
    match plan.stops.first() {
        None => (Action::RETURN, false),
        Some(&first) => {
            let pos = state.customers[first.0 as usize].position;
            if world.soc_after_trip_via(state, drone, pos) >= reserve {
                (Action::move_to(first), false)
            } else {
                (Action::RETURN, true)
            }
        }
    }
}

/// Sector maximising pending / (other drones assigned + 1) over sectors with
/// pending customers; ties in sector order.
pub fn best_ratio_sector(state: &WorldState, drone: DroneId) -> Option<Sector> {
    let pending = state.pending_counts();
    let load = state.drones_per_sector(Some(drone));
    let mut best: Option<(f64, Sector)> = None;
    for s in Sector::ALL {
        if pending[s.index()] == 0 {
            continue;
        }
        let ratio = pending[s.index()] as f64 / (load[s.index()] as f64 + 1.0);
        if best.is_none_or(|(b, _)| ratio > b) {
            best = Some((ratio, s));
        }
    }
    best.map(|(_, s)| s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Latch {
    /// Keep heading for a wrong customer until arriving there.
    Target { customer: CustomerId, fault: InjectedFault },
    /// Keep ignoring the reserve until the current load is delivered.
    IgnoreBattery { since: u32 },
}

/// Deterministic heuristic planner with seeded hallucinations.
///
/// Corruptions persist ("latch") the way a confused planner keeps repeating
/// itself, until the drone reaches the wrong target or the memory window
/// shows its last proposal was overridden.
#[derive(Debug, Clone)]
pub struct MockPlanner {
    faults: FaultConfig,
    reserve: f64,
    rngs: Vec<ChaCha8Rng>,
    latches: Vec<Option<Latch>>,
}

impl MockPlanner {
    pub fn new(faults: FaultConfig, reserve: f64) -> Self {
        Self {
            faults,
            reserve,
            rngs: Vec::new(),
            latches: Vec::new(),
        }
    }

    pub fn faults(&self) -> &FaultConfig {
        &self.faults
    }

    fn rng(&mut self, drone: DroneId) -> &mut ChaCha8Rng {
        if drone >= self.rngs.len() {
            // planner used without reset: derive streams from seed 0
            self.reset(0, drone + 1);
        }
        &mut self.rngs[drone]
    }

    fn release_latch(&mut self, state: &WorldState, drone: DroneId, memory: &[&PlannerRecord]) {
        let Some(latch) = self.latches[drone] else { return };
        let d = &state.drones[drone];
        let overridden = memory
            .iter()
            .rev()
            .find(|r| r.drone_id == drone)
            .is_some_and(|r| r.override_flag);
        let done = match latch {
            Latch::Target { customer, .. } => {
                d.position == state.customers[customer.0 as usize].position
            }
            Latch::IgnoreBattery { since } => d.carried.is_empty() && state.t > since,
        };
        if overridden || done || d.mode == DroneMode::Depleted {
            self.latches[drone] = None;
        }
    }

    /// Apply one fault draw to a heuristic proposal.
    pub fn inject_fault(
        &mut self,
        world: &World,
        state: &WorldState,
        drone: DroneId,
        base: (Action, bool),
        memory: &[&PlannerRecord],
    ) -> (Action, Option<InjectedFault>) {
        let faults = self.faults.clone();
        let u: f64 = self.rng(drone).random();
        let Some(fault) = faults.classify(u) else {
            return (base.0, None);
        };
        let (action, substituted) = base;
        let tier = world.tier(state, drone);
        let corrupted = match fault {
            InjectedFault::DuplicateVisit => {
                let target = self.duplicate_target(state, drone, memory);
                target.map(|c| {
                    self.latches[drone] = Some(Latch::Target { customer: c, fault });
                    Action::move_to(c)
                })
            }
            InjectedFault::BatteryIgnore if substituted => {
                self.latches[drone] = Some(Latch::IgnoreBattery { since: state.t });
                Some(match tier {
                    Tier::Global => heuristic_global(world, state, drone, f64::NEG_INFINITY).0,
                    Tier::Local => heuristic_local(world, state, drone, f64::NEG_INFINITY).0,
                })
            }
            InjectedFault::InefficientRoute if tier == Tier::Local => {
                let plan = world.plan_carried(state, drone);
                plan.stops.get(1).map(|&c| {
                    self.latches[drone] = Some(Latch::Target { customer: c, fault });
                    Action::move_to(c)
                })
            }
            InjectedFault::SectorImbalance if tier == Tier::Global => {
                let load = state.drones_per_sector(Some(drone));
                let crowded = Sector::ALL
                    .into_iter()
                    .max_by(|a, b| load[a.index()].cmp(&load[b.index()]).then(b.cmp(a)))
                    .expect("four sectors");
                Some(Action::go_to(crowded))
            }
            _ => None,
        };
        match corrupted {
            Some(a) if a != action => (a, Some(fault)),
            _ => (action, None),
        }
    }

    /// A served customer not recently rejected, else one loaded on another
    /// drone.
    fn duplicate_target(&mut self, state: &WorldState, drone: DroneId, memory: &[&PlannerRecord]) -> Option<CustomerId> {
        let rejected: Vec<CustomerId> = memory
            .iter()
            .filter(|r| r.override_flag)
            .filter_map(|r| r.proposed.target_customer())
            .collect();
        let served: Vec<CustomerId> = state
            .customers
            .iter()
            .filter(|c| c.status == CustomerStatus::Served && !rejected.contains(&c.id))
            .map(|c| c.id)
            .collect();
        let pool = if served.is_empty() {
            state
                .customers
                .iter()
                .filter(|c| matches!(c.status, CustomerStatus::Assigned(o) if o != drone))
                .map(|c| c.id)
                .collect()
        } else {
            served
        };
        if pool.is_empty() {
            return None;
        }
        let i = self.rng(drone).random_range(0..pool.len());
        Some(pool[i])
    }
}

impl Planner for MockPlanner {
    fn reset(&mut self, episode_seed: u64, drone_count: usize) {
        self.rngs = (0..drone_count)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(episode_seed);
                r.set_stream(i as u64 + 1);
                r
            })
            .collect();
        self.latches = vec![None; drone_count];
    }

    fn propose(
        &mut self,
        world: &World,
        state: &WorldState,
        drone: DroneId,
        memory: &[&PlannerRecord],
    ) -> PlannerProposal {
        self.rng(drone);
        self.release_latch(state, drone, memory);
        let tier = world.tier(state, drone);
        let ignore_battery = matches!(self.latches[drone], Some(Latch::IgnoreBattery { .. }));
        let reserve = if ignore_battery { f64::NEG_INFINITY } else { self.reserve };
        let base = match tier {
            Tier::Global => heuristic_global(world, state, drone, reserve),
            Tier::Local => heuristic_local(world, state, drone, reserve),
        };
        let (proposed, injected) = match self.latches[drone] {
            Some(Latch::Target { customer, fault }) => (Action::move_to(customer), Some(fault)),
            Some(Latch::IgnoreBattery { .. }) => {
                // still corrupted whenever the honest check would have refused
                let honest = match tier {
                    Tier::Global => heuristic_global(world, state, drone, self.reserve),
                    Tier::Local => heuristic_local(world, state, drone, self.reserve),
                };
                let label = (honest.1 && honest.0 != base.0).then_some(InjectedFault::BatteryIgnore);
                (base.0, label)
            }
            None => self.inject_fault(world, state, drone, base, memory),
        };
        PlannerProposal {
            drone_id: drone,
            proposed,
            tier,
            source: PlannerSource::Mock,
            raw_text: None,
            injected,
            note: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::Soc;
    use crate::geometry::Point;
    use crate::world::{Customer, WorldConfig};

    fn world() -> World {
        World::new(WorldConfig::default()).unwrap()
    }

    fn with_customers(world: &World, spec: &[(f64, f64, CustomerStatus)]) -> WorldState {
        let mut st = world.init_episode(0);
        st.customers = spec
            .iter()
            .enumerate()
            .map(|(i, &(x, y, status))| Customer {
                id: CustomerId(i as u32),
                position: Point::new(x, y),
                sector: Sector::of(Point::new(x, y), Point::ORIGIN).unwrap(),
                status,
            })
            .collect();
        st
    }

    #[test]
    fn ratio_rule() {
        let w = world();
        let p = CustomerStatus::Pending;
        let st = with_customers(&w, &[(100.0, 0.0, p), (200.0, 0.0, p)]);
        assert_eq!(heuristic_global(&w, &st, 0, 0.1).0, Action::go_to(Sector::East));
        let mut st = with_customers(
            &w,
            &[
                (100.0, 0.0, p),
                (200.0, 0.0, p),
                (300.0, 0.0, p),
                (400.0, 0.0, p),
                (0.0, 100.0, p),
                (0.0, 200.0, p),
                (0.0, 300.0, p),
                (0.0, 400.0, p),
            ],
        );
        st.drones[3].sector = Some(Sector::East);
        assert_eq!(heuristic_global(&w, &st, 0, 0.1).0, Action::go_to(Sector::North));
        let empty = with_customers(&w, &[(1.0, 0.0, CustomerStatus::Served)]);
        assert_eq!(heuristic_global(&w, &empty, 0, 0.1).0, Action::GLOBAL_IDLE);
    }

    #[test]
    fn local_follows_route_then_returns() {
        let w = world();
        let a = CustomerStatus::Assigned(0);
        let mut st = with_customers(&w, &[(100.0, 0.0, a), (200.0, 0.0, a), (300.0, 0.0, a)]);
        st.drones[0].carried = vec![CustomerId(0), CustomerId(1), CustomerId(2)];
        st.drones[0].position = Point::new(1.0, 0.0);
        assert_eq!(heuristic_local(&w, &st, 0, 0.1).0, Action::move_to(CustomerId(0)));
        st.drones[0].carried.clear();
        assert_eq!(heuristic_local(&w, &st, 0, 0.1), (Action::RETURN, false));
    }

    #[test]
    fn reserve_cuts_route_short() {
        // A and B fit in the budget, C does not: proposals visit A, B, then
        // return.
        let w = world();
        let a = CustomerStatus::Assigned(0);
        let mut st = with_customers(&w, &[(200.0, 0.0, a), (400.0, 0.0, a), (480.0, 350.0, a)]);
        st.drones[0].carried = vec![CustomerId(0), CustomerId(1), CustomerId(2)];
        let cap = w.config().battery.capacity_kwh;
        let soc_for = |m: f64| w.leg_kwh(m) / cap;
        // after serving B at (400,0): going via C and home costs ~ 362 + 594
        // metres; make the pack cover A, B and home plus margin only
        let needed_ab = soc_for(400.0 + 400.0) + 0.10;
        st.drones[0].soc = Soc::new(needed_ab + soc_for(150.0));
        let mut planner = MockPlanner::new(FaultConfig::off(), 0.10);
        planner.reset(0, 10);
        let mut seen = Vec::new();
        for _ in 0..40 {
            let p = planner.propose(&w, &st, 0, &[]);
            seen.push(p.proposed);
            if p.proposed == Action::RETURN {
                break;
            }
            w.apply_action(&mut st, 0, p.proposed);
            w.finish_step(&mut st);
        }
        let visited: Vec<_> = seen.iter().filter_map(|a| a.target_customer()).collect();
        assert!(visited.contains(&CustomerId(0)) && visited.contains(&CustomerId(1)));
        assert!(!visited.contains(&CustomerId(2)));
        assert_eq!(*seen.last().unwrap(), Action::RETURN);
        assert_eq!(st.customers[2].status, CustomerStatus::Assigned(0));
    }

    #[test]
    fn zero_rates_are_identity() {
        let w = world();
        let st = w.init_episode(3);
        let mut planner = MockPlanner::new(FaultConfig::off(), 0.10);
        planner.reset(3, 10);
        for d in 0..10 {
            let p = planner.propose(&w, &st, d, &[]);
            assert_eq!(p.proposed, heuristic_global(&w, &st, d, 0.10).0);
            assert!(p.injected.is_none());
        }
    }

    #[test]
    fn forced_duplicate_targets_served() {
        let w = world();
        let a = CustomerStatus::Assigned(0);
        let mut st = with_customers(&w, &[(100.0, 0.0, a), (0.0, 300.0, CustomerStatus::Served)]);
        st.drones[0].carried = vec![CustomerId(0)];
        st.drones[0].position = Point::new(5.0, 0.0);
        let faults = FaultConfig {
            duplicate_visit: 1.0,
            ..FaultConfig::off()
        };
        let mut planner = MockPlanner::new(faults, 0.10);
        planner.reset(1, 10);
        let p = planner.propose(&w, &st, 0, &[]);
        assert_eq!(p.proposed, Action::move_to(CustomerId(1)));
        assert_eq!(p.injected, Some(InjectedFault::DuplicateVisit));
    }

    #[test]
    fn classify_by_cumulative_rate() {
        let f = FaultConfig::default();
        assert_eq!(f.classify(0.0), Some(InjectedFault::DuplicateVisit));
        assert_eq!(f.classify(0.07), Some(InjectedFault::BatteryIgnore));
        assert_eq!(f.classify(0.09), Some(InjectedFault::InefficientRoute));
        assert_eq!(f.classify(0.097), Some(InjectedFault::SectorImbalance));
        assert_eq!(f.classify(0.5), None);
        assert!(FaultConfig {
            duplicate_visit: 0.9,
            battery_ignore: 0.2,
            ..FaultConfig::off()
        }
        .validate()
        .is_err());
    }
}
