//! The delivery environment: a square grid split into four sectors around a
//! single warehouse, customers spawned at episode start, and a fleet of
//! drones with battery state.
//!
//! Drones act one at a time within a step (in id order) via
//! [`World::apply_action`]; [`World::finish_step`] advances the clock.
//! [`World::step`] does both for a precomputed joint action.

use crate::action::{Action, GlobalAction, LocalAction, Tier};
use crate::energy::{self, AircraftParams, BatteryModel, EnergyError, Soc};
use crate::geometry::{Point, Sector};
use crate::routing::{self, CostMode, Route, Stop};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("no drone with id {0}")]
    UnknownDrone(usize),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CustomerId(pub u32);

impl fmt::Display for CustomerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

pub type DroneId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CustomerStatus {
    Pending,
    Assigned(DroneId),
    Served,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Customer {
    pub id: CustomerId,
    pub position: Point,
    pub sector: Sector,
    pub status: CustomerStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Customer(CustomerId),
    Base,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DroneMode {
    /// On the pad at the warehouse with a full pack.
    Grounded,
    /// On the pad, taking charge.
    Charging,
    Transit(Target),
    /// Airborne and stationary (just delivered, or idling).
    Loitering,
    /// Battery exhausted; absorbing for the rest of the episode.
    Depleted,
}

impl DroneMode {
    pub fn label(self) -> &'static str {
        match self {
            DroneMode::Grounded => "grounded",
            DroneMode::Charging => "charging",
            DroneMode::Transit(_) => "transit",
            DroneMode::Loitering => "loitering",
            DroneMode::Depleted => "depleted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub id: DroneId,
    pub position: Point,
    pub soc: Soc,
    /// Packages on board, by customer id (ascending).
    pub carried: Vec<CustomerId>,
    pub mode: DroneMode,
    pub cumulative_distance: f64,
    pub sector: Option<Sector>,
    pub energy_used_kwh: f64,
    pub energy_charged_kwh: f64,
    /// kWh received in the current charging session.
    pub session_charge_kwh: f64,
    pub deliveries: u32,
}

impl DroneState {
    fn fresh(id: DroneId, at: Point) -> Self {
        Self {
            id,
            position: at,
            soc: Soc::FULL,
            carried: Vec::new(),
            mode: DroneMode::Grounded,
            cumulative_distance: 0.0,
            sector: None,
            energy_used_kwh: 0.0,
            energy_charged_kwh: 0.0,
            session_charge_kwh: 0.0,
            deliveries: 0,
        }
    }

    pub fn carried_packages(&self) -> usize {
        self.carried.len()
    }

    pub fn is_depleted(&self) -> bool {
        self.mode == DroneMode::Depleted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Grid spans `[-half_extent, half_extent]²`, metres.
    pub half_extent: f64,
    pub warehouse: Point,
    /// Seconds per step.
    pub time_step: f64,
    pub max_steps: u32,
    pub drone_count: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            half_extent: 500.0,
            warehouse: Point::ORIGIN,
            time_step: 1.0,
            max_steps: 300,
            drone_count: 10,
        }
    }
}

/// Customers per sector are drawn uniformly from `min..=max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpawnConfig {
    pub min_per_sector: u32,
    pub max_per_sector: u32,
}

impl Default for SpawnConfig {
    fn default() -> Self {
        Self {
            min_per_sector: 3,
            max_per_sector: 7,
        }
    }
}

impl SpawnConfig {
    pub fn fixed(n: u32) -> Self {
        Self {
            min_per_sector: n,
            max_per_sector: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub delivery: f64,
    /// Per metre flown.
    pub distance: f64,
    /// Per kWh consumed.
    pub battery: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            delivery: 10.0,
            distance: 0.01,
            battery: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub grid: GridConfig,
    pub spawn: SpawnConfig,
    pub aircraft: AircraftParams,
    pub battery: BatteryModel,
    pub reward: RewardWeights,
}

impl Default for WorldConfig {
    /// The desk-scale preset: full-size airframe, 2 kWh pack.
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            spawn: SpawnConfig::default(),
            aircraft: AircraftParams::default(),
            battery: BatteryModel::desk_scale(),
            reward: RewardWeights::default(),
        }
    }
}

impl WorldConfig {
    /// Same as the default but with the full 150 kWh pack.
    pub fn full_scale() -> Self {
        Self {
            battery: BatteryModel::default(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let g = &self.grid;
        if !(g.half_extent > 0.0 && g.half_extent.is_finite()) {
            return Err(WorldError::InvalidConfig("half_extent must be positive".into()));
        }
        if g.drone_count == 0 {
            return Err(WorldError::InvalidConfig("drone_count must be at least 1".into()));
        }
        if g.max_steps == 0 {
            return Err(WorldError::InvalidConfig("max_steps must be at least 1".into()));
        }
        if !(g.time_step > 0.0 && g.time_step.is_finite()) {
            return Err(WorldError::InvalidConfig("time_step must be positive".into()));
        }
        if g.warehouse.x.abs() >= g.half_extent || g.warehouse.y.abs() >= g.half_extent {
            return Err(WorldError::InvalidConfig("warehouse must lie strictly inside the grid".into()));
        }
        if self.spawn.min_per_sector > self.spawn.max_per_sector {
            return Err(WorldError::InvalidConfig("spawn min_per_sector exceeds max_per_sector".into()));
        }
        self.aircraft.validate()?;
        self.battery.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub t: u32,
    /// Seed the episode was initialised from.
    pub seed: u64,
    pub drones: Vec<DroneState>,
    pub customers: Vec<Customer>,
}

impl WorldState {
    pub fn customer(&self, id: CustomerId) -> Option<&Customer> {
        // ids are dense and assigned in spawn order
        self.customers.get(id.0 as usize).filter(|c| c.id == id)
    }

    pub fn drone(&self, id: DroneId) -> Result<&DroneState, WorldError> {
        self.drones.get(id).ok_or(WorldError::UnknownDrone(id))
    }

    pub fn spawned(&self) -> usize {
        self.customers.len()
    }

    pub fn served(&self) -> usize {
        self.customers.iter().filter(|c| c.status == CustomerStatus::Served).count()
    }

    pub fn pending_in(&self, sector: Sector) -> usize {
        self.customers
            .iter()
            .filter(|c| c.sector == sector && c.status == CustomerStatus::Pending)
            .count()
    }

    pub fn pending_counts(&self) -> [usize; 4] {
        let mut out = [0; 4];
        for c in &self.customers {
            if c.status == CustomerStatus::Pending {
                out[c.sector.index()] += 1;
            }
        }
        out
    }

    /// Drones currently assigned to each sector, optionally leaving one out.
    pub fn drones_per_sector(&self, exclude: Option<DroneId>) -> [usize; 4] {
        let mut out = [0; 4];
        for d in &self.drones {
            if Some(d.id) == exclude {
                continue;
            }
            if let Some(s) = d.sector {
                out[s.index()] += 1;
            }
        }
        out
    }

    /// SHA-256 over the customer layout (ids, sectors, exact coordinates).
    pub fn layout_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.customers {
            h.update(c.id.0.to_le_bytes());
            h.update([c.sector.index() as u8]);
            h.update(c.position.x.to_bits().to_le_bytes());
            h.update(c.position.y.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Per-drone policy input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Position divided by the grid half-extent.
    pub normalized_position: [f64; 2],
    pub battery: f64,
    /// Pending customers per sector over customers spawned this episode.
    pub sector_pending: [f64; 4],
    /// One-hot over EAST, NORTH, WEST, SOUTH, none.
    pub sector_assignment: [f64; 5],
    /// Distance flown over the most a drone could fly in an episode.
    pub normalized_distance: f64,
}

pub const OBSERVATION_DIM: usize = 13;

impl Observation {
    pub fn features(&self) -> [f64; OBSERVATION_DIM] {
        let mut f = [0.0; OBSERVATION_DIM];
        f[0..2].copy_from_slice(&self.normalized_position);
        f[2] = self.battery;
        f[3..7].copy_from_slice(&self.sector_pending);
        f[7..12].copy_from_slice(&self.sector_assignment);
        f[12] = self.normalized_distance;
        f
    }

    pub fn from_features(f: &[f64; OBSERVATION_DIM]) -> Self {
        Self {
            normalized_position: [f[0], f[1]],
            battery: f[2],
            sector_pending: [f[3], f[4], f[5], f[6]],
            sector_assignment: [f[7], f[8], f[9], f[10], f[11]],
            normalized_distance: f[12],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Dispatched { sector: Sector, loaded: usize },
    Delivered { customer: CustomerId },
    /// Arrived at a customer without that customer's package.
    WastedArrival { customer: CustomerId },
    Landed,
    /// A charging session delivered its full per-session allowance.
    Charged,
    Depleted,
    InvalidAction { action: String, reason: String },
    Overridden { proposed: String, executed: String, fault: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: u32,
    pub drone: DroneId,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// What one drone's action did during a step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DroneOutcome {
    pub delivered: u32,
    pub distance: f64,
    pub energy_kwh: f64,
    pub reward: f64,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub outcomes: Vec<DroneOutcome>,
}

impl StepReport {
    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.outcomes.iter().flat_map(|o| o.events.iter())
    }
}

/// Environment dynamics over a validated [`WorldConfig`].
#[derive(Debug, Clone)]
pub struct World {
    config: WorldConfig,
    kwh_per_meter: f64,
    hover_kwh_per_step: f64,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self, WorldError> {
        config.validate()?;
        let kwh_per_meter = energy::kwh_per_meter(&config.aircraft);
        let hover_kwh_per_step = energy::hover_energy(config.grid.time_step, &config.aircraft);
        Ok(Self {
            config,
            kwh_per_meter,
            hover_kwh_per_step,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn warehouse(&self) -> Point {
        self.config.grid.warehouse
    }

    pub fn kwh_per_meter(&self) -> f64 {
        self.kwh_per_meter
    }

    pub fn hover_kwh_per_step(&self) -> f64 {
        self.hover_kwh_per_step
    }

    /// Metres a drone covers in one step at cruise speed.
    pub fn step_length(&self) -> f64 {
        self.config.aircraft.cruise_speed * self.config.grid.time_step
    }

    pub fn leg_kwh(&self, distance: f64) -> f64 {
        energy::energy_for_leg(distance, &self.config.aircraft)
    }

    /// Fresh episode: every drone at the warehouse with a full pack.
    pub fn init_episode(&self, seed: u64) -> WorldState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let customers = spawn_customers(&mut rng, &self.config.spawn, &self.config.grid);
        let drones = (0..self.config.grid.drone_count)
            .map(|i| DroneState::fresh(i, self.warehouse()))
            .collect();
        WorldState {
            t: 0,
            seed,
            drones,
            customers,
        }
    }

    /// Which planner tier decides for `drone`: the sector planner while it is
    /// empty at the warehouse, the route planner otherwise.
    pub fn tier(&self, state: &WorldState, drone: DroneId) -> Tier {
        let d = &state.drones[drone];
        if d.position == self.warehouse() && d.carried.is_empty() {
            Tier::Global
        } else {
            Tier::Local
        }
    }

    pub fn at_base(&self, state: &WorldState, drone: DroneId) -> bool {
        state.drones[drone].position == self.warehouse()
    }

    /// SOC left after flying from the drone's position to `via` and then home.
    pub fn soc_after_trip_via(&self, state: &WorldState, drone: DroneId, via: Point) -> f64 {
        let d = &state.drones[drone];
        let dist = d.position.distance(via) + via.distance(self.warehouse());
        d.soc.fraction() - self.leg_kwh(dist) / self.config.battery.capacity_kwh
    }

    /// SOC left after flying straight home.
    pub fn soc_after_return(&self, state: &WorldState, drone: DroneId) -> f64 {
        let d = &state.drones[drone];
        d.soc.fraction() - self.leg_kwh(d.position.distance(self.warehouse())) / self.config.battery.capacity_kwh
    }

    /// SOC left after idling one step and then flying home. Idling on the pad
    /// is free.
    pub fn soc_after_idle(&self, state: &WorldState, drone: DroneId) -> f64 {
        if self.at_base(state, drone) {
            return state.drones[drone].soc.fraction();
        }
        self.soc_after_return(state, drone) - self.hover_kwh_per_step / self.config.battery.capacity_kwh
    }

    /// Optimal visiting order over the drone's packages from where it is now,
    /// ending at the warehouse.
    pub fn plan_carried(&self, state: &WorldState, drone: DroneId) -> Route {
        let d = &state.drones[drone];
        let stops: Vec<Stop> = d
            .carried
            .iter()
            .filter_map(|&id| state.customer(id).map(|c| Stop { id, position: c.position }))
            .collect();
        routing::plan_route(d.position, &stops, Some(self.warehouse()), CostMode::Distance, stops.len())
            .expect("limit equals the stop count")
    }

    /// Nearest pending customer of `sector` to the warehouse (ties by id).
    pub fn nearest_pending<'s>(&self, state: &'s WorldState, sector: Sector) -> Option<&'s Customer> {
        let base = self.warehouse();
        state
            .customers
            .iter()
            .filter(|c| c.sector == sector && c.status == CustomerStatus::Pending)
            .min_by(|a, b| {
                base.distance(a.position)
                    .total_cmp(&base.distance(b.position))
                    .then(a.id.cmp(&b.id))
            })
    }

    pub fn reward_of(&self, delivered: u32, distance: f64, energy_kwh: f64) -> f64 {
        let w = &self.config.reward;
        w.delivery * f64::from(delivered) - w.distance * distance - w.battery * energy_kwh
    }

    pub fn observe(&self, state: &WorldState, drone: DroneId) -> Result<Observation, WorldError> {
        let d = state.drone(drone)?;
        let h = self.config.grid.half_extent;
        let total = state.spawned();
        let pending = state.pending_counts();
        let mut sector_pending = [0.0; 4];
        if total > 0 {
            for (slot, &n) in sector_pending.iter_mut().zip(pending.iter()) {
                *slot = n as f64 / total as f64;
            }
        }
        let mut sector_assignment = [0.0; 5];
        sector_assignment[d.sector.map_or(4, Sector::index)] = 1.0;
        let max_distance = self.step_length() * f64::from(self.config.grid.max_steps);
        Ok(Observation {
            normalized_position: [d.position.x / h, d.position.y / h],
            battery: d.soc.fraction(),
            sector_pending,
            sector_assignment,
            normalized_distance: (d.cumulative_distance / max_distance).clamp(0.0, 1.0),
        })
    }

    pub fn is_terminal(&self, state: &WorldState) -> bool {
        state.t >= self.config.grid.max_steps
            || state.customers.iter().all(|c| c.status == CustomerStatus::Served)
    }

    /// Execute one drone's action against the live state.
    pub fn apply_action(&self, state: &mut WorldState, drone: DroneId, action: Action) -> DroneOutcome {
        let mut out = DroneOutcome::default();
        if state.drones[drone].is_depleted() {
            return out;
        }
        let t = state.t;
        match action {
            Action::Global(GlobalAction::GoToSector(sector)) => {
                if self.tier(state, drone) == Tier::Global {
                    self.dispatch(state, drone, sector, &mut out);
                } else {
                    out.events.push(Event {
                        t,
                        drone,
                        kind: EventKind::InvalidAction {
                            action: action.canonical(),
                            reason: "sector dispatch requires an empty drone at the warehouse".into(),
                        },
                    });
                }
            }
            Action::Local(LocalAction::MoveToCustomer(id)) => match state.customer(id).map(|c| c.position) {
                Some(pos) => self.fly(state, drone, Target::Customer(id), pos, &mut out),
                None => {
                    out.events.push(Event {
                        t,
                        drone,
                        kind: EventKind::InvalidAction {
                            action: action.canonical(),
                            reason: format!("no customer {id}"),
                        },
                    });
                    self.idle(state, drone, &mut out);
                }
            },
            Action::Local(LocalAction::ReturnToBase) => {
                let base = self.warehouse();
                self.fly(state, drone, Target::Base, base, &mut out);
            }
            Action::Global(GlobalAction::Idle) | Action::Local(LocalAction::Idle) | Action::Pass => {
                self.idle(state, drone, &mut out);
            }
        }
        self.charge_if_docked(state, drone, &mut out);
        out.reward = self.reward_of(out.delivered, out.distance, out.energy_kwh);
        out
    }

    pub fn finish_step(&self, state: &mut WorldState) {
        state.t += 1;
    }

    /// Apply a joint action (one entry per drone, in id order) and advance the
    /// clock.
    pub fn step(&self, state: &mut WorldState, actions: &[Action]) -> StepReport {
        assert_eq!(actions.len(), state.drones.len(), "one action per drone");
        let outcomes = actions
            .iter()
            .enumerate()
            .map(|(i, &a)| self.apply_action(state, i, a))
            .collect();
        self.finish_step(state);
        StepReport { outcomes }
    }

    fn dispatch(&self, state: &mut WorldState, drone: DroneId, sector: Sector, out: &mut DroneOutcome) {
        let base = self.warehouse();
        let mut candidates: Vec<(f64, CustomerId)> = state
            .customers
            .iter()
            .filter(|c| c.sector == sector && c.status == CustomerStatus::Pending)
            .map(|c| (base.distance(c.position), c.id))
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        candidates.truncate(self.config.aircraft.max_packages);
        let mut loaded: Vec<CustomerId> = candidates.into_iter().map(|(_, id)| id).collect();
        loaded.sort();
        for id in &loaded {
            state.customers[id.0 as usize].status = CustomerStatus::Assigned(drone);
        }
        let d = &mut state.drones[drone];
        d.sector = if loaded.is_empty() { None } else { Some(sector) };
        out.events.push(Event {
            t: state.t,
            drone,
            kind: EventKind::Dispatched {
                sector,
                loaded: loaded.len(),
            },
        });
        d.carried = loaded;
    }

    /// Drain `kwh` from the pack. Returns the fraction of the request that
    /// could be supplied (1.0 unless the pack ran dry).
    fn drain(&self, state: &mut WorldState, drone: DroneId, kwh: f64, out: &mut DroneOutcome) -> f64 {
        let cap = self.config.battery.capacity_kwh;
        let d = &mut state.drones[drone];
        let available = d.soc.fraction() * cap;
        let (used, supplied) = if kwh > available { (available, available / kwh) } else { (kwh, 1.0) };
        d.soc = Soc::new(d.soc.fraction() - used / cap);
        d.energy_used_kwh += used;
        out.energy_kwh += used;
        supplied
    }

    fn mark_depleted(&self, state: &mut WorldState, drone: DroneId, out: &mut DroneOutcome) {
        let d = &mut state.drones[drone];
        d.soc = Soc::EMPTY;
        d.mode = DroneMode::Depleted;
        out.events.push(Event {
            t: state.t,
            drone,
            kind: EventKind::Depleted,
        });
    }

    fn idle(&self, state: &mut WorldState, drone: DroneId, out: &mut DroneOutcome) {
        if self.at_base(state, drone) {
            return;
        }
        let supplied = self.drain(state, drone, self.hover_kwh_per_step, out);
        if supplied < 1.0 || state.drones[drone].soc.fraction() <= 0.0 {
            self.mark_depleted(state, drone, out);
        } else {
            state.drones[drone].mode = DroneMode::Loitering;
        }
    }

    fn fly(&self, state: &mut WorldState, drone: DroneId, target: Target, goal: Point, out: &mut DroneOutcome) {
        let from = state.drones[drone].position;
        if from == goal {
            if target == Target::Base {
                return;
            }
            // Already hovering over the customer: treat as an arrival.
            self.arrive(state, drone, target, out);
            return;
        }
        let (mut to, mut dist) = from.advance_toward(goal, self.step_length());
        let need = self.leg_kwh(dist);
        let supplied = self.drain(state, drone, need, out);
        if supplied < 1.0 {
            // Fly as far as the remaining charge allows, then drop out.
            let (p, d) = from.advance_toward(goal, dist * supplied);
            to = p;
            dist = d;
        }
        {
            let d = &mut state.drones[drone];
            d.position = to;
            d.cumulative_distance += dist;
            d.mode = DroneMode::Transit(target);
        }
        out.distance += dist;
        if supplied < 1.0 {
            self.mark_depleted(state, drone, out);
            return;
        }
        if to == goal {
            self.arrive(state, drone, target, out);
        }
        if state.drones[drone].soc.fraction() <= 0.0 {
            self.mark_depleted(state, drone, out);
        }
    }

    fn arrive(&self, state: &mut WorldState, drone: DroneId, target: Target, out: &mut DroneOutcome) {
        let t = state.t;
        match target {
            Target::Base => {
                let d = &mut state.drones[drone];
                d.mode = DroneMode::Grounded;
                d.session_charge_kwh = 0.0;
                if d.carried.is_empty() {
                    d.sector = None;
                }
                out.events.push(Event {
                    t,
                    drone,
                    kind: EventKind::Landed,
                });
            }
            Target::Customer(id) => {
                let carried = state.drones[drone].carried.contains(&id);
                let idx = id.0 as usize;
                if carried && state.customers[idx].status == CustomerStatus::Assigned(drone) {
                    state.customers[idx].status = CustomerStatus::Served;
                    let d = &mut state.drones[drone];
                    d.carried.retain(|&c| c != id);
                    d.deliveries += 1;
                    d.mode = DroneMode::Loitering;
                    out.delivered += 1;
                    out.events.push(Event {
                        t,
                        drone,
                        kind: EventKind::Delivered { customer: id },
                    });
                } else {
                    state.drones[drone].mode = DroneMode::Loitering;
                    out.events.push(Event {
                        t,
                        drone,
                        kind: EventKind::WastedArrival { customer: id },
                    });
                }
            }
        }
    }

    /// Drones standing on the warehouse pad charge at the charger's power,
    /// up to the per-session allowance; a completed session rolls straight
    /// into the next one while the drone stays docked.
    fn charge_if_docked(&self, state: &mut WorldState, drone: DroneId, out: &mut DroneOutcome) {
        if !self.at_base(state, drone) || state.drones[drone].is_depleted() {
            return;
        }
        let b = &self.config.battery;
        let t = state.t;
        let d = &mut state.drones[drone];
        let room = (1.0 - d.soc.fraction()) * b.capacity_kwh;
        let session_left = (b.max_charge_per_journey_kwh - d.session_charge_kwh).max(0.0);
        let add = (b.charger_power_kw * self.config.grid.time_step / 3600.0)
            .min(session_left)
            .min(room);
        if add > 0.0 {
            d.soc = Soc::new(d.soc.fraction() + add / b.capacity_kwh);
            d.energy_charged_kwh += add;
            d.session_charge_kwh += add;
            if d.session_charge_kwh >= b.max_charge_per_journey_kwh * (1.0 - 1e-12) {
                d.session_charge_kwh = 0.0;
                out.events.push(Event {
                    t,
                    drone,
                    kind: EventKind::Charged,
                });
            }
        }
        d.mode = if d.soc.fraction() < 1.0 {
            DroneMode::Charging
        } else {
            DroneMode::Grounded
        };
    }
}

/// Draw customers for each sector, uniformly over the sector's wedge clipped
/// to the grid. Ids are assigned densely in spawn order (EAST first).
pub fn spawn_customers<R: Rng + ?Sized>(rng: &mut R, spawn: &SpawnConfig, grid: &GridConfig) -> Vec<Customer> {
    let mut out = Vec::new();
    for sector in Sector::ALL {
        let n = rng.random_range(spawn.min_per_sector..=spawn.max_per_sector);
        for _ in 0..n {
            let position = sample_in_sector(rng, sector, grid);
            out.push(Customer {
                id: CustomerId(out.len() as u32),
                position,
                sector,
                status: CustomerStatus::Pending,
            });
        }
    }
    out
}

/// Rejection-sample a point of the wedge within the half of the grid that
/// contains it.
pub fn sample_in_sector<R: Rng + ?Sized>(rng: &mut R, sector: Sector, grid: &GridConfig) -> Point {
    let h = grid.half_extent;
    let w = grid.warehouse;
    let (xr, yr) = match sector {
        Sector::East => ((w.x, h), (-h, h)),
        Sector::West => ((-h, w.x), (-h, h)),
        Sector::North => ((-h, h), (w.y, h)),
        Sector::South => ((-h, h), (-h, w.y)),
    };
    loop {
        let x = rng.random_range(xr.0..=xr.1);
        let y = rng.random_range(yr.0..=yr.1);
        let (dx, dy) = (x - w.x, y - w.y);
        if (dx != 0.0 || dy != 0.0) && sector.contains_offset(dx, dy) {
            return Point::new(x, y);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_customer_world(at: Point) -> (World, WorldState) {
        let world = World::new(WorldConfig::default()).unwrap();
        let mut st = world.init_episode(1);
        st.customers = vec![Customer {
            id: CustomerId(0),
            position: at,
            sector: Sector::of(at, Point::ORIGIN).unwrap(),
            status: CustomerStatus::Assigned(0),
        }];
        st.drones[0].carried = vec![CustomerId(0)];
        st.drones[0].sector = Some(Sector::East);
        (world, st)
    }

    #[test]
    fn init_resets_fleet() {
        let world = World::new(WorldConfig::default()).unwrap();
        let st = world.init_episode(42);
        assert_eq!(st.drones.len(), 10);
        for d in &st.drones {
            assert_eq!(d.position, Point::ORIGIN);
            assert_eq!(d.soc, Soc::FULL);
            assert!(d.carried.is_empty());
        }
        assert_eq!(st.t, 0);
        assert_eq!(world.init_episode(42), st);
        assert_ne!(world.init_episode(43).customers, st.customers);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = WorldConfig::default();
        c.grid.drone_count = 0;
        assert!(World::new(c).is_err());
        let mut c = WorldConfig::default();
        c.grid.half_extent = 0.0;
        assert!(World::new(c).is_err());
    }

    #[test]
    fn kinematics_and_delivery() {
        let (world, mut st) = one_customer_world(Point::new(100.0, 0.0));
        let mut actions = vec![Action::GLOBAL_IDLE; 10];
        actions[0] = Action::move_to(CustomerId(0));
        world.step(&mut st, &actions);
        assert_eq!(st.drones[0].position, Point::new(73.762, 0.0));
        let r = world.step(&mut st, &actions);
        assert_eq!(st.drones[0].position, Point::new(100.0, 0.0));
        assert_eq!(r.outcomes[0].delivered, 1);
        assert_eq!(st.customers[0].status, CustomerStatus::Served);
        assert!(st.drones[0].carried.is_empty());
        assert!((st.drones[0].cumulative_distance - 100.0).abs() < 1e-9);
    }

    #[test]
    fn grounded_idle_is_free() {
        let world = World::new(WorldConfig::default()).unwrap();
        let mut st = world.init_episode(3);
        let before = st.clone();
        let r = world.step(&mut st, &vec![Action::GLOBAL_IDLE; 10]);
        assert!(r.outcomes.iter().all(|o| o.energy_kwh == 0.0 && o.reward == 0.0));
        for (a, b) in st.drones.iter().zip(&before.drones) {
            assert_eq!(a.position, b.position);
            assert_eq!(a.soc, b.soc);
        }
    }

    #[test]
    fn unknown_customer_is_reported() {
        let world = World::new(WorldConfig::default()).unwrap();
        let mut st = world.init_episode(3);
        let mut actions = vec![Action::GLOBAL_IDLE; 10];
        actions[2] = Action::move_to(CustomerId(9999));
        let r = world.step(&mut st, &actions);
        assert!(matches!(r.outcomes[2].events[0].kind, EventKind::InvalidAction { .. }));
    }

    #[test]
    fn dispatch_loads_nearest_pending() {
        let world = World::new(WorldConfig::default()).unwrap();
        let mut st = world.init_episode(5);
        let east = st.pending_in(Sector::East);
        let out = world.apply_action(&mut st, 0, Action::go_to(Sector::East));
        let d = &st.drones[0];
        assert_eq!(d.carried.len(), east.min(4));
        assert_eq!(d.sector, Some(Sector::East));
        assert!(matches!(out.events[0].kind, EventKind::Dispatched { .. }));
        for id in &d.carried {
            assert_eq!(st.customers[id.0 as usize].status, CustomerStatus::Assigned(0));
        }
        // dispatch while loaded is rejected
        let out = world.apply_action(&mut st, 0, Action::go_to(Sector::West));
        assert!(matches!(out.events[0].kind, EventKind::InvalidAction { .. }));
    }

    #[test]
    fn running_dry_mid_leg_depletes() {
        let (world, mut st) = one_customer_world(Point::new(400.0, 0.0));
        st.drones[0].soc = Soc::new(0.01);
        let out = world.apply_action(&mut st, 0, Action::move_to(CustomerId(0)));
        let d = &st.drones[0];
        assert_eq!(d.mode, DroneMode::Depleted);
        assert_eq!(d.soc, Soc::EMPTY);
        assert!(out.distance < world.step_length());
        assert!((out.energy_kwh - 0.02).abs() < 1e-12);
        // absorbing
        let snapshot = d.clone();
        world.apply_action(&mut st, 0, Action::RETURN);
        assert_eq!(st.drones[0], snapshot);
    }

    #[test]
    fn docked_drone_recharges() {
        let world = World::new(WorldConfig::default()).unwrap();
        let mut st = world.init_episode(1);
        st.drones[0].soc = Soc::new(0.5);
        world.apply_action(&mut st, 0, Action::GLOBAL_IDLE);
        // 360 kW for one second = 0.1 kWh = 5 % of 2 kWh
        assert!((st.drones[0].soc.fraction() - 0.55).abs() < 1e-12);
        assert_eq!(st.drones[0].mode, DroneMode::Charging);
    }

    #[test]
    fn terminal_conditions() {
        let world = World::new(WorldConfig::default()).unwrap();
        let mut st = world.init_episode(1);
        assert!(!world.is_terminal(&st));
        st.t = 300;
        assert!(world.is_terminal(&st));
        st.t = 120;
        for c in &mut st.customers {
            c.status = CustomerStatus::Served;
        }
        assert!(world.is_terminal(&st));
    }

    #[test]
    fn observation_ratios() {
        let world = World::new(WorldConfig::default()).unwrap();
        let mut st = world.init_episode(1);
        st.customers.clear();
        let grid = GridConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (i, sector) in [Sector::East; 5].into_iter().chain([Sector::West; 15]).enumerate() {
            st.customers.push(Customer {
                id: CustomerId(i as u32),
                position: sample_in_sector(&mut rng, sector, &grid),
                sector,
                status: CustomerStatus::Pending,
            });
        }
        st.drones[1].position = Point::new(500.0, -500.0);
        let o = world.observe(&st, 1).unwrap();
        assert_eq!(o.normalized_position, [1.0, -1.0]);
        assert_eq!(o.sector_pending[Sector::East.index()], 0.25);
        assert_eq!(o.sector_assignment[4], 1.0);
        let o0 = world.observe(&st, 0).unwrap();
        assert_eq!(o0.normalized_position, [0.0, 0.0]);
        assert_eq!(o0.battery, 1.0);
        assert_eq!(world.observe(&st, 99), Err(WorldError::UnknownDrone(99)));
    }

    #[test]
    fn reward_formula() {
        let world = World::new(WorldConfig::default()).unwrap();
        let r = world.reward_of(1, 100.0, 0.073);
        assert!((r - (10.0 - 1.0 - 0.00365)).abs() < 1e-12);
        assert_eq!(world.reward_of(0, 0.0, 0.0), 0.0);
    }
}
