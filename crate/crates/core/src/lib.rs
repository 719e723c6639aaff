//! Multi-drone delivery simulation with a constraint-checking override layer
//! between a (possibly unreliable) planner and the executed actions.
//!
//! The pieces, bottom-up: [`energy`] (rotorcraft power and battery),
//! [`world`] (the environment), [`routing`] (exact visit order),
//! [`planner`] / [`llm_client`] (proposal sources), [`safety`] (constraint
//! evaluation and overrides), [`replay`] and [`rl`] (the Lagrangian
//! actor-critic), and [`harness`] (experiments, metrics, outputs).

pub mod action;
pub mod energy;
pub mod episode;
pub mod geometry;
pub mod harness;
pub mod llm_client;
pub mod planner;
pub mod replay;
pub mod rl;
pub mod routing;
pub mod safety;
pub mod slots;
pub mod world;

pub use action::{Action, GlobalAction, LocalAction, Tier};
pub use geometry::{Point, Sector};
pub use world::{CustomerId, DroneId, World, WorldConfig, WorldState};
