//! Fixed-size indexing of the action vocabulary for the learned policy.
//!
//! | slot | action |
//! |------|--------|
//! | 0..=3 | `go_to_sector_{east,north,west,south}` |
//! | 4 | idle |
//! | 5..=8 | k-th carried stop in optimal visiting order |
//! | 9 | `return_to_base` |

use crate::action::{Action, GlobalAction, LocalAction, Tier};
use crate::geometry::Sector;
use crate::world::{DroneId, World, WorldState};

pub const ACTION_SLOTS: usize = 10;
pub const IDLE_SLOT: usize = 4;
pub const FIRST_STOP_SLOT: usize = 5;
pub const RETURN_SLOT: usize = 9;
pub const MAX_STOP_SLOTS: usize = RETURN_SLOT - FIRST_STOP_SLOT;

/// Slot resolution for one drone at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotView {
    pub tier: Tier,
    /// Carried customers in optimal order (at most four are addressable).
    pub plan: Vec<crate::world::CustomerId>,
}

impl SlotView {
    pub fn new(world: &World, state: &WorldState, drone: DroneId) -> Self {
        let tier = world.tier(state, drone);
        let plan = if tier == Tier::Local {
            world.plan_carried(state, drone).stops
        } else {
            Vec::new()
        };
        Self { tier, plan }
    }

    /// Bit `i` set iff slot `i` is selectable.
    pub fn mask(&self) -> u16 {
        match self.tier {
            Tier::Global => 0b1_1111,
            Tier::Local => {
                let mut m = 1u16 << IDLE_SLOT | 1 << RETURN_SLOT;
                for k in 0..self.plan.len().min(MAX_STOP_SLOTS) {
                    m |= 1 << (FIRST_STOP_SLOT + k);
                }
                m
            }
        }
    }

    pub fn action(&self, slot: usize) -> Option<Action> {
        if self.mask() & (1 << slot) == 0 {
            return None;
        }
        Some(match slot {
            0..=3 => Action::go_to(Sector::ALL[slot]),
            IDLE_SLOT => match self.tier {
                Tier::Global => Action::GLOBAL_IDLE,
                Tier::Local => Action::LOCAL_IDLE,
            },
            RETURN_SLOT => Action::RETURN,
            s => Action::move_to(self.plan[s - FIRST_STOP_SLOT]),
        })
    }

    /// Inverse of [`SlotView::action`]; `None` for actions the policy cannot
    /// express here.
    pub fn slot_of(&self, action: Action) -> Option<usize> {
        let slot = match action {
            Action::Global(GlobalAction::GoToSector(s)) => s.index(),
            Action::Global(GlobalAction::Idle) | Action::Local(LocalAction::Idle) => IDLE_SLOT,
            // on the pad with nothing to deliver, returning is a no-op
            Action::Local(LocalAction::ReturnToBase) if self.tier == Tier::Global => IDLE_SLOT,
            Action::Local(LocalAction::ReturnToBase) => RETURN_SLOT,
            Action::Local(LocalAction::MoveToCustomer(c)) => {
                FIRST_STOP_SLOT + self.plan.iter().take(MAX_STOP_SLOTS).position(|&p| p == c)?
            }
            Action::Pass => return None,
        };
        (self.mask() & (1 << slot) != 0).then_some(slot)
    }
}
