//! The two-level action vocabulary shared by planners, the override layer and
//! the learned policy.

use crate::geometry::Sector;
use crate::world::CustomerId;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Which planner tier a decision belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Global,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalAction {
    GoToSector(Sector),
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalAction {
    MoveToCustomer(CustomerId),
    ReturnToBase,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Global(GlobalAction),
    Local(LocalAction),
    /// The planner declined to act (`<pass>`).
    Pass,
}

/// Action names offered to the sector-level planner, in prompt order.
pub const GLOBAL_ACTION_NAMES: [&str; 5] = [
    "go_to_sector_east",
    "go_to_sector_west",
    "go_to_sector_north",
    "go_to_sector_south",
    "idle",
];

/// Action names offered to the route-level planner, in prompt order.
pub const LOCAL_ACTION_NAMES: [&str; 3] = ["move_to_customer", "return_to_base", "idle"];

pub const PASS_TOKEN: &str = "<pass>";

impl Action {
    pub fn go_to(sector: Sector) -> Self {
        Action::Global(GlobalAction::GoToSector(sector))
    }

    pub fn move_to(id: CustomerId) -> Self {
        Action::Local(LocalAction::MoveToCustomer(id))
    }

    pub const RETURN: Action = Action::Local(LocalAction::ReturnToBase);
    pub const GLOBAL_IDLE: Action = Action::Global(GlobalAction::Idle);
    pub const LOCAL_IDLE: Action = Action::Local(LocalAction::Idle);

    pub fn tier(self) -> Option<Tier> {
        match self {
            Action::Global(_) => Some(Tier::Global),
            Action::Local(_) => Some(Tier::Local),
            Action::Pass => None,
        }
    }

    pub fn is_idle(self) -> bool {
        matches!(self, Action::Global(GlobalAction::Idle) | Action::Local(LocalAction::Idle))
    }

    pub fn target_customer(self) -> Option<CustomerId> {
        match self {
            Action::Local(LocalAction::MoveToCustomer(c)) => Some(c),
            _ => None,
        }
    }

    pub fn target_sector(self) -> Option<Sector> {
        match self {
            Action::Global(GlobalAction::GoToSector(s)) => Some(s),
            _ => None,
        }
    }

    /// Canonical text form, e.g. `go_to_sector_east`, `move_to_customer(C3)`.
    pub fn canonical(self) -> String {
        match self {
            Action::Global(GlobalAction::GoToSector(s)) => format!("go_to_sector_{}", s.token()),
            Action::Global(GlobalAction::Idle) | Action::Local(LocalAction::Idle) => "idle".to_string(),
            Action::Local(LocalAction::MoveToCustomer(c)) => format!("move_to_customer({c})"),
            Action::Local(LocalAction::ReturnToBase) => "return_to_base".to_string(),
            Action::Pass => PASS_TOKEN.to_string(),
        }
    }

    /// Parse one action token. `idle` resolves to the idle action of `tier`.
    /// Matching is case-insensitive and tolerant of surrounding markup.
    pub fn from_token(token: &str, tier: Tier) -> Option<Action> {
        let t = token
            .trim()
            .trim_matches(|c: char| matches!(c, '`' | '"' | '\'' | '*' | '.' | ',' | ';' | '[' | ']'))
            .trim()
            .to_ascii_lowercase();
        if t == PASS_TOKEN || t == "pass" {
            return Some(Action::Pass);
        }
        if t == "idle" {
            return Some(match tier {
                Tier::Global => Action::GLOBAL_IDLE,
                Tier::Local => Action::LOCAL_IDLE,
            });
        }
        if t == "return_to_base" {
            return Some(Action::RETURN);
        }
        if let Some(rest) = t.strip_prefix("go_to_sector_") {
            return Sector::ALL.iter().find(|s| s.token() == rest).map(|&s| Action::go_to(s));
        }
        if let Some(rest) = t.strip_prefix("move_to_customer") {
            let arg = rest
                .trim()
                .trim_start_matches(|c: char| c == '(' || c == ':' || c == '=' || c.is_whitespace())
                .trim_end_matches(')')
                .trim();
            let digits = arg.strip_prefix('c').unwrap_or(arg);
            return digits.parse::<u32>().ok().map(|n| Action::move_to(CustomerId(n)));
        }
        None
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_round_trip() {
        let mut all = vec![Action::GLOBAL_IDLE, Action::LOCAL_IDLE, Action::RETURN, Action::Pass];
        all.extend(Sector::ALL.iter().map(|&s| Action::go_to(s)));
        all.extend((0..5).map(|i| Action::move_to(CustomerId(i))));
        for a in all {
            let tier = a.tier().unwrap_or(Tier::Global);
            assert_eq!(Action::from_token(&a.canonical(), tier), Some(a), "{a}");
        }
    }

    #[test]
    fn lenient_forms() {
        assert_eq!(Action::from_token("GO_TO_SECTOR_EAST", Tier::Global), Some(Action::go_to(Sector::East)));
        assert_eq!(Action::from_token("`move_to_customer 7`", Tier::Local), Some(Action::move_to(CustomerId(7))));
        assert_eq!(Action::from_token("move_to_customer(c12)", Tier::Local), Some(Action::move_to(CustomerId(12))));
        assert_eq!(Action::from_token("fly_to_moon", Tier::Global), None);
        assert_eq!(Action::from_token("go_to_sector_up", Tier::Global), None);
        assert_eq!(Action::from_token("move_to_customer(bob)", Tier::Local), None);
    }
}
