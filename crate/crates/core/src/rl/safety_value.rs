//! Monte-Carlo estimates of the discounted cost-to-go `V_c`.

use super::{net_input, Policy};
use crate::safety::Shield;
use crate::slots::SlotView;
use crate::world::{World, WorldState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A stochastic process emitting a cost vector per step.
pub trait CostProcess {
    type State: Clone;

    fn start(&self) -> Self::State;

    /// Advance one step; returns the step's per-constraint costs and whether
    /// the process terminated.
    fn step(&self, state: &mut Self::State, rng: &mut ChaCha8Rng) -> ([f64; 4], bool);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub rollouts: usize,
}

/// Mean and standard error of `Σ_t γ^t c_k(s_t, a_t)` over `n_rollouts`
/// rollouts truncated at `horizon`.
pub fn estimate_safety_value<P: CostProcess>(
    process: &P,
    constraint: usize,
    n_rollouts: usize,
    horizon: usize,
    gamma: f64,
    seed: u64,
) -> SafetyEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(n_rollouts);
    for _ in 0..n_rollouts {
        let mut s = process.start();
        let mut g = 0.0;
        let mut disc = 1.0;
        for _ in 0..horizon {
            let (c, done) = process.step(&mut s, &mut rng);
            g += disc * c[constraint];
            disc *= gamma;
            if done {
                break;
            }
        }
        returns.push(g);
    }
    let n = returns.len().max(1) as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = if returns.len() > 1 {
        returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    SafetyEstimate {
        mean,
        std_err: (var / n).sqrt(),
        rollouts: returns.len(),
    }
}

/// The fleet acting directly on the learned policy (no planner, no
/// overrides); each step's cost is the sum of hinge costs over drones.
pub struct PolicyRollout<'a> {
    pub world: &'a World,
    pub shield: &'a Shield,
    pub policy: &'a Policy,
    pub start: WorldState,
    pub greedy: bool,
}

impl CostProcess for PolicyRollout<'_> {
    type State = WorldState;

    fn start(&self) -> WorldState {
        self.start.clone()
    }

    fn step(&self, state: &mut WorldState, rng: &mut ChaCha8Rng) -> ([f64; 4], bool) {
        let mut cost = [0.0; 4];
        for drone in 0..state.drones.len() {
            if state.drones[drone].is_depleted() {
                continue;
            }
            let view = SlotView::new(self.world, state, drone);
            // no planner here, so every decision is the policy's own
            let x = net_input(&self.world.observe(state, drone).expect("drone exists"), true);
            let (slot, _) = self.policy.act(&x, view.mask(), rng, self.greedy);
            let action = view.action(slot).expect("policy samples inside the mask");
            let h = self.shield.evaluate(self.world, state, drone, action).hinges();
            for k in 0..4 {
                cost[k] += h[k];
            }
            self.world.apply_action(state, drone, action);
        }
        self.world.finish_step(state);
        (cost, self.world.is_terminal(state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slots::{ACTION_SLOTS, IDLE_SLOT};
    use crate::rl::INPUT_DIM;
    use crate::world::WorldConfig;

    struct Constant(f64);
    impl CostProcess for Constant {
        type State = ();
        fn start(&self) {}
        fn step(&self, _: &mut (), _: &mut ChaCha8Rng) -> ([f64; 4], bool) {
            ([self.0, 0.0, 0.0, 0.0], false)
        }
    }

    #[test]
    fn geometric_series() {
        let e = estimate_safety_value(&Constant(1.0), 0, 10, 20, 0.5, 0);
        assert!((e.mean - 2.0).abs() < 1e-5);
        assert_eq!(e.std_err, 0.0);
        let e2 = estimate_safety_value(&Constant(2.0), 0, 10, 20, 0.5, 0);
        assert!((e2.mean - 2.0 * e.mean).abs() < 1e-12);
    }

    #[test]
    fn grounded_idling_costs_nothing() {
        let world = World::new(WorldConfig::default()).unwrap();
        let shield = Shield::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut policy = Policy::new(INPUT_DIM, 8, ACTION_SLOTS, &mut rng);
        let last = policy.net.layers.len() - 1;
        policy.net.layers[last].b[IDLE_SLOT] = 50.0;
        let proc_ = PolicyRollout {
            world: &world,
            shield: &shield,
            policy: &policy,
            start: world.init_episode(5),
            greedy: false,
        };
        let e = estimate_safety_value(&proc_, 0, 3, 50, 0.99, 1);
        assert_eq!(e.mean, 0.0);
    }
}
