//! Oracles shared by the integration tests. Each is coded independently of
//! the library routine it checks.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use skyshield_core::rl::safety_value::CostProcess;
use skyshield_core::rl::{full_mask, PgSample, PgWeights, Policy};

/// Hover power at the default rotorcraft parameters, computed by hand from
/// the blade-profile and induced terms.
pub const HOVER_W: f64 = 636_899.871_199_980_2;
pub const BLADE_PROFILE_W: f64 = 16_137.515_591_349_068;
pub const INDUCED_W: f64 = 620_762.355_608_631_13;
pub const KWH_PER_M: f64 = 0.000_985_281_363_349_318_97;

pub fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn leg(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    (dx * dx + dy * dy).sqrt()
}

/// Cheapest open or closed tour from `start` over every point, by recursive
/// enumeration of all visiting orders.
pub fn brute_force_route(start: (f64, f64), pts: &[(f64, f64)], home: Option<(f64, f64)>) -> f64 {
    fn go(at: (f64, f64), so_far: f64, left: &mut Vec<(f64, f64)>, home: Option<(f64, f64)>, best: &mut f64) {
        if left.is_empty() {
            let total = so_far + home.map_or(0.0, |h| leg(at, h));
            if total < *best {
                *best = total;
            }
            return;
        }
        for i in 0..left.len() {
            let p = left.remove(i);
            go(p, so_far + leg(at, p), left, home, best);
            left.insert(i, p);
        }
    }
    let mut best = f64::INFINITY;
    go(start, 0.0, &mut pts.to_vec(), home, &mut best);
    best
}

/// Three-state chain: states 0 and 1 emit costs and move randomly; state 2
/// is absorbing and free. Transition `P[s]` lists the next-state
/// probabilities.
pub struct Chain {
    pub p: [[f64; 3]; 2],
    pub cost: [f64; 2],
}

impl Chain {
    pub fn example() -> Self {
        Self {
            p: [[0.5, 0.3, 0.2], [0.4, 0.4, 0.2]],
            cost: [1.0, 0.5],
        }
    }

    /// Exact `V(0)` from `(I − γ P_tt) V = c` solved by Cramer's rule.
    pub fn exact_v0(&self, gamma: f64) -> f64 {
        let a = 1.0 - gamma * self.p[0][0];
        let b = -gamma * self.p[0][1];
        let c = -gamma * self.p[1][0];
        let d = 1.0 - gamma * self.p[1][1];
        (self.cost[0] * d - b * self.cost[1]) / (a * d - b * c)
    }
}

impl CostProcess for Chain {
    type State = usize;

    fn start(&self) -> usize {
        0
    }

    fn step(&self, s: &mut usize, rng: &mut ChaCha8Rng) -> ([f64; 4], bool) {
        let c = self.cost[*s];
        let u: f64 = rng.random();
        let row = self.p[*s];
        *s = if u < row[0] {
            0
        } else if u < row[0] + row[1] {
            1
        } else {
            2
        };
        ([c, 0.0, 0.0, 0.0], *s == 2)
    }
}

/// Norm-relative error `‖a − f‖ / max(‖a‖ + ‖f‖, tiny)` between the analytic
/// surrogate gradient and central differences on a random small policy.
pub fn policy_gradient_fd_error(rng: &mut ChaCha8Rng, expected_form: bool) -> (f64, usize) {
    let inputs = rng.random_range(2..=4);
    let actions = rng.random_range(2..=4);
    let mut policy = Policy::new(inputs, 4, actions, rng);
    let n = policy.net.num_params();
    let params: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    policy.net.set_params(&params);

    let samples: Vec<PgSample> = (0..3)
        .map(|_| {
            let x: Vec<f64> = (0..inputs).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mask = rng.random_range(1..=full_mask(actions));
            let allowed: Vec<usize> = (0..actions).filter(|j| mask & (1 << j) != 0).collect();
            let weights = if expected_form {
                PgWeights::AllActions((0..actions).map(|_| rng.random_range(-2.0..2.0)).collect())
            } else {
                PgWeights::Taken {
                    a: allowed[rng.random_range(0..allowed.len())],
                    weight: rng.random_range(-2.0..2.0),
                }
            };
            PgSample { x, mask, weights }
        })
        .collect();

    let analytic = policy.surrogate_grad(&samples).flat();
    let h = 1e-6;
    let mut numeric = vec![0.0; n];
    for i in 0..n {
        let mut p = params.clone();
        p[i] = params[i] + h;
        policy.net.set_params(&p);
        let up = policy.surrogate(&samples);
        p[i] = params[i] - h;
        policy.net.set_params(&p);
        let down = policy.surrogate(&samples);
        numeric[i] = (up - down) / (2.0 * h);
    }
    policy.net.set_params(&params);
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, f)| (a - f).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nf: f64 = numeric.iter().map(|f| f * f).sum::<f64>().sqrt();
    (diff / (na + nf).max(1e-12), n)
}
