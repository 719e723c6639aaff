mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skyshield_core::energy::{self, AircraftParams};
use skyshield_core::geometry::Sector;
use skyshield_core::planner::{FaultConfig, InjectedFault};
use skyshield_core::replay::ReplayBuffer;
use skyshield_core::rl::safety_value::estimate_safety_value;
use skyshield_core::world::{sample_in_sector, GridConfig};

#[test]
fn hover_terms_match_hand_computation() {
    let p = AircraftParams::default();
    let t = energy::hover_terms(&p);
    assert!(rel(t.blade_profile, BLADE_PROFILE_W) < 1e-12);
    assert!(rel(t.induced, INDUCED_W) < 1e-12);
    assert!(rel(energy::hover_power(&p), HOVER_W) < 1e-12);
    assert!(rel(energy::kwh_per_meter(&p), KWH_PER_M) < 1e-12);
}

#[test]
fn policy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..100 {
        let (err, dim) = policy_gradient_fd_error(&mut rng, trial % 2 == 1);
        assert!(dim <= 64);
        assert!(err < 1e-4, "trial {trial}: relative error {err}");
    }
}

#[test]
fn chain_cost_value_matches_dynamic_programming() {
    let chain = Chain::example();
    for (gamma, seed) in [(0.5, 1), (0.9, 2), (0.99, 3)] {
        let exact = chain.exact_v0(gamma);
        let est = estimate_safety_value(&chain, 0, 20_000, 2000, gamma, seed);
        let z = (est.mean - exact).abs() / est.std_err;
        assert!(z <= 3.0, "gamma {gamma}: {} vs {exact} ({z} SE)", est.mean);
    }
}

#[test]
fn uniform_replay_sampling() {
    let mut buf = ReplayBuffer::new(10).unwrap();
    (0..25).for_each(|i| buf.push(i));
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut hits = [0u32; 25];
    let draws = 20_000;
    for _ in 0..draws {
        for &i in buf.sample_minibatch(3, &mut rng).unwrap() {
            hits[i] += 1;
        }
    }
    assert!(hits[..15].iter().all(|&h| h == 0));
    // each retained entry appears with probability 3/10
    let p = 0.3;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    for &h in &hits[15..] {
        assert!((h as f64 - draws as f64 * p).abs() < 4.0 * sd, "{h}");
    }
}

#[test]
fn east_wedge_centroid() {
    let grid = GridConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 40_000;
    let (mut sx, mut sy) = (0.0, 0.0);
    for _ in 0..n {
        let p = sample_in_sector(&mut rng, Sector::East, &grid);
        assert!(p.x > 0.0 && p.y.abs() <= p.x && p.x <= 500.0);
        sx += p.x;
        sy += p.y;
    }
    let (cx, cy) = (sx / n as f64, sy / n as f64);
    // triangle (0,0), (500,500), (500,-500); per-coordinate sd ≈ 118 and 204
    assert!((cx - 1000.0 / 3.0).abs() < 3.0, "{cx}");
    assert!(cy.abs() < 5.0, "{cy}");
}

#[test]
fn fault_shares_follow_rates() {
    let cfg = FaultConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 200_000;
    let mut counts = [0u32; 4];
    let mut none = 0;
    for _ in 0..n {
        match cfg.classify(rand::Rng::random(&mut rng)) {
            Some(f) => counts[f as usize] += 1,
            None => none += 1,
        }
    }
    for (i, r) in cfg.rates().iter().enumerate() {
        let sd = (n as f64 * r * (1.0 - r)).sqrt();
        assert!((counts[i] as f64 - n as f64 * r).abs() < 4.0 * sd, "{}", InjectedFault::ALL[i]);
    }
    let total: f64 = cfg.rates().iter().sum();
    assert!((none as f64 / n as f64 - (1.0 - total)).abs() < 0.005);
}
