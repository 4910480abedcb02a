//! Environment rewards against a direct re-implementation of the reward
//! formulas.

use prefinfer_core::datahub::synthesize;
use prefinfer_core::env::{reset, step, Action, EnvConfig, RewardVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line oracle: no state machine, just the formulas.
fn oracle(price: &[f64], renewable: &[f64], background: &[f64], runs: &[bool]) -> (f64, f64) {
    let mut cost = 0.0;
    let mut comfort = 0.0;
    let mut remaining = 2u32;
    for h in 0..24 {
        let on = runs[h] && remaining > 0;
        let p_s = if on { 1.0 } else { 0.0 };
        let draw = p_s + background[h] - renewable[h];
        if draw > 0.0 {
            cost += -10.0 * price[h] * draw;
        }
        if on && h <= 6 {
            comfort += remaining as f64;
        }
        if on {
            remaining -= 1;
        }
    }
    (cost, comfort)
}

#[test]
fn ten_random_action_sequences() {
    let window = synthesize(7, 1);
    let config = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..10 {
        let runs: Vec<bool> = (0..24).map(|_| rng.gen_bool(0.15)).collect();
        let mut state = reset(&window, 0, &config).unwrap();
        let mut total = RewardVector::ZERO;
        for &r in &runs {
            let action = if r { Action::Run } else { Action::Idle };
            let out = step(&state, action, &window, 0, &config).unwrap();
            total += out.reward;
            state = out.next;
        }
        let (cost, comfort) = oracle(&window.price, &window.renewable, &window.background, &runs);
        assert!((total.cost - cost).abs() <= 1e-12, "seq {k}: {} vs {cost}", total.cost);
        assert!((total.comfort - comfort).abs() <= 1e-12, "seq {k}");
    }
}

#[test]
fn every_two_hour_schedule() {
    let window = synthesize(3, 1);
    let config = EnvConfig::default();
    for a in 0..24 {
        for b in a + 1..24 {
            let runs: Vec<bool> = (0..24).map(|h| h == a || h == b).collect();
            let traj = prefinfer_core::env::simulate(&window, &config, |_, s| {
                if runs[s.hour_of_day as usize] {
                    Action::Run
                } else {
                    Action::Idle
                }
            })
            .unwrap();
            let (cost, comfort) = oracle(&window.price, &window.renewable, &window.background, &runs);
            assert!((traj.reward.cost - cost).abs() <= 1e-12);
            assert_eq!(traj.reward.comfort, comfort);
        }
    }
}
