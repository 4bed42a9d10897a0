use std::sync::Arc;

use probshield::envs::BuiltinEnv;
use probshield::fixtures;
use probshield::reach::{interval_iteration, IntervalConfig};
use probshield::shield::{
    rollout_lifted, rollout_shield, ProfileFamily, Shield, ShieldSession, TabularShieldPolicy, DEFAULT_CLOSURE_LIMIT,
};
use probshield::verify::{monte_carlo_safety, verify_shield_policy_exact, verify_with_oracle, Z_99};
use probshield::Mdp;

fn shield(m: &Mdp, p: f64) -> Arc<Shield> {
    let cert = interval_iteration(m, IntervalConfig::with_epsilon(1e-9)).unwrap();
    Arc::new(Shield::new(m, &cert, p, ProfileFamily::default()).unwrap())
}

fn check_random_policies(sh: &Shield, count: u64) {
    let closure = sh.reachable_levels(DEFAULT_CLOSURE_LIMIT).unwrap();
    for seed in 0..count {
        let pol = TabularShieldPolicy::random(sh.action_space(), &closure, 3, seed).unwrap();
        let (report, bracket, exact) = verify_with_oracle(sh, &pol, 1e-11, 10_000_000).unwrap();
        assert!(report.pass, "seed {seed}: {report:?}");
        assert!(report.probability <= sh.bound() + 1e-9);
        for s in 0..exact.len() {
            assert!((bracket.lower[s] - exact[s]).abs() <= 1e-9, "seed {seed} state {s}");
            assert!((bracket.upper[s] - exact[s]).abs() <= 1e-9, "seed {seed} state {s}");
        }
    }
}

#[test]
fn random_policies_respect_bound_on_fixtures() {
    check_random_policies(&shield(&fixtures::f1(), 0.3), 40);
    check_random_policies(&shield(&fixtures::f1(), 0.9), 40);
    check_random_policies(&shield(&fixtures::f2(), 0.2), 40);
}

#[test]
fn random_policies_respect_bound_on_grids() {
    for env in [BuiltinEnv::ColourBombV1, BuiltinEnv::BridgeV1] {
        let m = env.build().unwrap();
        check_random_policies(&shield(&m, env.params().safety_bound), 10);
    }
}

#[test]
fn monte_carlo_brackets_exact_value() {
    let sh = shield(&fixtures::f1(), 0.3);
    let closure = sh.reachable_levels(DEFAULT_CLOSURE_LIMIT).unwrap();
    let mut inside = 0;
    let trials = 100;
    for seed in 0..trials {
        let pol = TabularShieldPolicy::random(sh.action_space(), &closure, 3, seed).unwrap();
        let exact = verify_shield_policy_exact(&sh, &pol).unwrap().probability;
        let est = monte_carlo_safety(&sh, &pol, 2_000, seed).unwrap();
        assert_eq!(est, monte_carlo_safety(&sh, &pol, 2_000, seed).unwrap());
        if est.ci_low <= exact && exact <= est.ci_high {
            inside += 1;
        }
    }
    // a 99% interval should miss about once in a hundred trials
    assert!(inside >= 97, "{inside} of {trials} intervals hold the exact value (z = {Z_99})");
}

#[test]
fn lift_reproduces_shield_trace() {
    for (m, p) in [(fixtures::f1(), 0.3), (fixtures::f2(), 0.2), (BuiltinEnv::ColourBombV1.build().unwrap(), 0.05)] {
        let sh = shield(&m, p);
        let closure = sh.reachable_levels(DEFAULT_CLOSURE_LIMIT).unwrap();
        for seed in 0..5 {
            let pol = TabularShieldPolicy::random(sh.action_space(), &closure, 3, seed).unwrap();
            let mut session = ShieldSession::new(sh.clone(), Some(50), 0);
            let a = rollout_shield(&mut session, &pol, seed, seed + 100, 2_000).unwrap();
            let b = rollout_lifted(&sh, &pol, Some(50), seed, seed + 100, 2_000).unwrap();
            assert_eq!(a, b);
        }
    }
}
