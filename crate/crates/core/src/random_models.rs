//! Seeded random models for property tests, benchmarks and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::{Action, Label, MarkovChain, Mdp, SparseDistribution, StateId};

fn random_row(rng: &mut ChaCha8Rng, n: usize) -> SparseDistribution {
    let k = rng.gen_range(1..=3.min(n));
    let mut targets: Vec<usize> = Vec::with_capacity(k);
    while targets.len() < k {
        let t = rng.gen_range(0..n);
        if !targets.contains(&t) {
            targets.push(t);
        }
    }
    let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    SparseDistribution::from_unchecked(
        targets
            .into_iter()
            .zip(weights)
            .map(|(t, w)| (StateId(t), w / total))
            .collect(),
    )
}

/// A random MDP with `2..=max_states` states and `1..=max_actions` actions per
/// state. Roughly one state in seven is unsafe; half of those are absorbing.
pub fn random_mdp(seed: u64, max_states: usize, max_actions: usize) -> Mdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_states.max(2));
    let labels: Vec<Label> = (0..n)
        .map(|_| if rng.gen_bool(0.15) { Label::Unsafe } else { Label::Safe })
        .collect();
    let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let actions = (0..n)
        .map(|s| {
            if labels[s] == Label::Unsafe && rng.gen_bool(0.5) {
                return vec![Action::new("stay", SparseDistribution::dirac(StateId(s)))];
            }
            let k = rng.gen_range(1..=max_actions.max(1));
            (0..k)
                .map(|a| Action::new(format!("a{a}"), random_row(&mut rng, n)))
                .collect()
        })
        .collect();
    Mdp::new(StateId(0), labels, rewards, actions).expect("generated model is valid")
}

/// A random labelled Markov chain with `2..=max_states` states.
pub fn random_chain(seed: u64, max_states: usize) -> MarkovChain {
    let m = random_mdp(seed, max_states, 1);
    let rows = m.states().map(|s| m.actions(s)[0].dist.clone()).collect();
    MarkovChain::new(m.initial(), rows, m.labels().to_vec()).expect("generated chain is valid")
}
