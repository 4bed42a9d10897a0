//! Exact and statistical safety checks for shield policies, and a brute-force
//! solver for tiny constrained problems.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_sparse;
use crate::mdp::{induce_chain, Label, MarkovChain, Mdp, MemorylessPolicy, SparseDistribution, StateId};
use crate::reach::{can_reach, exact_reach};
use crate::shield::{Shield, ShieldPolicy, ShieldSession, ShieldState, DEFAULT_CLOSURE_LIMIT};

/// A report passes when the reach probability is at most `bound + PASS_TOLERANCE`.
pub const PASS_TOLERANCE: f64 = 1e-9;
/// Two-sided 99% normal quantile.
pub const Z_99: f64 = 2.5758293035489004;
pub const DEFAULT_GRID_BUDGET: f64 = 1e7;
pub const DEFAULT_DIRICHLET_SAMPLES: usize = 10_000;
/// Slack on the constraint when comparing a candidate's reach probability to `p`.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-12;

/// The finite Markov chain a memoryless shield policy induces from the
/// initial shield state. Absorbing base states stay put.
#[derive(Clone, Debug)]
pub struct InducedShieldChain {
    pub states: Vec<ShieldState>,
    pub chain: MarkovChain,
    pub rewards: Vec<f64>,
}

impl InducedShieldChain {
    pub fn index_of(&self, s: ShieldState) -> Option<usize> {
        self.states.iter().position(|x| x.key() == s.key())
    }
}

pub fn induced_shield_chain<P: ShieldPolicy + ?Sized>(
    shield: &Shield,
    policy: &P,
    limit: usize,
) -> Result<InducedShieldChain> {
    let m = shield.mdp();
    let mut index: HashMap<(usize, u64), usize> = HashMap::new();
    let mut states = vec![shield.initial()];
    index.insert(shield.initial().key(), 0);
    let mut rows: Vec<Vec<(StateId, f64)>> = Vec::new();
    let mut queue = VecDeque::from([0usize]);
    while let Some(k) = queue.pop_front() {
        let at = states[k];
        let mut acc: Vec<(ShieldState, f64)> = Vec::new();
        if m.is_absorbing(at.state) {
            acc.push((at, 1.0));
        } else {
            for (idx, w) in policy.action_distribution(at)? {
                if w == 0.0 {
                    continue;
                }
                let d = shield.decide(at, shield.decode(idx)?)?;
                for (next, p) in shield.successors(at, &d) {
                    acc.push((next, w * p));
                }
            }
        }
        let mut row: Vec<(StateId, f64)> = Vec::with_capacity(acc.len());
        for (next, p) in acc {
            let j = match index.get(&next.key()) {
                Some(&j) => j,
                None => {
                    let j = states.len();
                    if j >= limit {
                        return Err(Error::ClosureOverflow { limit });
                    }
                    index.insert(next.key(), j);
                    states.push(next);
                    queue.push_back(j);
                    j
                }
            };
            row.push((StateId(j), p));
        }
        if rows.len() <= k {
            rows.resize(k + 1, Vec::new());
        }
        rows[k] = row;
    }
    rows.resize(states.len(), Vec::new());
    let rows = rows
        .into_iter()
        .map(|r| {
            let mut merged: Vec<(StateId, f64)> = Vec::with_capacity(r.len());
            let mut r = r;
            r.sort_by_key(|e| e.0);
            for (s, p) in r {
                match merged.last_mut() {
                    Some(last) if last.0 == s => last.1 += p,
                    _ => merged.push((s, p)),
                }
            }
            // accumulated products can overshoot 1 by an ulp
            for e in &mut merged {
                e.1 = e.1.min(1.0);
            }
            SparseDistribution::new(merged)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Label> = states.iter().map(|s| m.label(s.state)).collect();
    let rewards = states.iter().map(|s| m.reward(s.state)).collect();
    Ok(InducedShieldChain {
        chain: MarkovChain::new(StateId(0), rows, labels)?,
        states,
        rewards,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    /// Exact probability of ever reaching an unsafe state from the initial shield state.
    pub probability: f64,
    pub bound: f64,
    pub pass: bool,
    pub chain_states: usize,
}

/// Solves unsafe reachability on the induced chain.
pub fn verify_shield_policy_exact<P: ShieldPolicy + ?Sized>(shield: &Shield, policy: &P) -> Result<SafetyReport> {
    let induced = induced_shield_chain(shield, policy, DEFAULT_CLOSURE_LIMIT)?;
    Ok(report_for(shield, &induced)?.0)
}

fn report_for(shield: &Shield, induced: &InducedShieldChain) -> Result<(SafetyReport, Vec<f64>)> {
    let x = exact_reach(&induced.chain, &induced.chain.unsafe_mask())?;
    let probability = x[0];
    Ok((
        SafetyReport {
            probability,
            bound: shield.bound(),
            pass: probability <= shield.bound() + PASS_TOLERANCE,
            chain_states: induced.states.len(),
        },
        x,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaBracket {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub iterations: usize,
}

impl GammaBracket {
    pub fn width(&self) -> f64 {
        self.upper
            .iter()
            .zip(&self.lower)
            .map(|(u, l)| u - l)
            .fold(0.0, f64::max)
    }
}

/// Iterates `x ← A x + b` (targets fixed at 1) from below, starting at 0, and
/// from above, starting at 1 on every state that can reach a target.
/// In-place sweeps; stops once the bracket is narrower than `tolerance`.
pub fn gamma_bracket(chain: &MarkovChain, targets: &[bool], tolerance: f64, max_iterations: usize) -> Result<GammaBracket> {
    let n = chain.state_count();
    if targets.len() != n {
        return Err(Error::InvalidArgument("target mask length mismatch".into()));
    }
    let reach = can_reach(chain, targets);
    let mut lower: Vec<f64> = targets.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    let mut upper: Vec<f64> = (0..n).map(|s| if reach[s] { 1.0 } else { 0.0 }).collect();
    let free: Vec<usize> = (0..n).filter(|&s| reach[s] && !targets[s]).collect();
    let mut iterations = 0;
    loop {
        let width = free.iter().map(|&s| upper[s] - lower[s]).fold(0.0, f64::max);
        if width <= tolerance {
            break;
        }
        if iterations >= max_iterations {
            return Err(Error::NotConverged { iterations, gap: width });
        }
        for &s in &free {
            let row = chain.row(StateId(s));
            lower[s] = row.dot(&lower);
            upper[s] = row.dot(&upper);
        }
        iterations += 1;
    }
    Ok(GammaBracket {
        lower,
        upper,
        iterations,
    })
}

/// Exact report plus the iterative bracket on the same chain.
pub fn verify_with_oracle<P: ShieldPolicy + ?Sized>(
    shield: &Shield,
    policy: &P,
    tolerance: f64,
    max_iterations: usize,
) -> Result<(SafetyReport, GammaBracket, Vec<f64>)> {
    let induced = induced_shield_chain(shield, policy, DEFAULT_CLOSURE_LIMIT)?;
    let (report, exact) = report_for(shield, &induced)?;
    let bracket = gamma_bracket(&induced.chain, &induced.chain.unsafe_mask(), tolerance, max_iterations)?;
    Ok((report, bracket, exact))
}

/// `V = R + γ P V`, the expected discounted sum of state rewards from every state.
pub fn discounted_value(chain: &MarkovChain, rewards: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("discount {gamma} outside [0, 1)")));
    }
    let n = chain.state_count();
    let mut triplets = Vec::with_capacity(n * 4);
    for s in 0..n {
        triplets.push((s, s, 1.0));
        for (t, p) in chain.row(StateId(s)).iter() {
            triplets.push((s, t.0, -gamma * p));
        }
    }
    solve_sparse(n, &triplets, rewards)
}

/// Discounted value of the lifted base-MDP policy; equals the value of the
/// shield policy on the induced chain.
pub fn lifted_value<P: ShieldPolicy + ?Sized>(shield: &Shield, policy: &P, gamma: f64) -> Result<f64> {
    let induced = induced_shield_chain(shield, policy, DEFAULT_CLOSURE_LIMIT)?;
    Ok(discounted_value(&induced.chain, &induced.rewards, gamma)?[0])
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let phat = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (phat + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (phat * (1.0 - phat) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub episodes: usize,
    pub violations: usize,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Fraction of episodes that ever reach an unsafe state, with a 99% Wilson
/// interval. Episodes run without a horizon and stop on absorption or once
/// no unsafe state is reachable any more.
pub fn monte_carlo_safety<P: ShieldPolicy + ?Sized>(
    shield: &Arc<Shield>,
    policy: &P,
    episodes: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if episodes < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 episodes, got {episodes}")));
    }
    let induced = induced_shield_chain(shield, policy, DEFAULT_CLOSURE_LIMIT)?;
    let unsafe_mask = induced.chain.unsafe_mask();
    let live = can_reach(&induced.chain, &unsafe_mask);
    let index: HashMap<(usize, u64), usize> =
        induced.states.iter().enumerate().map(|(k, s)| (s.key(), k)).collect();
    let mut session = ShieldSession::new(shield.clone(), None, seed);
    let mut policy_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut violations = 0;
    for _ in 0..episodes {
        let mut at = session.reset(None);
        loop {
            let k = index[&at.key()];
            if unsafe_mask[k] {
                violations += 1;
                break;
            }
            if !live[k] || session.is_done() {
                break;
            }
            let idx = crate::shield::sample_encoded(policy, at, &mut policy_rng)?;
            at = session.step_flat(idx)?.next;
        }
    }
    let (ci_low, ci_high) = wilson_interval(violations, episodes, Z_99);
    Ok(MonteCarloEstimate {
        episodes,
        violations,
        estimate: violations as f64 / episodes as f64,
        ci_low,
        ci_high,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcopSolution {
    pub policy: MemorylessPolicy,
    pub reach: f64,
    pub value: f64,
    pub candidates: usize,
}

/// Candidate action distributions for one state: the `1/G` grid for two
/// actions, corners plus Dirichlet samples for more.
fn state_candidates(k: usize, grid: usize, samples: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    match k {
        1 => Ok(vec![vec![1.0]]),
        2 => Ok((0..=grid)
            .map(|g| {
                let x = g as f64 / grid as f64;
                vec![x, 1.0 - x]
            })
            .collect()),
        _ => {
            let mut out: Vec<Vec<f64>> = (0..k)
                .map(|i| {
                    let mut v = vec![0.0; k];
                    v[i] = 1.0;
                    v
                })
                .collect();
            let dir = Dirichlet::new_with_size(1.0, k).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            out.extend((0..samples).map(|_| dir.sample(rng)));
            Ok(out)
        }
    }
}

/// Best stationary randomized policy meeting `P(reach unsafe) ≤ p` among a
/// grid of candidates; a lower bound on the constrained optimum.
pub fn brute_force_rcop(m: &Mdp, p: f64, gamma: f64, grid: usize, seed: u64) -> Result<RcopSolution> {
    brute_force_rcop_with(m, p, gamma, grid, DEFAULT_DIRICHLET_SAMPLES, DEFAULT_GRID_BUDGET, seed)
}

pub fn brute_force_rcop_with(
    m: &Mdp,
    p: f64,
    gamma: f64,
    grid: usize,
    samples: usize,
    budget: f64,
    seed: u64,
) -> Result<RcopSolution> {
    if grid == 0 {
        return Err(Error::InvalidArgument("grid resolution must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_state: Vec<Vec<Vec<f64>>> = m
        .states()
        .map(|s| state_candidates(m.actions(s).len(), grid, samples, &mut rng))
        .collect::<Result<_>>()?;
    let points: f64 = per_state.iter().map(|c| c.len() as f64).product();
    if points > budget {
        return Err(Error::GridBudget { points, limit: budget });
    }
    let unsafe_mask: Vec<bool> = m.states().map(|s| m.is_unsafe(s)).collect();
    let mut counter = vec![0usize; per_state.len()];
    let mut best: Option<RcopSolution> = None;
    let mut candidates = 0;
    loop {
        let rows: Vec<Vec<f64>> = counter.iter().zip(&per_state).map(|(&k, c)| c[k].clone()).collect();
        let policy = MemorylessPolicy::new(rows)?;
        let chain = induce_chain(m, &policy)?;
        let reach = exact_reach(&chain, &unsafe_mask)?[m.initial().0];
        candidates += 1;
        if reach <= p + FEASIBILITY_TOLERANCE {
            let value = discounted_value(&chain, m.rewards(), gamma)?[m.initial().0];
            if best.as_ref().map_or(true, |b| value > b.value) {
                best = Some(RcopSolution {
                    policy,
                    reach,
                    value,
                    candidates: 0,
                });
            }
        }
        // mixed-radix increment
        let mut k = 0;
        loop {
            if k == counter.len() {
                let mut sol = best.ok_or(Error::Infeasible { beta: f64::NAN, bound: p })?;
                sol.candidates = candidates;
                return Ok(sol);
            }
            counter[k] += 1;
            if counter[k] < per_state[k].len() {
                break;
            }
            counter[k] = 0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::reach::{interval_iteration, IntervalConfig};
    use crate::shield::{ConstantShieldPolicy, EncodedAction, ProfileFamily, TabularShieldPolicy};

    fn shield(m: &Mdp, p: f64, family: ProfileFamily) -> Shield {
        let cert = interval_iteration(m, IntervalConfig::with_epsilon(1e-9)).unwrap();
        Shield::new(m, &cert, p, family).unwrap()
    }

    fn flat(sh: &Shield, i: usize, j: usize, k: usize) -> ConstantShieldPolicy {
        ConstantShieldPolicy(EncodedAction::new(i, j, k).to_flat(sh.action_space()))
    }

    #[test]
    fn f2_mixed_vertex_meets_bound_exactly() {
        let sh = shield(&fixtures::f2(), 0.2, ProfileFamily::tight_only());
        let pol = flat(&sh, 0, 1, 0);
        let r = verify_shield_policy_exact(&sh, &pol).unwrap();
        assert!((r.probability - 0.2).abs() < 1e-12, "{r:?}");
        assert!(r.pass);
        let j = lifted_value(&sh, &pol, 0.5).unwrap();
        assert!((j - 0.38).abs() < 1e-12);
    }

    #[test]
    fn f2_safe_dirac() {
        let sh = shield(&fixtures::f2(), 0.2, ProfileFamily::tight_only());
        let r = verify_shield_policy_exact(&sh, &flat(&sh, 1, 1, 0)).unwrap();
        assert_eq!(r.probability, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn f1_always_b() {
        let sh = shield(&fixtures::f1(), 0.3, ProfileFamily::tight_only());
        let (r, bracket, exact) = verify_with_oracle(&sh, &flat(&sh, 1, 1, 0), 1e-12, 1_000_000).unwrap();
        assert!((r.probability - 2.0 / 7.0).abs() < 1e-9);
        assert!(r.pass);
        assert_eq!(r.chain_states, 4);
        assert!(bracket.lower[0] <= exact[0] + 1e-12 && exact[0] <= bracket.upper[0] + 1e-12);
    }

    #[test]
    fn gamma_bracket_matches_solve() {
        for seed in 0..20 {
            let chain = crate::random_models::random_chain(seed, 30);
            let targets = chain.unsafe_mask();
            let exact = exact_reach(&chain, &targets).unwrap();
            let b = gamma_bracket(&chain, &targets, 1e-11, 10_000_000).unwrap();
            for s in 0..chain.state_count() {
                assert!((exact[s] - b.lower[s]).abs() < 1e-9 && (b.upper[s] - exact[s]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn wilson() {
        let (lo, hi) = wilson_interval(0, 100_000, Z_99);
        assert_eq!(lo, 0.0);
        assert!(hi < 1e-3);
        let (lo, hi) = wilson_interval(20_000, 100_000, Z_99);
        assert!(lo < 0.2 && hi > 0.2 && hi - lo < 0.008);
    }

    #[test]
    fn monte_carlo_on_f2() {
        let sh = Arc::new(shield(&fixtures::f2(), 0.2, ProfileFamily::tight_only()));
        let est = monte_carlo_safety(&sh, &flat(&sh, 0, 1, 0), 100_000, 3).unwrap();
        assert!((est.estimate - 0.2).abs() < 0.004, "{est:?}");
        assert!(est.ci_low <= 0.2 && 0.2 <= est.ci_high);
        let safe = monte_carlo_safety(&sh, &flat(&sh, 1, 1, 0), 100_000, 3).unwrap();
        assert_eq!(safe.violations, 0);
        assert!(safe.ci_high < 1e-3);
        assert!(monte_carlo_safety(&sh, &flat(&sh, 1, 1, 0), 10, 3).is_err());
    }

    #[test]
    fn rcop_on_f2() {
        let m = fixtures::f2();
        let sol = brute_force_rcop(&m, 0.2, 0.5, 100, 0).unwrap();
        assert!((sol.value - 0.38).abs() < 1e-9);
        assert!((sol.policy.row(StateId(0))[0] - 0.4).abs() < 1e-12);
        assert!(sol.reach <= 0.2 + FEASIBILITY_TOLERANCE);
        assert!((brute_force_rcop(&m, 0.0, 0.5, 100, 0).unwrap().value - 0.3).abs() < 1e-12);
        assert!((brute_force_rcop(&m, 1.0, 0.5, 100, 0).unwrap().value - 0.5).abs() < 1e-12);
        assert!(matches!(
            brute_force_rcop_with(&m, 0.2, 0.5, 100, 10, 50.0, 0),
            Err(Error::GridBudget { .. })
        ));
    }

    #[test]
    fn random_policies_on_f1_are_safe() {
        let sh = shield(&fixtures::f1(), 0.3, ProfileFamily::default());
        let closure = sh.reachable_levels(DEFAULT_CLOSURE_LIMIT).unwrap();
        for seed in 0..50 {
            let pol = TabularShieldPolicy::random(sh.action_space(), &closure, 3, seed).unwrap();
            let r = verify_shield_policy_exact(&sh, &pol).unwrap();
            assert!(r.pass, "{seed}: {r:?}");
        }
    }
}
