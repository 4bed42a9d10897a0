//! Minimal unsafe-reachability: qualitative preprocessing, the min-Bellman
//! operator, interval iteration with directed rounding, and exact reachability
//! on Markov chains.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_sparse;
use crate::mdp::{MarkovChain, Mdp, SparseDistribution, StateId};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;

/// An inductive upper bound on the minimal unsafe-reach probability,
/// bracketed from below by `lower`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyCertificate {
    pub epsilon: f64,
    pub beta: Vec<f64>,
    pub lower: Vec<f64>,
    pub zero_states: Vec<StateId>,
    pub inductive: bool,
    pub iterations: usize,
}

impl SafetyCertificate {
    pub fn beta(&self, s: StateId) -> f64 {
        self.beta[s.0]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    /// Largest pointwise gap between the upper and lower vectors.
    pub fn max_gap(&self) -> f64 {
        max_gap(&self.beta, &self.lower)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for IntervalConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl IntervalConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }
}

/// States from which some policy avoids every unsafe state almost surely.
///
/// Greatest fixpoint: start from the safe states and repeatedly drop states
/// all of whose actions can leave the current set.
pub fn compute_zero_states(m: &Mdp) -> Vec<StateId> {
    let mask = zero_mask(m);
    m.states().filter(|s| mask[s.0]).collect()
}

pub(crate) fn zero_mask(m: &Mdp) -> Vec<bool> {
    let mut inside: Vec<bool> = m.states().map(|s| !m.is_unsafe(s)).collect();
    loop {
        let mut changed = false;
        for s in m.states() {
            if !inside[s.0] {
                continue;
            }
            let keeps = m
                .actions(s)
                .iter()
                .any(|a| a.dist.support().all(|t| inside[t.0]));
            if !keeps {
                inside[s.0] = false;
                changed = true;
            }
        }
        if !changed {
            return inside;
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Rounding {
    Nearest,
    Up,
    Down,
}

/// `Σ p·v` with an outward bound on the floating-point error.
///
/// The accumulated dot product of `n` non-negative terms differs from the exact
/// value by at most `n·u·Σ|p·v|`; we widen by `(n + 2)·2u` relative and one
/// more ulp. An exact zero (every term has a zero factor) stays zero.
#[inline]
fn directed_dot(dist: &SparseDistribution, values: &[f64], rounding: Rounding) -> f64 {
    let s = dist.dot(values);
    match rounding {
        Rounding::Nearest => s,
        Rounding::Up => {
            if s == 0.0 && dist.iter().all(|(t, p)| p == 0.0 || values[t.0] == 0.0) {
                return 0.0;
            }
            let err = (dist.len() as f64 + 2.0) * f64::EPSILON * s;
            (s + err).next_up()
        }
        Rounding::Down => {
            let err = (dist.len() as f64 + 2.0) * f64::EPSILON * s;
            (s - err).next_down().max(0.0)
        }
    }
}

#[inline]
fn bellman_state(m: &Mdp, s: StateId, values: &[f64], rounding: Rounding) -> f64 {
    if m.is_unsafe(s) {
        return 1.0;
    }
    let mut best = f64::INFINITY;
    for a in m.actions(s) {
        let v = directed_dot(&a.dist, values, rounding);
        if v < best {
            best = v;
        }
    }
    best.clamp(0.0, 1.0)
}

/// One application of the min-Bellman operator: unsafe states map to 1,
/// others to `min_a Σ P(s,a,s')·beta(s')`.
pub fn bellman_min_apply(m: &Mdp, beta: &[f64]) -> Vec<f64> {
    m.states()
        .map(|s| bellman_state(m, s, beta, Rounding::Nearest))
        .collect()
}

/// Upward-rounded min-Bellman operator; an upper bound on the exact result.
pub fn bellman_min_apply_upward(m: &Mdp, beta: &[f64]) -> Vec<f64> {
    m.states()
        .map(|s| bellman_state(m, s, beta, Rounding::Up))
        .collect()
}

/// Minimizing action per state; ties go to the lowest index.
pub fn bellman_argmin(m: &Mdp, beta: &[f64]) -> Vec<usize> {
    m.states()
        .map(|s| {
            let mut best = (0, f64::INFINITY);
            for (k, a) in m.actions(s).iter().enumerate() {
                let v = a.dist.dot(beta);
                if v < best.1 {
                    best = (k, v);
                }
            }
            best.0
        })
        .collect()
}

fn max_gap(upper: &[f64], lower: &[f64]) -> f64 {
    upper
        .iter()
        .zip(lower)
        .map(|(u, l)| u - l)
        .fold(0.0, f64::max)
}

/// Sweeps between attempts to lift the lower iterate by policy iteration.
const LOWER_REFRESH: usize = 256;
const POLICY_ROUNDS: usize = 64;
/// Per-step margins subtracted from a policy value before it is tried as a
/// lower bound. Large margins survive rounding, small ones survive near-ties.
const LOWER_MARGINS: [f64; 5] = [1e-10, 1e-12, 1e-14, 1e-16, 1e-18];

/// Solves `x = P_σ x + b` over the free states, where `b` collects the
/// one-step mass into pinned states weighted by `pinned_value`, plus
/// `constant` per step. Every stationary policy leaves the free states almost
/// surely (an end component among them would avoid the unsafe states and so
/// belong to the zero states), hence the system is non-singular.
fn solve_policy(
    m: &Mdp,
    sigma: &[usize],
    pinned: &[Option<f64>],
    free: &[StateId],
    pinned_value: impl Fn(f64) -> f64,
    constant: f64,
) -> Result<Vec<f64>> {
    let mut col = vec![usize::MAX; m.state_count()];
    for (r, s) in free.iter().enumerate() {
        col[s.0] = r;
    }
    let mut triplets = Vec::new();
    let mut rhs = vec![constant; free.len()];
    for (r, s) in free.iter().enumerate() {
        triplets.push((r, r, 1.0));
        for (t, p) in m.actions(*s)[sigma[s.0]].dist.iter() {
            match pinned[t.0] {
                Some(v) => rhs[r] += p * pinned_value(v),
                None => triplets.push((r, col[t.0], -p)),
            }
        }
    }
    let x = solve_sparse(free.len(), &triplets, &rhs)?;
    let mut out = vec![0.0; m.state_count()];
    for (r, s) in free.iter().enumerate() {
        out[s.0] = x[r];
    }
    Ok(out)
}

/// Policy iteration started from the greedy policy of `upper`. Returns the
/// final policy and its reach probabilities.
fn policy_iteration(
    m: &Mdp,
    upper: &[f64],
    pinned: &[Option<f64>],
    free: &[StateId],
) -> Result<(Vec<usize>, Vec<f64>)> {
    let evaluate = |sigma: &[usize]| -> Result<Vec<f64>> {
        let mut v = solve_policy(m, sigma, pinned, free, |v| v, 0.0)?;
        for s in m.states() {
            v[s.0] = pinned[s.0].unwrap_or(v[s.0].clamp(0.0, 1.0));
        }
        Ok(v)
    };
    let mut sigma = bellman_argmin(m, upper);
    let mut values = evaluate(&sigma)?;
    for _ in 0..POLICY_ROUNDS {
        let mut changed = false;
        for s in free {
            let acts = m.actions(*s);
            let mut best = (sigma[s.0], acts[sigma[s.0]].dist.dot(&values));
            for (k, a) in acts.iter().enumerate() {
                let v = a.dist.dot(&values);
                if v < best.1 - 1e-15 {
                    best = (k, v);
                }
            }
            if best.0 != sigma[s.0] {
                sigma[s.0] = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        values = evaluate(&sigma)?;
    }
    Ok((sigma, values))
}

fn is_post_fixpoint_at(m: &Mdp, s: StateId, lower: &[f64]) -> bool {
    lower[s.0] <= bellman_state(m, s, lower, Rounding::Down)
}

/// Tries to raise the lower iterate to a near-optimal policy value.
///
/// Step-bounded iteration from below can stall for a very long time when a
/// policy can postpone reaching the unsafe states almost indefinitely. Once
/// the zero states are pinned the fixpoint is unique, so any `L` with
/// `L ≤ Λ(L)` under downward rounding and `L = 0` on zero states is a lower
/// bound. Candidates are `V − η·T` for the policy-iteration value `V` and
/// the expected number of steps `T` before that policy leaves the free
/// states, which gives every state a margin of `η` on its own action. Each is
/// merged with the current iterate, and entries that fail the check fall
/// back to the iterate until the whole vector passes.
fn lift_lower(
    m: &Mdp,
    upper: &[f64],
    lower: &[f64],
    pinned: &[Option<f64>],
    free: &[StateId],
) -> Option<Vec<f64>> {
    let (sigma, values) = policy_iteration(m, upper, pinned, free).ok()?;
    let steps = solve_policy(m, &sigma, pinned, free, |_| 0.0, 1.0).ok()?;
    let mut best = lower.to_vec();
    for eta in LOWER_MARGINS {
        let mut cand = lower.to_vec();
        for s in free {
            cand[s.0] = (values[s.0] - eta * steps[s.0]).max(lower[s.0]).min(1.0);
        }
        loop {
            let bad: Vec<StateId> = free
                .iter()
                .copied()
                .filter(|&s| cand[s.0] > lower[s.0] && !is_post_fixpoint_at(m, s, &cand))
                .collect();
            if bad.is_empty() {
                break;
            }
            for s in bad {
                cand[s.0] = lower[s.0];
            }
        }
        // the pointwise max of two such vectors passes the check as well
        for (b, c) in best.iter_mut().zip(&cand) {
            *b = b.max(*c);
        }
    }
    Some(best)
}

/// Checks that `lower` is a certified lower bound: 0 on the zero states and
/// `lower ≤ Λ(lower)` on the rest under downward rounding.
pub fn certify_lower(m: &Mdp, lower: &[f64]) -> bool {
    if lower.len() != m.state_count() || lower.iter().any(|b| !(0.0..=1.0).contains(b)) {
        return false;
    }
    let zero = zero_mask(m);
    m.states().all(|s| {
        if m.is_unsafe(s) {
            true
        } else if zero[s.0] {
            lower[s.0] == 0.0
        } else {
            is_post_fixpoint_at(m, s, lower)
        }
    })
}

/// Interval iteration from below (`β_0`) and above (1, with the zero states
/// pinned to 0). The upper sweep rounds up and the lower sweep rounds down, and
/// both rounded operators are monotone, so the upper iterates decrease and stay
/// pre-fixpoints of the exact operator. Every few hundred sweeps the lower
/// iterate may be lifted to a certified post-fixpoint (see [`certify_lower`]).
pub fn interval_iteration(m: &Mdp, cfg: IntervalConfig) -> Result<SafetyCertificate> {
    if !(cfg.epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {}",
            cfg.epsilon
        )));
    }
    let n = m.state_count();
    let zero = zero_mask(m);
    let pinned: Vec<Option<f64>> = m
        .states()
        .map(|s| {
            if m.is_unsafe(s) {
                Some(1.0)
            } else if zero[s.0] {
                Some(0.0)
            } else {
                None
            }
        })
        .collect();

    let mut lower: Vec<f64> = pinned.iter().map(|p| p.unwrap_or(0.0)).collect();
    let mut upper: Vec<f64> = pinned.iter().map(|p| p.unwrap_or(1.0)).collect();
    let mut next_lower = lower.clone();
    let mut next_upper = upper.clone();
    let free: Vec<StateId> = m.states().filter(|s| pinned[s.0].is_none()).collect();

    let mut iterations = 0;
    loop {
        let gap = max_gap(&upper, &lower);
        if gap <= cfg.epsilon {
            break;
        }
        if iterations >= cfg.max_iterations {
            return Err(Error::NotConverged { iterations, gap });
        }
        for &s in &free {
            next_lower[s.0] = bellman_state(m, s, &lower, Rounding::Down);
            next_upper[s.0] = bellman_state(m, s, &upper, Rounding::Up);
        }
        std::mem::swap(&mut lower, &mut next_lower);
        std::mem::swap(&mut upper, &mut next_upper);
        iterations += 1;
        if iterations % LOWER_REFRESH == 0 {
            if let Some(lifted) = lift_lower(m, &upper, &lower, &pinned, &free) {
                lower = lifted;
            }
        }
    }
    debug_assert_eq!(upper.len(), n);

    let inductive = certify_inductive(m, &upper);
    if !inductive {
        return Err(Error::NotInductive);
    }
    Ok(SafetyCertificate {
        epsilon: cfg.epsilon,
        beta: upper,
        lower,
        zero_states: m.states().filter(|s| zero[s.0]).collect(),
        inductive,
        iterations,
    })
}

/// Checks `beta = 1` on unsafe states and `Λ(beta) ≤ beta` under upward rounding.
/// Any vector passing this is a pointwise upper bound on the minimal reach probability.
pub fn certify_inductive(m: &Mdp, beta: &[f64]) -> bool {
    if beta.len() != m.state_count() || beta.iter().any(|b| !(0.0..=1.0).contains(b)) {
        return false;
    }
    m.states().all(|s| {
        if m.is_unsafe(s) {
            beta[s.0] == 1.0
        } else {
            bellman_state(m, s, beta, Rounding::Up) <= beta[s.0]
        }
    })
}

/// States of `chain` from which some target is reachable with positive probability.
pub fn can_reach(chain: &MarkovChain, targets: &[bool]) -> Vec<bool> {
    let n = chain.state_count();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (s, row) in chain.rows().iter().enumerate() {
        for t in row.support() {
            preds[t.0].push(s);
        }
    }
    let mut seen = targets.to_vec();
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| targets[s]).collect();
    while let Some(t) = queue.pop_front() {
        for &s in &preds[t] {
            if !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
    }
    seen
}

/// Probability of eventually reaching `targets` from every state of `chain`.
///
/// States that cannot reach a target are fixed to 0 first; the remaining
/// system `x = A x + b` is then solved directly.
pub fn exact_reach(chain: &MarkovChain, targets: &[bool]) -> Result<Vec<f64>> {
    let n = chain.state_count();
    if targets.len() != n {
        return Err(Error::InvalidArgument("target mask length mismatch".into()));
    }
    let reach = can_reach(chain, targets);
    let mut col = vec![usize::MAX; n];
    let mut unknowns = Vec::new();
    for s in 0..n {
        if reach[s] && !targets[s] {
            col[s] = unknowns.len();
            unknowns.push(s);
        }
    }
    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; unknowns.len()];
    for (r, &s) in unknowns.iter().enumerate() {
        triplets.push((r, r, 1.0));
        for (t, p) in chain.row(StateId(s)).iter() {
            if targets[t.0] {
                rhs[r] += p;
            } else if col[t.0] != usize::MAX {
                triplets.push((r, col[t.0], -p));
            }
        }
    }
    let solved = solve_sparse(unknowns.len(), &triplets, &rhs)?;
    let mut x: Vec<f64> = targets.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    for (r, &s) in unknowns.iter().enumerate() {
        x[s] = solved[r].clamp(0.0, 1.0);
    }
    Ok(x)
}
