//! The shielded MDP: states `(s, q)` carry a remaining risk budget `q`, and
//! every step picks an admissible mixture of base actions together with the
//! budgets handed to the successors.
//!
//! An encoded action `(i, j, profile)` selects the successor levels through an
//! [`AlphaProfile`] and a mixture through [`g_encode`]. Flattened, it is
//! `i + d·j + d²·profile`.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{alpha_action_values, enumerate_vertices, feasible, g_encode, AlphaMap};
use crate::mdp::{pad_actions, Mdp, StateId};
use crate::reach::{certify_inductive, SafetyCertificate};

pub const DEFAULT_SLACK_STEPS: u32 = 4;
pub const DEFAULT_CLOSURE_LIMIT: usize = 1_000_000;
/// Slack allowed on the live budget check `Σ v_a c_a ≤ q`.
pub const BUDGET_TOLERANCE: f64 = 1e-12;

/// Rule assigning a level to every successor state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AlphaProfile {
    /// `α = β`.
    Tight,
    /// `α = β + (k/steps)·(1 − β)`.
    UniformSlack { k: u32, steps: u32 },
}

impl AlphaProfile {
    pub fn level(self, beta: f64) -> f64 {
        match self {
            AlphaProfile::Tight => beta,
            AlphaProfile::UniformSlack { k, steps } if k >= steps => 1.0,
            AlphaProfile::UniformSlack { k, steps } => {
                (beta + (k as f64 / steps as f64) * (1.0 - beta)).clamp(beta, 1.0)
            }
        }
    }

    pub fn name(self) -> String {
        match self {
            AlphaProfile::Tight => "tight".into(),
            AlphaProfile::UniformSlack { k, steps } => format!("slack-{k}/{steps}"),
        }
    }
}

/// Ordered list of profiles; index 0 is always [`AlphaProfile::Tight`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileFamily {
    profiles: Vec<AlphaProfile>,
}

impl ProfileFamily {
    pub const TIGHT: usize = 0;

    pub fn new(profiles: Vec<AlphaProfile>) -> Result<Self> {
        if profiles.first() != Some(&AlphaProfile::Tight) {
            return Err(Error::InvalidArgument(
                "profile family must start with the tight profile".into(),
            ));
        }
        for p in &profiles[1..] {
            match *p {
                AlphaProfile::UniformSlack { k, steps } if k >= 1 && k <= steps => {}
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "invalid extra profile {other:?}"
                    )))
                }
            }
        }
        Ok(Self { profiles })
    }

    pub fn tight_only() -> Self {
        Self {
            profiles: vec![AlphaProfile::Tight],
        }
    }

    /// Tight plus `uniform-slack-k` for `k = 1..=steps`.
    pub fn uniform_slack(steps: u32) -> Self {
        let mut profiles = vec![AlphaProfile::Tight];
        profiles.extend((1..=steps).map(|k| AlphaProfile::UniformSlack { k, steps }));
        Self { profiles }
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<AlphaProfile> {
        self.profiles.get(id).copied()
    }

    pub fn profiles(&self) -> &[AlphaProfile] {
        &self.profiles
    }
}

impl Default for ProfileFamily {
    fn default() -> Self {
        Self::uniform_slack(DEFAULT_SLACK_STEPS)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShieldState {
    pub state: StateId,
    pub level: f64,
}

impl ShieldState {
    pub fn new(state: StateId, level: f64) -> Self {
        Self { state, level }
    }

    /// Hashable key. Levels come from a finite set of deterministic
    /// computations, so bitwise identity is the right equality.
    pub fn key(self) -> (usize, u64) {
        (self.state.0, self.level.to_bits())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodedAction {
    pub i: usize,
    pub j: usize,
    pub profile: usize,
}

impl EncodedAction {
    pub fn new(i: usize, j: usize, profile: usize) -> Self {
        Self { i, j, profile }
    }

    /// Mixed-radix decoding: `(idx mod d, (idx / d) mod d, idx / d²)`.
    pub fn from_flat(idx: usize, space: ActionSpace) -> Result<Self> {
        if idx >= space.size() {
            return Err(Error::ActionOutOfRange(idx));
        }
        let d = space.degree;
        Ok(Self {
            i: idx % d,
            j: (idx / d) % d,
            profile: idx / (d * d),
        })
    }

    pub fn to_flat(self, space: ActionSpace) -> usize {
        let d = space.degree;
        self.i + d * self.j + d * d * self.profile
    }
}

/// Shape of the encoded action space: `degree² · profiles` actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub degree: usize,
    pub profiles: usize,
}

impl ActionSpace {
    pub fn size(self) -> usize {
        self.degree * self.degree * self.profiles
    }
}

/// What the shield does with one encoded action at one shield state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decision {
    pub requested_profile: usize,
    /// Profile actually used; differs from the request after a fallback.
    pub profile: usize,
    pub fell_back: bool,
    pub costs: Vec<f64>,
    pub mixture: Vec<f64>,
    pub expected_level: f64,
}

impl Decision {
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.mixture.iter().copied().enumerate().filter(|&(_, w)| w > 0.0)
    }
}

/// The shielded MDP built from a certificate and a safety bound.
#[derive(Clone, Debug)]
pub struct Shield {
    mdp: Mdp,
    beta: Vec<f64>,
    bound: f64,
    family: ProfileFamily,
    degree: usize,
}

impl Shield {
    /// Checks the certificate, the bound and feasibility at the initial state,
    /// then pads the model to a uniform action count.
    pub fn new(m: &Mdp, cert: &SafetyCertificate, bound: f64, family: ProfileFamily) -> Result<Self> {
        if !(0.0..=1.0).contains(&bound) {
            return Err(Error::InvalidArgument(format!("safety bound {bound} outside [0, 1]")));
        }
        if cert.beta.len() != m.state_count() {
            return Err(Error::InvalidArgument(format!(
                "certificate covers {} states, model has {}",
                cert.beta.len(),
                m.state_count()
            )));
        }
        if !cert.inductive || !certify_inductive(m, &cert.beta) {
            return Err(Error::NotInductive);
        }
        let b0 = cert.beta(m.initial());
        if b0 > bound {
            return Err(Error::Infeasible { beta: b0, bound });
        }
        let degree = m.max_degree();
        Ok(Self {
            mdp: pad_actions(m, degree)?,
            beta: cert.beta.clone(),
            bound,
            family,
            degree,
        })
    }

    /// The padded model the shield acts on.
    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn family(&self) -> &ProfileFamily {
        &self.family
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn action_space(&self) -> ActionSpace {
        ActionSpace {
            degree: self.degree,
            profiles: self.family.len(),
        }
    }

    pub fn initial(&self) -> ShieldState {
        ShieldState::new(self.mdp.initial(), self.bound)
    }

    /// Level handed to successor `next` under profile `profile`.
    pub fn next_level(&self, profile: usize, next: StateId) -> f64 {
        let b = self.beta[next.0];
        let p = self.family.get(profile).unwrap_or(AlphaProfile::Tight);
        p.level(b).clamp(b, 1.0)
    }

    /// Levels for every successor of `s` under `profile`.
    pub fn alpha(&self, s: StateId, profile: usize) -> AlphaMap {
        let entries = self
            .mdp
            .actions(s)
            .iter()
            .flat_map(|a| a.dist.support())
            .map(|t| (t, self.next_level(profile, t)))
            .collect();
        AlphaMap::new(entries)
    }

    pub fn decode(&self, idx: usize) -> Result<EncodedAction> {
        EncodedAction::from_flat(idx, self.action_space())
    }

    /// Resolves an encoded action at `at` into a mixture of base actions.
    ///
    /// An infeasible profile falls back to the tight one, which is feasible
    /// whenever `q ≥ β(s)` because `β` is inductive.
    pub fn decide(&self, at: ShieldState, action: EncodedAction) -> Result<Decision> {
        let space = self.action_space();
        if action.i >= space.degree || action.j >= space.degree || action.profile >= space.profiles {
            return Err(Error::ActionOutOfRange(action.to_flat(space)));
        }
        let mut profile = action.profile;
        let mut coeffs = alpha_action_values(&self.mdp, at.state, &self.alpha(at.state, profile), at.level)?;
        if !feasible(&coeffs) && profile != ProfileFamily::TIGHT {
            log::debug!(
                "profile {} infeasible at ({}, {}), using tight",
                profile,
                at.state,
                at.level
            );
            profile = ProfileFamily::TIGHT;
            coeffs = alpha_action_values(&self.mdp, at.state, &self.alpha(at.state, profile), at.level)?;
        }
        if !feasible(&coeffs) {
            return Err(Error::InvariantViolated(format!(
                "level {} below the certified bound {} at state {}",
                at.level, self.beta[at.state.0], at.state
            )));
        }
        let vertices = enumerate_vertices(&coeffs)?;
        let mixture = g_encode(&coeffs, &vertices, action.i, action.j)?;
        let expected_level = coeffs.expected_level(&mixture);
        Ok(Decision {
            requested_profile: action.profile,
            profile,
            fell_back: profile != action.profile,
            costs: coeffs.costs,
            mixture,
            expected_level,
        })
    }

    /// Successor shield states of `at` under `decision`, merged by key.
    pub fn successors(&self, at: ShieldState, decision: &Decision) -> Vec<(ShieldState, f64)> {
        let mut out: Vec<(ShieldState, f64)> = Vec::new();
        let acts = self.mdp.actions(at.state);
        for (a, w) in decision.support() {
            for (t, p) in acts[a].dist.iter() {
                let next = ShieldState::new(t, self.next_level(decision.profile, t));
                match out.iter_mut().find(|(s, _)| s.key() == next.key()) {
                    Some(e) => e.1 += w * p,
                    None => out.push((next, w * p)),
                }
            }
        }
        out
    }

    /// Every shield state reachable from the initial one under any encoded
    /// action. Absorbing base states are not expanded: episodes end there.
    pub fn reachable_levels(&self, limit: usize) -> Result<LevelClosure> {
        let mut closure = LevelClosure::default();
        let mut queue = VecDeque::new();
        closure.insert(self.initial());
        queue.push_back(self.initial());
        let size = self.action_space().size();
        while let Some(at) = queue.pop_front() {
            if self.mdp.is_absorbing(at.state) {
                continue;
            }
            for idx in 0..size {
                let d = self.decide(at, self.decode(idx)?)?;
                for (next, _) in self.successors(at, &d) {
                    if closure.insert(next) {
                        if closure.len() > limit {
                            return Err(Error::ClosureOverflow { limit });
                        }
                        queue.push_back(next);
                    }
                }
            }
        }
        Ok(closure)
    }
}

/// A finite, indexed set of shield states.
#[derive(Clone, Debug, Default)]
pub struct LevelClosure {
    states: Vec<ShieldState>,
    index: HashMap<(usize, u64), usize>,
}

impl LevelClosure {
    /// Returns true if `s` was not present.
    pub fn insert(&mut self, s: ShieldState) -> bool {
        if self.index.contains_key(&s.key()) {
            return false;
        }
        self.index.insert(s.key(), self.states.len());
        self.states.push(s);
        true
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[ShieldState] {
        &self.states
    }

    pub fn index_of(&self, s: ShieldState) -> Option<usize> {
        self.index.get(&s.key()).copied()
    }

    /// Sorted distinct levels recorded for base state `s`.
    pub fn levels(&self, s: StateId) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .states
            .iter()
            .filter(|x| x.state == s)
            .map(|x| x.level)
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }
}

/// Index `k` with `u < Σ_{≤k} w`, skipping zero weights; the last positive
/// weight absorbs rounding.
pub(crate) fn sample_index<I: IntoIterator<Item = f64>>(weights: I, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (k, w) in weights.into_iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub requested_profile: usize,
    pub profile: usize,
    pub fell_back: bool,
    pub mixture: Vec<f64>,
    pub base_action: usize,
    pub expected_level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepOutcome {
    pub next: ShieldState,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub diagnostics: StepDiagnostics,
}

/// Samples one shield transition: a base action from the mixture, then a
/// successor. Both draws are consumed even when the outcome is forced.
pub(crate) fn sample_transition(
    shield: &Shield,
    at: ShieldState,
    decision: &Decision,
    rng: &mut impl Rng,
) -> (usize, StateId) {
    let a = sample_index(decision.mixture.iter().copied(), rng.gen::<f64>());
    let dist = &shield.mdp.actions(at.state)[a].dist;
    let k = sample_index(dist.iter().map(|(_, p)| p), rng.gen::<f64>());
    (a, dist.entries()[k].0)
}

/// A reset/step environment over the shielded MDP.
#[derive(Clone, Debug)]
pub struct ShieldSession {
    shield: Arc<Shield>,
    rng: ChaCha8Rng,
    current: ShieldState,
    steps: usize,
    episode_length: Option<usize>,
    done: bool,
}

impl ShieldSession {
    pub fn new(shield: Arc<Shield>, episode_length: Option<usize>, seed: u64) -> Self {
        let current = shield.initial();
        Self {
            shield,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current,
            steps: 0,
            episode_length,
            done: false,
        }
    }

    pub fn shield(&self) -> &Shield {
        &self.shield
    }

    pub fn action_space(&self) -> ActionSpace {
        self.shield.action_space()
    }

    pub fn state(&self) -> ShieldState {
        self.current
    }

    /// `(state index, level)`.
    pub fn observation(&self) -> (usize, f64) {
        (self.current.state.0, self.current.level)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Starts a new episode. With a seed the random stream restarts; without
    /// one it continues.
    pub fn reset(&mut self, seed: Option<u64>) -> ShieldState {
        if let Some(seed) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(seed);
        }
        self.current = self.shield.initial();
        self.steps = 0;
        self.done = self.shield.mdp.is_absorbing(self.current.state);
        self.current
    }

    pub fn step_flat(&mut self, idx: usize) -> Result<StepOutcome> {
        let action = self.shield.decode(idx)?;
        self.step(action)
    }

    pub fn step(&mut self, action: EncodedAction) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Terminated);
        }
        let at = self.current;
        let decision = self.shield.decide(at, action)?;
        if decision.expected_level > at.level + BUDGET_TOLERANCE {
            return Err(Error::InvariantViolated(format!(
                "expected next level {} exceeds budget {} at state {}",
                decision.expected_level, at.level, at.state
            )));
        }
        let (base_action, next_state) = sample_transition(&self.shield, at, &decision, &mut self.rng);
        let next = ShieldState::new(next_state, self.shield.next_level(decision.profile, next_state));
        if next.level < self.shield.beta[next_state.0] {
            return Err(Error::InvariantViolated(format!(
                "level {} below certified bound at state {}",
                next.level, next_state
            )));
        }
        self.current = next;
        self.steps += 1;
        let terminated = self.shield.mdp.is_absorbing(next_state);
        let truncated = !terminated && self.episode_length.is_some_and(|h| self.steps >= h);
        self.done = terminated || truncated;
        Ok(StepOutcome {
            next,
            reward: self.shield.mdp.reward(next_state),
            terminated,
            truncated,
            diagnostics: StepDiagnostics {
                requested_profile: decision.requested_profile,
                profile: decision.profile,
                fell_back: decision.fell_back,
                mixture: decision.mixture,
                base_action,
                expected_level: decision.expected_level,
            },
        })
    }
}

/// A memoryless policy on the shielded MDP.
pub trait ShieldPolicy {
    /// Distribution over flat encoded actions at `at`.
    fn action_distribution(&self, at: ShieldState) -> Result<Vec<(usize, f64)>>;
}

/// Draws one flat encoded action from `policy` with a single uniform draw.
pub fn sample_encoded<P: ShieldPolicy + ?Sized>(
    policy: &P,
    at: ShieldState,
    rng: &mut impl Rng,
) -> Result<usize> {
    let dist = policy.action_distribution(at)?;
    let k = sample_index(dist.iter().map(|e| e.1), rng.gen::<f64>());
    Ok(dist[k].0)
}

/// Plays the same encoded action everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantShieldPolicy(pub usize);

impl ShieldPolicy for ConstantShieldPolicy {
    fn action_distribution(&self, _: ShieldState) -> Result<Vec<(usize, f64)>> {
        Ok(vec![(self.0, 1.0)])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub state: StateId,
    pub level: f64,
    pub actions: Vec<(usize, f64)>,
}

/// A table of encoded-action distributions over a finite set of shield states.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularShieldPolicy {
    space: ActionSpace,
    rows: HashMap<(usize, u64), Vec<(usize, f64)>>,
    entries: Vec<PolicyEntry>,
}

#[derive(Serialize, Deserialize)]
struct PolicyDocument {
    degree: usize,
    profiles: usize,
    entries: Vec<PolicyEntry>,
}

impl TabularShieldPolicy {
    pub fn new(space: ActionSpace, entries: Vec<PolicyEntry>) -> Result<Self> {
        let mut rows = HashMap::new();
        for e in &entries {
            let total: f64 = e.actions.iter().map(|a| a.1).sum();
            if e.actions.is_empty()
                || e.actions.iter().any(|&(a, w)| a >= space.size() || !(0.0..=1.0).contains(&w))
                || (total - 1.0).abs() > crate::mdp::ROW_TOLERANCE
            {
                return Err(Error::PolicyMismatch(format!(
                    "entry at ({}, {}) is not a distribution over {} actions",
                    e.state,
                    e.level,
                    space.size()
                )));
            }
            rows.insert(ShieldState::new(e.state, e.level).key(), e.actions.clone());
        }
        Ok(Self { space, rows, entries })
    }

    /// Deterministic policy from one flat action per closure state.
    pub fn deterministic(space: ActionSpace, closure: &LevelClosure, choices: &[usize]) -> Result<Self> {
        if choices.len() != closure.len() {
            return Err(Error::PolicyMismatch(format!(
                "{} choices for {} shield states",
                choices.len(),
                closure.len()
            )));
        }
        let entries = closure
            .states()
            .iter()
            .zip(choices)
            .map(|(s, &a)| PolicyEntry {
                state: s.state,
                level: s.level,
                actions: vec![(a, 1.0)],
            })
            .collect();
        Self::new(space, entries)
    }

    /// A random policy on `closure`: each state mixes up to `max_support`
    /// distinct encoded actions with random weights.
    pub fn random(space: ActionSpace, closure: &LevelClosure, max_support: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = space.size();
        let entries = closure
            .states()
            .iter()
            .map(|s| {
                let k = rng.gen_range(1..=max_support.clamp(1, n));
                let mut chosen: Vec<usize> = Vec::with_capacity(k);
                while chosen.len() < k {
                    let a = rng.gen_range(0..n);
                    if !chosen.contains(&a) {
                        chosen.push(a);
                    }
                }
                let weights: Vec<f64> = chosen.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
                let total: f64 = weights.iter().sum();
                PolicyEntry {
                    state: s.state,
                    level: s.level,
                    actions: chosen.into_iter().zip(weights.iter().map(|w| w / total)).collect(),
                }
            })
            .collect();
        Self::new(space, entries)
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    pub fn entries(&self) -> &[PolicyEntry] {
        &self.entries
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&PolicyDocument {
            degree: self.space.degree,
            profiles: self.space.profiles,
            entries: self.entries.clone(),
        })
        .expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PolicyDocument = serde_json::from_str(text)?;
        Self::new(
            ActionSpace {
                degree: doc.degree,
                profiles: doc.profiles,
            },
            doc.entries,
        )
    }
}

impl ShieldPolicy for TabularShieldPolicy {
    fn action_distribution(&self, at: ShieldState) -> Result<Vec<(usize, f64)>> {
        self.rows
            .get(&at.key())
            .cloned()
            .ok_or(Error::UnknownShieldState {
                state: at.state.0,
                level: at.level,
            })
    }
}

/// The base-MDP policy obtained from a shield policy by carrying the level
/// as memory.
#[derive(Debug)]
pub struct LiftedPolicy<'a, P: ShieldPolicy + ?Sized> {
    shield: &'a Shield,
    policy: &'a P,
    level: f64,
    profile: usize,
}

impl<'a, P: ShieldPolicy + ?Sized> LiftedPolicy<'a, P> {
    pub fn new(shield: &'a Shield, policy: &'a P) -> Self {
        Self {
            shield,
            policy,
            level: shield.bound(),
            profile: ProfileFamily::TIGHT,
        }
    }

    /// Current memory.
    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn reset(&mut self) {
        self.level = self.shield.bound();
        self.profile = ProfileFamily::TIGHT;
    }

    /// Mixture over the base actions of `s` given the current memory.
    pub fn mixture(&mut self, s: StateId, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let at = ShieldState::new(s, self.level);
        let idx = sample_encoded(self.policy, at, rng)?;
        let d = self.shield.decide(at, self.shield.decode(idx)?)?;
        self.profile = d.profile;
        Ok(d.mixture)
    }

    /// Updates the memory after moving to `next`.
    pub fn observe(&mut self, next: StateId) {
        self.level = self.shield.next_level(self.profile, next);
    }
}

/// `(base state, reward)` after every step of a rollout.
pub type Trace = Vec<(StateId, f64)>;

/// Runs `steps` shield transitions, resetting whenever an episode ends.
/// Encoded actions are drawn from `policy_rng`; the session owns the
/// environment stream.
pub fn rollout_shield<P: ShieldPolicy + ?Sized>(
    session: &mut ShieldSession,
    policy: &P,
    env_seed: u64,
    policy_seed: u64,
    steps: usize,
) -> Result<Trace> {
    let mut policy_rng = ChaCha8Rng::seed_from_u64(policy_seed);
    let mut trace = Vec::with_capacity(steps);
    session.reset(Some(env_seed));
    while trace.len() < steps {
        if session.is_done() {
            session.reset(None);
            continue;
        }
        let idx = sample_encoded(policy, session.state(), &mut policy_rng)?;
        let out = session.step_flat(idx)?;
        trace.push((out.next.state, out.reward));
    }
    Ok(trace)
}

/// The same rollout driven by the lifted policy on the padded base MDP.
pub fn rollout_lifted<P: ShieldPolicy + ?Sized>(
    shield: &Shield,
    policy: &P,
    episode_length: Option<usize>,
    env_seed: u64,
    policy_seed: u64,
    steps: usize,
) -> Result<Trace> {
    let m = shield.mdp();
    let mut policy_rng = ChaCha8Rng::seed_from_u64(policy_seed);
    let mut env_rng = ChaCha8Rng::seed_from_u64(env_seed);
    let mut lifted = LiftedPolicy::new(shield, policy);
    let mut trace = Vec::with_capacity(steps);
    let mut s = m.initial();
    let mut t = 0;
    let mut done = m.is_absorbing(s);
    while trace.len() < steps {
        if done {
            lifted.reset();
            s = m.initial();
            t = 0;
            done = m.is_absorbing(s);
            continue;
        }
        let mixture = lifted.mixture(s, &mut policy_rng)?;
        let a = sample_index(mixture.iter().copied(), env_rng.gen::<f64>());
        let dist = &m.actions(s)[a].dist;
        let k = sample_index(dist.iter().map(|(_, p)| p), env_rng.gen::<f64>());
        s = dist.entries()[k].0;
        lifted.observe(s);
        t += 1;
        trace.push((s, m.reward(s)));
        done = m.is_absorbing(s) || episode_length.is_some_and(|h| t >= h);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::reach::{interval_iteration, IntervalConfig};

    const TWO_SEVENTHS: f64 = 2.0 / 7.0;

    fn shield(m: &Mdp, p: f64, family: ProfileFamily) -> Result<Shield> {
        let cert = interval_iteration(m, IntervalConfig::with_epsilon(1e-9))?;
        Shield::new(m, &cert, p, family)
    }

    #[test]
    fn flat_index_round_trip() {
        let space = ActionSpace { degree: 4, profiles: 5 };
        assert_eq!(space.size(), 80);
        for idx in 0..space.size() {
            let a = EncodedAction::from_flat(idx, space).unwrap();
            assert_eq!(a.i, idx % 4);
            assert_eq!(a.j, (idx / 4) % 4);
            assert_eq!(a.profile, idx / 16);
            assert_eq!(a.to_flat(space), idx);
        }
        assert!(matches!(EncodedAction::from_flat(80, space), Err(Error::ActionOutOfRange(80))));
    }

    #[test]
    fn profile_levels() {
        assert_eq!(AlphaProfile::Tight.level(0.3), 0.3);
        let half = AlphaProfile::UniformSlack { k: 2, steps: 4 };
        assert!((half.level(0.2) - 0.6).abs() < 1e-15);
        assert_eq!(AlphaProfile::UniformSlack { k: 4, steps: 4 }.level(0.2), 1.0);
        assert_eq!(half.level(1.0), 1.0);
        assert_eq!(ProfileFamily::uniform_slack(4).len(), 5);
        assert_eq!(ProfileFamily::uniform_slack(0), ProfileFamily::tight_only());
        assert!(ProfileFamily::new(vec![half]).is_err());
    }

    #[test]
    fn feasibility_gate() {
        assert!(shield(&fixtures::f2(), 0.2, ProfileFamily::default()).is_ok());
        assert!(shield(&fixtures::f1(), 1.0, ProfileFamily::default()).is_ok());
        match shield(&fixtures::f1(), 0.2, ProfileFamily::default()) {
            Err(Error::Infeasible { beta, bound }) => {
                assert!((beta - TWO_SEVENTHS).abs() < 1e-8);
                assert_eq!(bound, 0.2);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn non_inductive_certificate_is_rejected() {
        let m = fixtures::f1();
        let mut cert = interval_iteration(&m, IntervalConfig::default()).unwrap();
        cert.beta[0] = 0.1;
        assert!(matches!(
            Shield::new(&m, &cert, 0.5, ProfileFamily::tight_only()),
            Err(Error::NotInductive)
        ));
    }

    #[test]
    fn f1_step_with_b_under_budget() {
        let sh = shield(&fixtures::f1(), 0.3, ProfileFamily::tight_only()).unwrap();
        let at = ShieldState::new(StateId(0), 0.3);
        let d = sh.decide(at, EncodedAction::new(1, 1, 0)).unwrap();
        assert_eq!(d.mixture, vec![0.0, 1.0]);
        assert!((d.expected_level - TWO_SEVENTHS).abs() < 1e-9);
        let mut succ = sh.successors(at, &d);
        succ.sort_by_key(|s| s.0.state);
        assert_eq!(succ.len(), 3);
        assert!((succ[0].0.level - TWO_SEVENTHS).abs() < 1e-9 && (succ[0].1 - 0.3).abs() < 1e-15);
        assert_eq!((succ[1].0.level, succ[1].1), (0.0, 0.5));
        assert_eq!((succ[2].0.level, succ[2].1), (1.0, 0.2));
    }

    #[test]
    fn f1_tight_budget_forces_b() {
        let sh = shield(&fixtures::f1(), 0.3, ProfileFamily::tight_only()).unwrap();
        let at = ShieldState::new(StateId(0), sh.beta()[0]);
        let d = sh.decide(at, EncodedAction::new(0, 0, 0)).unwrap();
        // β(s0) sits above 2/7 by less than ε, which leaves an ε-sized sliver of a
        assert!(d.mixture[0] < 1e-8, "{:?}", d.mixture);
    }

    #[test]
    fn full_budget_passes_actions_through() {
        let sh = shield(&fixtures::f1(), 1.0, ProfileFamily::default()).unwrap();
        let at = sh.initial();
        for i in 0..2 {
            let d = sh.decide(at, EncodedAction::new(i, i, 0)).unwrap();
            let mut want = vec![0.0; 2];
            want[i] = 1.0;
            assert_eq!(d.mixture, want);
        }
    }

    #[test]
    fn infeasible_profile_falls_back_to_tight() {
        let sh = shield(&fixtures::f2(), 0.2, ProfileFamily::default()).unwrap();
        let d = sh.decide(sh.initial(), EncodedAction::new(1, 1, 4)).unwrap();
        assert!(d.fell_back);
        assert_eq!(d.profile, 0);
    }

    #[test]
    fn f1_levels() {
        let sh = shield(&fixtures::f1(), 0.3, ProfileFamily::tight_only()).unwrap();
        let c = sh.reachable_levels(DEFAULT_CLOSURE_LIMIT).unwrap();
        let s0 = c.levels(StateId(0));
        assert_eq!(s0.len(), 2);
        assert!((s0[0] - TWO_SEVENTHS).abs() < 1e-9 && s0[1] == 0.3);
        assert_eq!(c.levels(StateId(1)), vec![0.0]);
        assert_eq!(c.levels(StateId(2)), vec![1.0]);
    }

    #[test]
    fn f2_levels_and_overflow() {
        let sh = shield(&fixtures::f2(), 0.2, ProfileFamily::tight_only()).unwrap();
        let c = sh.reachable_levels(DEFAULT_CLOSURE_LIMIT).unwrap();
        assert_eq!(c.levels(StateId(0)), vec![0.2]);
        assert!(matches!(sh.reachable_levels(2), Err(Error::ClosureOverflow { limit: 2 })));
    }

    #[test]
    fn session_protocol() {
        let sh = Arc::new(shield(&fixtures::f1(), 0.3, ProfileFamily::tight_only()).unwrap());
        let mut session = ShieldSession::new(sh, None, 7);
        assert_eq!(session.reset(Some(7)), ShieldState::new(StateId(0), 0.3));
        assert!(session.step_flat(4).is_err());
        loop {
            let out = session.step(EncodedAction::new(1, 1, 0)).unwrap();
            assert!(out.diagnostics.expected_level <= 0.3 + 1e-12);
            assert_eq!(out.diagnostics.base_action, 1);
            if out.terminated {
                assert!(out.next.state != StateId(0));
                break;
            }
        }
        assert!(matches!(session.step_flat(0), Err(Error::Terminated)));
    }

    #[test]
    fn truncation() {
        let sh = Arc::new(shield(&fixtures::f1(), 1.0, ProfileFamily::tight_only()).unwrap());
        // action b from s0 stays with probability 0.3; one step is enough to truncate
        let mut session = ShieldSession::new(sh, Some(1), 0);
        let out = session.step(EncodedAction::new(1, 1, 0)).unwrap();
        assert!(out.terminated ^ out.truncated);
        assert!(session.is_done());
    }

    #[test]
    fn lift_parity_on_f1() {
        let sh = Arc::new(shield(&fixtures::f1(), 0.3, ProfileFamily::tight_only()).unwrap());
        let closure = sh.reachable_levels(DEFAULT_CLOSURE_LIMIT).unwrap();
        let policy = TabularShieldPolicy::random(sh.action_space(), &closure, 3, 11).unwrap();
        let mut session = ShieldSession::new(sh.clone(), Some(5), 0);
        let a = rollout_shield(&mut session, &policy, 3, 4, 1000).unwrap();
        let b = rollout_lifted(&sh, &policy, Some(5), 3, 4, 1000).unwrap();
        assert_eq!(a.len(), 1000);
        assert_eq!(a, b);
    }

    #[test]
    fn policy_json_round_trip() {
        let sh = shield(&fixtures::f1(), 0.3, ProfileFamily::default()).unwrap();
        let closure = sh.reachable_levels(DEFAULT_CLOSURE_LIMIT).unwrap();
        let policy = TabularShieldPolicy::random(sh.action_space(), &closure, 2, 1).unwrap();
        let back = TabularShieldPolicy::from_json(&policy.to_json()).unwrap();
        assert_eq!(back, policy);
        let missing = ShieldState::new(StateId(0), 0.123);
        assert!(matches!(
            policy.action_distribution(missing),
            Err(Error::UnknownShieldState { .. })
        ));
    }
}
