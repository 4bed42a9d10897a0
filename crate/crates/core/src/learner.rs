//! Tabular Q-learning inside the shielded environment, and an unshielded
//! baseline on the base MDP.
//!
//! Returns count the rewards of the states entered: an episode that steps
//! `s_0 → s_1 → … → s_T` earns `Σ R(s_t)` for `t = 1..=T`. An episode ends
//! when it enters an absorbing state or reaches `episode_length` steps.
//! Q-values estimate `E[Σ_{t≥1} γ^(t-1) R(s_t)]`; entering an absorbing state
//! bootstraps with its reward collected forever, `R(s')/(1−γ)`.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, MemorylessPolicy, StateId};
use crate::shield::{
    sample_index, LevelClosure, PolicyEntry, Shield, ShieldPolicy, ShieldSession, TabularShieldPolicy,
    DEFAULT_CLOSURE_LIMIT, DEFAULT_SLACK_STEPS,
};

/// Number of evenly spaced snapshots taken during training.
pub const SNAPSHOTS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub learning_rate: f64,
    /// The step size for the n-th update of a pair is `learning_rate / n^learning_rate_decay`.
    pub learning_rate_decay: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `total_timesteps` over which ε decays linearly.
    pub exploration_fraction: f64,
    pub total_timesteps: usize,
    pub episode_length: usize,
    pub seed: u64,
    pub slack_steps: u32,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            learning_rate_decay: 0.5,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            exploration_fraction: 0.5,
            total_timesteps: 100_000,
            episode_length: 100,
            seed: 0,
            slack_steps: DEFAULT_SLACK_STEPS,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.learning_rate_decay) {
            return bad("learning_rate_decay must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("exploration rates must lie in [0, 1]");
        }
        if !(self.exploration_fraction > 0.0 && self.exploration_fraction <= 1.0) {
            return bad("exploration_fraction must lie in (0, 1]");
        }
        if self.total_timesteps == 0 || self.episode_length == 0 {
            return bad("total_timesteps and episode_length must be positive");
        }
        if self.slack_steps == 0 {
            return bad("slack_steps must be positive");
        }
        Ok(())
    }

    pub fn epsilon(&self, step: usize) -> f64 {
        let decay = (self.exploration_fraction * self.total_timesteps as f64).max(1.0);
        let t = step as f64 / decay;
        if t >= 1.0 {
            return self.epsilon_end;
        }
        self.epsilon_start + t * (self.epsilon_end - self.epsilon_start)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Environment steps taken up to and including this episode.
    pub steps: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub discounted_return: f64,
    pub violated: bool,
    /// Fraction of episodes so far that visited an unsafe state.
    pub violation_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub episodes: Vec<EpisodeRecord>,
}

pub const CURVE_HEADER: &str = "episode,steps,return,discounted_return,violated,violation_rate";

impl LearningCurve {
    fn push(&mut self, steps: usize, ret: f64, discounted_return: f64, violated: bool) {
        let n = self.episodes.len() + 1;
        let count = self.violations() + usize::from(violated);
        self.episodes.push(EpisodeRecord {
            episode: n - 1,
            steps,
            ret,
            discounted_return,
            violated,
            violation_rate: count as f64 / n as f64,
        });
    }

    pub fn violations(&self) -> usize {
        self.episodes.iter().filter(|e| e.violated).count()
    }

    pub fn violation_rate(&self) -> f64 {
        self.episodes.last().map_or(0.0, |e| e.violation_rate)
    }

    /// Mean undiscounted return of the last `n` episodes.
    pub fn tail_mean_return(&self, n: usize) -> f64 {
        let tail = &self.episodes[self.episodes.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().map(|e| e.ret).sum::<f64>() / tail.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_HEADER);
        out.push('\n');
        for e in &self.episodes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.episode,
                e.steps,
                e.ret,
                e.discounted_return,
                u8::from(e.violated),
                e.violation_rate
            );
        }
        out
    }
}

/// Dense action-value table over `rows × actions`.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    actions: usize,
    values: Vec<f64>,
    visits: Vec<u32>,
}

impl QTable {
    pub fn new(rows: usize, actions: usize) -> Self {
        Self {
            actions,
            values: vec![0.0; rows * actions],
            visits: vec![0; rows * actions],
        }
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.actions.max(1)
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.actions..(r + 1) * self.actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Greedy action among the first `valid` actions; ties go to the lowest index.
    pub fn argmax(&self, r: usize, valid: usize) -> usize {
        let row = &self.row(r)[..valid];
        let mut best = 0;
        for (a, &q) in row.iter().enumerate().skip(1) {
            if q > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max(&self, r: usize, valid: usize) -> f64 {
        self.row(r)[self.argmax(r, valid)]
    }

    fn update(&mut self, r: usize, a: usize, target: f64, cfg: &LearnerConfig) {
        let k = r * self.actions + a;
        self.visits[k] += 1;
        let lr = cfg.learning_rate / f64::from(self.visits[k]).powf(cfg.learning_rate_decay);
        self.values[k] += lr * (target - self.values[k]);
    }
}

fn agent_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn epsilon_greedy(q: &QTable, r: usize, valid: usize, eps: f64, rng: &mut ChaCha8Rng) -> usize {
    // both draws always happen so the stream does not depend on ε
    let explore = rng.gen::<f64>() < eps;
    let random = rng.gen_range(0..valid);
    if explore {
        random
    } else {
        q.argmax(r, valid)
    }
}

/// The policy that was running at a given point of training.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub step: usize,
    pub epsilon: f64,
    pub policy: TabularShieldPolicy,
}

#[derive(Clone, Debug)]
pub struct ShieldedRun {
    pub closure: LevelClosure,
    pub q: QTable,
    pub greedy: TabularShieldPolicy,
    pub curve: LearningCurve,
    pub snapshots: Vec<Snapshot>,
}

fn greedy_choices(q: &QTable) -> Vec<usize> {
    (0..q.rows()).map(|r| q.argmax(r, q.actions())).collect()
}

/// ε-greedy over every encoded action at every closure state.
fn behaviour_policy(shield: &Shield, closure: &LevelClosure, q: &QTable, eps: f64) -> Result<TabularShieldPolicy> {
    let n = q.actions();
    let entries = closure
        .states()
        .iter()
        .enumerate()
        .map(|(r, s)| {
            let best = q.argmax(r, n);
            let actions = (0..n)
                .filter_map(|a| {
                    let w = eps / n as f64 + if a == best { 1.0 - eps } else { 0.0 };
                    (w > 0.0).then_some((a, w))
                })
                .collect();
            PolicyEntry {
                state: s.state,
                level: s.level,
                actions,
            }
        })
        .collect();
    TabularShieldPolicy::new(shield.action_space(), entries)
}

/// Q-learning over shield states. Every interaction goes through the shield.
pub fn train_shielded(shield: Arc<Shield>, cfg: &LearnerConfig) -> Result<ShieldedRun> {
    cfg.validate()?;
    let closure = shield.reachable_levels(DEFAULT_CLOSURE_LIMIT)?;
    let space = shield.action_space();
    let mut q = QTable::new(closure.len(), space.size());
    let mut session = ShieldSession::new(shield.clone(), Some(cfg.episode_length), cfg.seed);
    let mut rng = agent_rng(cfg.seed);
    let mut curve = LearningCurve::default();
    let mut snapshots = Vec::with_capacity(SNAPSHOTS);
    let every = (cfg.total_timesteps / SNAPSHOTS).max(1);
    let m = shield.mdp();
    let terminal = 1.0 / (1.0 - cfg.gamma);

    let mut step = 0;
    while step < cfg.total_timesteps {
        let start = session.reset(None);
        let mut row = index_in(&closure, start)?;
        let (mut ret, mut disc, mut discount) = (0.0, 0.0, 1.0);
        let mut violated = m.is_unsafe(start.state);
        loop {
            let eps = cfg.epsilon(step);
            let a = epsilon_greedy(&q, row, space.size(), eps, &mut rng);
            let out = session.step_flat(a)?;
            step += 1;
            let next_row = index_in(&closure, out.next)?;
            let target = if out.terminated {
                out.reward * terminal
            } else {
                out.reward + cfg.gamma * q.max(next_row, space.size())
            };
            q.update(row, a, target, cfg);
            ret += out.reward;
            disc += discount * out.reward;
            discount *= cfg.gamma;
            violated |= m.is_unsafe(out.next.state);
            if step % every == 0 && snapshots.len() < SNAPSHOTS {
                snapshots.push(Snapshot {
                    step,
                    epsilon: cfg.epsilon(step),
                    policy: behaviour_policy(&shield, &closure, &q, cfg.epsilon(step))?,
                });
            }
            row = next_row;
            if out.terminated || out.truncated || step >= cfg.total_timesteps {
                break;
            }
        }
        curve.push(step, ret, disc, violated);
    }
    let greedy = TabularShieldPolicy::deterministic(space, &closure, &greedy_choices(&q))?;
    Ok(ShieldedRun {
        closure,
        q,
        greedy,
        curve,
        snapshots,
    })
}

fn index_in(closure: &LevelClosure, at: crate::shield::ShieldState) -> Result<usize> {
    closure.index_of(at).ok_or(Error::UnknownShieldState {
        state: at.state.0,
        level: at.level,
    })
}

#[derive(Clone, Debug)]
pub struct UnshieldedRun {
    pub q: QTable,
    pub greedy: MemorylessPolicy,
    pub curve: LearningCurve,
}

fn base_step(m: &Mdp, s: StateId, a: usize, rng: &mut ChaCha8Rng) -> StateId {
    let dist = &m.actions(s)[a].dist;
    let k = sample_index(dist.iter().map(|e| e.1), rng.gen::<f64>());
    dist.entries()[k].0
}

/// Plain Q-learning on the base MDP. Nothing stops the agent from entering
/// unsafe states.
pub fn train_unshielded(m: &Mdp, cfg: &LearnerConfig) -> Result<UnshieldedRun> {
    cfg.validate()?;
    let width = m.max_degree();
    let mut q = QTable::new(m.state_count(), width);
    let mut env = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rng = agent_rng(cfg.seed);
    let mut curve = LearningCurve::default();
    let terminal = 1.0 / (1.0 - cfg.gamma);

    let mut step = 0;
    while step < cfg.total_timesteps {
        let mut s = m.initial();
        let (mut ret, mut disc, mut discount) = (0.0, 0.0, 1.0);
        let mut violated = m.is_unsafe(s);
        for t in 0..cfg.episode_length {
            let valid = m.actions(s).len();
            let a = epsilon_greedy(&q, s.0, valid, cfg.epsilon(step), &mut rng);
            let next = base_step(m, s, a, &mut env);
            step += 1;
            let r = m.reward(next);
            let terminated = m.is_absorbing(next);
            let target = if terminated {
                r * terminal
            } else {
                r + cfg.gamma * q.max(next.0, m.actions(next).len())
            };
            q.update(s.0, a, target, cfg);
            ret += r;
            disc += discount * r;
            discount *= cfg.gamma;
            violated |= m.is_unsafe(next);
            s = next;
            if terminated || t + 1 == cfg.episode_length || step >= cfg.total_timesteps {
                break;
            }
        }
        curve.push(step, ret, disc, violated);
    }
    let choices: Vec<usize> = m.states().map(|s| q.argmax(s.0, m.actions(s).len())).collect();
    let greedy = MemorylessPolicy::deterministic(m, &choices)?;
    Ok(UnshieldedRun { q, greedy, curve })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub episodes: usize,
    pub mean_return: f64,
    pub violations: usize,
}

/// Frozen-policy rollouts through a shield session.
pub fn evaluate_shielded<P: ShieldPolicy + ?Sized>(
    shield: &Arc<Shield>,
    policy: &P,
    episodes: usize,
    episode_length: usize,
    seed: u64,
) -> Result<Evaluation> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("need at least one episode".into()));
    }
    let mut session = ShieldSession::new(shield.clone(), Some(episode_length), seed);
    let mut rng = agent_rng(seed);
    let (mut total, mut violations) = (0.0, 0);
    for _ in 0..episodes {
        let mut at = session.reset(None);
        let mut violated = shield.mdp().is_unsafe(at.state);
        while !session.is_done() {
            let a = crate::shield::sample_encoded(policy, at, &mut rng)?;
            let out = session.step_flat(a)?;
            total += out.reward;
            violated |= shield.mdp().is_unsafe(out.next.state);
            at = out.next;
        }
        violations += usize::from(violated);
    }
    Ok(Evaluation {
        episodes,
        mean_return: total / episodes as f64,
        violations,
    })
}

/// Frozen-policy rollouts on the base MDP.
pub fn evaluate_base(m: &Mdp, policy: &MemorylessPolicy, episodes: usize, episode_length: usize, seed: u64) -> Result<Evaluation> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("need at least one episode".into()));
    }
    if policy.rows().len() != m.state_count() {
        return Err(Error::PolicyMismatch("policy and model sizes differ".into()));
    }
    let mut env = ChaCha8Rng::seed_from_u64(seed);
    let mut rng = agent_rng(seed);
    let (mut total, mut violations) = (0.0, 0);
    for _ in 0..episodes {
        let mut s = m.initial();
        let mut violated = m.is_unsafe(s);
        for _ in 0..episode_length {
            let a = sample_index(policy.row(s).iter().copied(), rng.gen::<f64>());
            s = base_step(m, s, a, &mut env);
            total += m.reward(s);
            violated |= m.is_unsafe(s);
            if m.is_absorbing(s) {
                break;
            }
        }
        violations += usize::from(violated);
    }
    Ok(Evaluation {
        episodes,
        mean_return: total / episodes as f64,
        violations,
    })
}
