//! Explicit-state MDPs, memoryless policies and induced Markov chains.
//!
//! Every state carries a non-empty list of named actions, each with a sparse
//! successor distribution. Rewards are attached to states, labels are either
//! safe or unsafe. The JSON model format is
//!
//! ```json
//! {"states": 3, "initial": 0,
//!  "labels": ["safe", "safe", "unsafe"],
//!  "rewards": [0, 0, 0],
//!  "actions": [[{"name": "a", "dist": [[2, 0.5], [1, 0.5]]}], ...]}
//! ```

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows of a distribution must sum to one within this tolerance.
pub const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub usize);

impl StateId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Safe,
    Unsafe,
}

/// A finite-support probability distribution over states.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SparseDistribution {
    entries: Vec<(StateId, f64)>,
}

impl SparseDistribution {
    /// Validates non-negativity, uniqueness of targets and the row sum.
    pub fn new(entries: Vec<(StateId, f64)>) -> Result<Self> {
        let mut total = 0.0;
        for (k, &(s, p)) in entries.iter().enumerate() {
            if !p.is_finite() || p < 0.0 || p > 1.0 {
                return Err(Error::InvalidModel(format!(
                    "probability {p} for state {s} is outside [0, 1]"
                )));
            }
            if entries[..k].iter().any(|&(t, _)| t == s) {
                return Err(Error::InvalidModel(format!("duplicate successor {s}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > ROW_TOLERANCE {
            return Err(Error::InvalidModel(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { entries })
    }

    pub fn dirac(s: StateId) -> Self {
        Self {
            entries: vec![(s, 1.0)],
        }
    }

    /// Weighted mixture of distributions, merged and sorted by state.
    /// Zero-weight components are skipped. The weights are trusted to sum to one.
    pub fn mixture<'a, I>(components: I) -> Self
    where
        I: IntoIterator<Item = (f64, &'a SparseDistribution)>,
    {
        let mut acc: BTreeMap<StateId, f64> = BTreeMap::new();
        for (w, dist) in components {
            if w == 0.0 {
                continue;
            }
            for &(s, p) in &dist.entries {
                *acc.entry(s).or_insert(0.0) += w * p;
            }
        }
        Self {
            entries: acc.into_iter().filter(|&(_, p)| p > 0.0).collect(),
        }
    }

    pub(crate) fn from_unchecked(entries: Vec<(StateId, f64)>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[(StateId, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateId, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn support(&self) -> impl Iterator<Item = StateId> + '_ {
        self.entries.iter().filter(|e| e.1 > 0.0).map(|e| e.0)
    }

    pub fn prob(&self, s: StateId) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.0 == s)
            .map(|e| e.1)
            .sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `Σ p(s)·values(s)`, accumulated in entry order.
    #[inline]
    pub fn dot(&self, values: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &(s, p) in &self.entries {
            acc += p * values[s.0];
        }
        acc
    }

    fn is_dirac_on(&self, s: StateId) -> bool {
        self.entries.iter().all(|&(t, p)| t == s || p == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub name: String,
    pub dist: SparseDistribution,
}

impl Action {
    pub fn new(name: impl Into<String>, dist: SparseDistribution) -> Self {
        Self {
            name: name.into(),
            dist,
        }
    }
}

/// A validated, immutable finite MDP.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    initial: StateId,
    labels: Vec<Label>,
    rewards: Vec<f64>,
    actions: Vec<Vec<Action>>,
}

impl Mdp {
    pub fn new(
        initial: StateId,
        labels: Vec<Label>,
        rewards: Vec<f64>,
        actions: Vec<Vec<Action>>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidModel("model has no states".into()));
        }
        if rewards.len() != n || actions.len() != n {
            return Err(Error::InvalidModel(format!(
                "expected {n} rewards and action lists, got {} and {}",
                rewards.len(),
                actions.len()
            )));
        }
        if initial.0 >= n {
            return Err(Error::InvalidModel(format!(
                "initial state {initial} out of range"
            )));
        }
        if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidModel(format!("non-finite reward {r}")));
        }
        for (s, acts) in actions.iter().enumerate() {
            if acts.is_empty() {
                return Err(Error::InvalidModel(format!("state {s} has no actions")));
            }
            for a in acts {
                if let Some(&(t, _)) = a.dist.entries.iter().find(|e| e.0 .0 >= n) {
                    return Err(Error::InvalidModel(format!(
                        "action {:?} of state {s} targets unknown state {t}",
                        a.name
                    )));
                }
            }
        }
        Ok(Self {
            initial,
            labels,
            rewards,
            actions,
        })
    }

    pub fn state_count(&self) -> usize {
        self.labels.len()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, s: StateId) -> Label {
        self.labels[s.0]
    }

    pub fn is_unsafe(&self, s: StateId) -> bool {
        self.labels[s.0] == Label::Unsafe
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn reward(&self, s: StateId) -> f64 {
        self.rewards[s.0]
    }

    pub fn actions(&self, s: StateId) -> &[Action] {
        &self.actions[s.0]
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.state_count()).map(StateId)
    }

    pub fn max_degree(&self) -> usize {
        self.actions.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `Some(d)` when every state has exactly `d` actions.
    pub fn uniform_degree(&self) -> Option<usize> {
        let d = self.actions[0].len();
        self.actions.iter().all(|a| a.len() == d).then_some(d)
    }

    /// Every action of `s` returns to `s` with probability one.
    pub fn is_absorbing(&self, s: StateId) -> bool {
        self.actions[s.0].iter().all(|a| a.dist.is_dirac_on(s))
    }

    /// Reads and validates a JSON model document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.into_mdp()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelDocument::from(self)).expect("model serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct ActionDocument {
    name: String,
    dist: Vec<(usize, f64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    states: usize,
    initial: usize,
    labels: Vec<Label>,
    rewards: Vec<f64>,
    actions: Vec<Vec<ActionDocument>>,
}

impl ModelDocument {
    fn into_mdp(self) -> Result<Mdp> {
        if self.labels.len() != self.states {
            return Err(Error::InvalidModel(format!(
                "declared {} states but found {} labels",
                self.states,
                self.labels.len()
            )));
        }
        let actions = self
            .actions
            .into_iter()
            .enumerate()
            .map(|(s, acts)| {
                acts.into_iter()
                    .map(|a| {
                        let entries = a.dist.into_iter().map(|(t, p)| (StateId(t), p)).collect();
                        let dist = SparseDistribution::new(entries).map_err(|e| {
                            Error::InvalidModel(format!("state {s}, action {:?}: {e}", a.name))
                        })?;
                        Ok(Action::new(a.name, dist))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Mdp::new(StateId(self.initial), self.labels, self.rewards, actions)
    }
}

impl From<&Mdp> for ModelDocument {
    fn from(m: &Mdp) -> Self {
        Self {
            states: m.state_count(),
            initial: m.initial.0,
            labels: m.labels.clone(),
            rewards: m.rewards.clone(),
            actions: m
                .actions
                .iter()
                .map(|acts| {
                    acts.iter()
                        .map(|a| ActionDocument {
                            name: a.name.clone(),
                            dist: a.dist.entries.iter().map(|&(t, p)| (t.0, p)).collect(),
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// Pads every state to exactly `degree` actions by repeating its first action.
pub fn pad_actions(m: &Mdp, degree: usize) -> Result<Mdp> {
    let mut actions = m.actions.clone();
    for (s, acts) in actions.iter_mut().enumerate() {
        if acts.len() > degree {
            return Err(Error::DegreeTooSmall {
                state: s,
                count: acts.len(),
                degree,
            });
        }
        let first = acts[0].clone();
        acts.resize(degree, first);
    }
    Ok(Mdp {
        actions,
        ..m.clone()
    })
}

/// A memoryless randomized policy: one distribution over action indices per state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorylessPolicy {
    rows: Vec<Vec<f64>>,
}

impl MemorylessPolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in rows.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (total - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::PolicyMismatch(format!(
                    "row of state {s} is not a distribution"
                )));
            }
        }
        Ok(Self { rows })
    }

    /// Plays `choices[s]` with probability one in state `s`.
    pub fn deterministic(m: &Mdp, choices: &[usize]) -> Result<Self> {
        if choices.len() != m.state_count() {
            return Err(Error::PolicyMismatch(format!(
                "{} choices for {} states",
                choices.len(),
                m.state_count()
            )));
        }
        let rows = m
            .states()
            .zip(choices)
            .map(|(s, &a)| {
                let k = m.actions(s).len();
                if a >= k {
                    return Err(Error::PolicyMismatch(format!(
                        "state {s} has no action {a}"
                    )));
                }
                let mut row = vec![0.0; k];
                row[a] = 1.0;
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn row(&self, s: StateId) -> &[f64] {
        &self.rows[s.0]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// A finite Markov chain with labelled states.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovChain {
    initial: StateId,
    rows: Vec<SparseDistribution>,
    labels: Vec<Label>,
}

impl MarkovChain {
    pub fn new(initial: StateId, rows: Vec<SparseDistribution>, labels: Vec<Label>) -> Result<Self> {
        let n = rows.len();
        if labels.len() != n || initial.0 >= n {
            return Err(Error::InvalidModel("chain shape mismatch".into()));
        }
        if rows.iter().flat_map(|r| r.entries.iter()).any(|e| e.0 .0 >= n) {
            return Err(Error::InvalidModel("chain row targets unknown state".into()));
        }
        Ok(Self {
            initial,
            rows,
            labels,
        })
    }

    pub fn state_count(&self) -> usize {
        self.rows.len()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn row(&self, s: StateId) -> &SparseDistribution {
        &self.rows[s.0]
    }

    pub fn rows(&self) -> &[SparseDistribution] {
        &self.rows
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Mask of unsafe states.
    pub fn unsafe_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l == Label::Unsafe).collect()
    }
}

/// The chain obtained by resolving every state's choice with `pi`.
pub fn induce_chain(m: &Mdp, pi: &MemorylessPolicy) -> Result<MarkovChain> {
    if pi.rows.len() != m.state_count() {
        return Err(Error::PolicyMismatch(format!(
            "policy covers {} states, model has {}",
            pi.rows.len(),
            m.state_count()
        )));
    }
    let rows = m
        .states()
        .map(|s| {
            let acts = m.actions(s);
            let weights = pi.row(s);
            if weights.len() != acts.len() {
                return Err(Error::PolicyMismatch(format!(
                    "state {s}: policy has {} entries for {} actions",
                    weights.len(),
                    acts.len()
                )));
            }
            Ok(SparseDistribution::mixture(
                weights.iter().zip(acts).map(|(&w, a)| (w, &a.dist)),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MarkovChain {
        initial: m.initial,
        rows,
        labels: m.labels.clone(),
    })
}
