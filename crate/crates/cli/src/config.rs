//! Run configuration: a flat TOML document whose keys mirror the `train`
//! flags. Flags given on the command line win over file keys.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use probshield::envs::BuiltinEnv;
use probshield::learner::LearnerConfig;
use probshield::shield::{AlphaProfile, ProfileFamily};
use probshield::Mdp;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: Option<String>,
    pub model: Option<PathBuf>,
    pub cert: Option<PathBuf>,
    pub shielded: Option<bool>,
    pub p: Option<f64>,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub learning_rate: Option<f64>,
    pub learning_rate_decay: Option<f64>,
    pub epsilon_start: Option<f64>,
    pub epsilon_end: Option<f64>,
    pub exploration_fraction: Option<f64>,
    pub total_timesteps: Option<usize>,
    pub episode_length: Option<usize>,
    pub seed: Option<u64>,
    pub seeds: Option<String>,
    pub slack_steps: Option<u32>,
    pub profiles: Option<Vec<String>>,
    pub out_dir: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = read(path)?;
        toml::from_str(&text).map_err(|source| CliError::Config {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Keys set in `over` replace those in `self`.
    pub fn overlay(mut self, over: RunConfig) -> Self {
        overlay!(self, over; env, model, cert, shielded, p, epsilon, gamma, learning_rate,
            learning_rate_decay, epsilon_start, epsilon_end, exploration_fraction, total_timesteps,
            episode_length, seed, seeds, slack_steps, profiles, out_dir);
        self
    }

    pub fn source(&self) -> CliResult<ModelSource> {
        ModelSource::from_options(self.env.as_deref(), self.model.as_deref())
    }
}

/// Where the base MDP comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSource {
    Builtin(BuiltinEnv),
    File(PathBuf),
}

impl ModelSource {
    pub fn from_options(env: Option<&str>, model: Option<&Path>) -> CliResult<Self> {
        match (env, model) {
            (Some(name), None) => Ok(ModelSource::Builtin(name.parse()?)),
            (None, Some(path)) => Ok(ModelSource::File(path.to_path_buf())),
            (Some(_), Some(_)) => Err(CliError::Usage("give either an environment or a model file, not both".into())),
            (None, None) => Err(CliError::Usage("an environment name or a model file is required".into())),
        }
    }

    pub fn load(&self) -> CliResult<Mdp> {
        match self {
            ModelSource::Builtin(env) => Ok(env.build()?),
            ModelSource::File(path) => Ok(Mdp::from_json(&read(path)?)?),
        }
    }

    pub fn builtin(&self) -> Option<BuiltinEnv> {
        match self {
            ModelSource::Builtin(env) => Some(*env),
            ModelSource::File(_) => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelSource::Builtin(env) => env.name().to_string(),
            ModelSource::File(path) => path.display().to_string(),
        }
    }
}

/// Parses `tight`, `slack-k` (over `steps`) or `slack-k/n`.
pub fn parse_profile(name: &str, steps: u32) -> CliResult<AlphaProfile> {
    let bad = || CliError::Usage(format!("unknown profile {name:?}; expected tight, slack-k or slack-k/n"));
    if name == "tight" {
        return Ok(AlphaProfile::Tight);
    }
    let rest = name.strip_prefix("slack-").ok_or_else(bad)?;
    let (k, n) = match rest.split_once('/') {
        Some((k, n)) => (k.parse().map_err(|_| bad())?, n.parse().map_err(|_| bad())?),
        None => (rest.parse().map_err(|_| bad())?, steps),
    };
    Ok(AlphaProfile::UniformSlack { k, steps: n })
}

/// The explicit list when given, otherwise tight plus every uniform slack step.
pub fn profile_family(names: Option<&[String]>, steps: u32) -> CliResult<ProfileFamily> {
    if steps == 0 {
        return Err(CliError::Usage("slack steps must be positive".into()));
    }
    match names {
        None => Ok(ProfileFamily::uniform_slack(steps)),
        Some(names) => {
            let profiles = names
                .iter()
                .map(|n| parse_profile(n, steps))
                .collect::<CliResult<Vec<_>>>()?;
            Ok(ProfileFamily::new(profiles)?)
        }
    }
}

/// `a..b` (exclusive), `a..=b` or a single seed.
pub fn parse_seeds(text: &str) -> CliResult<Range<u64>> {
    let bad = || CliError::Usage(format!("bad seed range {text:?}"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let range = if let Some((a, b)) = text.split_once("..=") {
        num(a)?..num(b)?.checked_add(1).ok_or_else(bad)?
    } else if let Some((a, b)) = text.split_once("..") {
        num(a)?..num(b)?
    } else {
        let s = num(text)?;
        s..s + 1
    };
    if range.is_empty() {
        return Err(bad());
    }
    Ok(range)
}

/// Everything `train` needs, with the environment defaults filled in for built-in
/// environments.
#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub source: ModelSource,
    pub cert: Option<PathBuf>,
    pub shielded: bool,
    pub p: f64,
    pub epsilon: f64,
    pub learner: LearnerConfig,
    pub profiles: Option<Vec<String>>,
    pub seeds: Range<u64>,
    pub out_dir: Option<PathBuf>,
}

impl TrainSettings {
    pub fn resolve(cfg: RunConfig) -> CliResult<Self> {
        let source = cfg.source()?;
        let table = source.builtin().map(|e| e.params());
        let base = LearnerConfig::default();
        let p = match (cfg.p, &table) {
            (Some(p), _) => p,
            (None, Some(t)) => t.safety_bound,
            (None, None) => return Err(CliError::Usage("a safety bound p is required for model files".into())),
        };
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::Usage(format!("p = {p} outside [0, 1]")));
        }
        let epsilon = cfg.epsilon.unwrap_or(DEFAULT_EPSILON);
        if !(epsilon > 0.0) {
            return Err(CliError::Usage(format!("epsilon = {epsilon} must be positive")));
        }
        let seed = cfg.seed.unwrap_or(base.seed);
        let seeds = match &cfg.seeds {
            Some(text) => parse_seeds(text)?,
            None => seed..seed + 1,
        };
        let learner = LearnerConfig {
            learning_rate: cfg.learning_rate.unwrap_or(base.learning_rate),
            learning_rate_decay: cfg.learning_rate_decay.unwrap_or(base.learning_rate_decay),
            gamma: cfg.gamma.unwrap_or(base.gamma),
            epsilon_start: cfg.epsilon_start.unwrap_or(base.epsilon_start),
            epsilon_end: cfg.epsilon_end.unwrap_or(base.epsilon_end),
            exploration_fraction: cfg.exploration_fraction.unwrap_or(base.exploration_fraction),
            total_timesteps: cfg
                .total_timesteps
                .or(table.as_ref().map(|t| t.total_timesteps))
                .unwrap_or(base.total_timesteps),
            episode_length: cfg
                .episode_length
                .or(table.as_ref().map(|t| t.episode_length))
                .unwrap_or(base.episode_length),
            seed: seeds.start,
            slack_steps: cfg.slack_steps.unwrap_or(base.slack_steps),
        };
        learner.validate()?;
        profile_family(cfg.profiles.as_deref(), learner.slack_steps)?;
        Ok(Self {
            source,
            cert: cfg.cert,
            shielded: cfg.shielded.unwrap_or(false),
            p,
            epsilon,
            learner,
            profiles: cfg.profiles,
            seeds,
            out_dir: cfg.out_dir,
        })
    }

    pub fn family(&self) -> CliResult<ProfileFamily> {
        profile_family(self.profiles.as_deref(), self.learner.slack_steps)
    }
}

pub fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
