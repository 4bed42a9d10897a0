//! The `probshield` command line: certify, train, verify, brute-force and
//! export environments.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
pub use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "probshield", version, about = "Certified probabilistic shields for finite MDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute an inductive upper bound on the minimal unsafe-reach probability.
    Certify(CertifyArgs),
    /// Train a tabular agent, with or without the shield.
    Train(TrainArgs),
    /// Exactly verify a shield policy.
    Verify(VerifyArgs),
    /// Best randomized stationary policy on a grid, for tiny models.
    RcopBruteforce(RcopArgs),
    /// Built-in environments.
    #[command(subcommand)]
    Env(EnvCommand),
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Built-in environment name.
    #[arg(long)]
    pub env: Option<String>,
    /// Model file in the JSON MDP format.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = config::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with the same keys as the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Certificate to reuse instead of computing one.
    #[arg(long)]
    pub cert: Option<PathBuf>,
    #[arg(long)]
    pub shielded: bool,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub learning_rate_decay: Option<f64>,
    #[arg(long)]
    pub epsilon_start: Option<f64>,
    #[arg(long)]
    pub epsilon_end: Option<f64>,
    #[arg(long)]
    pub exploration_fraction: Option<f64>,
    #[arg(long)]
    pub total_timesteps: Option<usize>,
    #[arg(long)]
    pub episode_length: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed range such as `0..10`; each seed writes to its own subdirectory.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Number of uniform slack steps K.
    #[arg(long)]
    pub slack_steps: Option<u32>,
    /// Comma-separated profile names, `tight` first.
    #[arg(long, value_delimiter = ',')]
    pub profiles: Option<Vec<String>>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl TrainArgs {
    pub fn run_config(&self) -> CliResult<RunConfig> {
        let file = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let flags = RunConfig {
            env: self.env.clone(),
            model: self.model.clone(),
            cert: self.cert.clone(),
            shielded: self.shielded.then_some(true),
            p: self.p,
            epsilon: self.epsilon,
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            learning_rate_decay: self.learning_rate_decay,
            epsilon_start: self.epsilon_start,
            epsilon_end: self.epsilon_end,
            exploration_fraction: self.exploration_fraction,
            total_timesteps: self.total_timesteps,
            episode_length: self.episode_length,
            seed: self.seed,
            seeds: self.seeds.clone(),
            slack_steps: self.slack_steps,
            profiles: self.profiles.clone(),
            out_dir: self.out_dir.clone(),
        };
        // a model flag replaces an env key from the file and vice versa
        let file = if flags.env.is_some() || flags.model.is_some() {
            RunConfig {
                env: None,
                model: None,
                ..file
            }
        } else {
            file
        };
        Ok(file.overlay(flags))
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub cert: Option<PathBuf>,
    #[arg(long, default_value_t = config::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long)]
    pub p: Option<f64>,
    /// Shield policy written by `train --shielded`.
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, default_value_t = probshield::shield::DEFAULT_SLACK_STEPS)]
    pub slack_steps: u32,
    #[arg(long, value_delimiter = ',')]
    pub profiles: Option<Vec<String>>,
    /// Also estimate the violation probability from this many episodes.
    #[arg(long)]
    pub monte_carlo: Option<usize>,
    /// Also report the discounted value of the lifted policy.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RcopArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub p: f64,
    #[arg(long)]
    pub gamma: f64,
    /// Grid resolution G for two-action states.
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    /// Dirichlet samples for states with more than two actions.
    #[arg(long, default_value_t = probshield::verify::DEFAULT_DIRICHLET_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EnvCommand {
    /// Write a built-in environment as an explicit MDP document.
    Export {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in environments with their default parameters.
    List,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Certify(args) => commands::certify::run(&args),
        Command::Train(args) => commands::train::run(&args),
        Command::Verify(args) => commands::verify::run(&args),
        Command::RcopBruteforce(args) => commands::rcop::run(&args),
        Command::Env(cmd) => commands::env::run(&cmd),
    }
}
