//! Certified probabilistic shielding for reinforcement learning on finite MDPs.
//!
//! The pipeline: certify an upper bound `β` on the minimal probability of
//! reaching an unsafe state ([`reach`]), build a shield that tracks a
//! remaining risk budget per state ([`shield`]), train agents inside the
//! shielded environment ([`learner`]) and verify the result ([`verify`]).

pub mod envs;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod learner;
pub mod linalg;
pub mod mdp;
pub mod random_models;
pub mod reach;
pub mod shield;
pub mod verify;

pub use error::{Error, Result};
pub use mdp::{induce_chain, pad_actions, Action, Label, MarkovChain, Mdp, MemorylessPolicy, SparseDistribution, StateId};
pub use reach::{interval_iteration, IntervalConfig, SafetyCertificate};
