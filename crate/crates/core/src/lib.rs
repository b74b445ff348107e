//! Simulator and solvers for "stuck in traffic" attacks: an adversary jams
//! a fraction of the vehicle-to-access-point signals on one road segment so
//! the decision point under-reports its load and misdirects arriving
//! traffic, trading the resulting imbalance against the cost of jamming.
//!
//! * [`traffic`]: queue dynamics and the distorted observation.
//! * [`mdp`]: actions, damage, cost and one-step expectations.
//! * [`exact`]: discretized MDP solved by policy and value iteration.
//! * [`api`]: approximate policy iteration with linear features.
//! * [`policy`] / [`eval`]: baselines and the evaluation harness.
//! * [`scenario`] / [`cli`]: JSON scenarios and the `sit` command line.

pub mod api;
pub mod cli;
pub mod error;
pub mod eval;
pub mod exact;
pub mod mdp;
pub mod policy;
pub mod scenario;
pub mod seed;
pub mod traffic;

pub use error::{Error, Result};
