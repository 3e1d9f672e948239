//! Federated offline Q-learning with pessimistic aggregation on tabular
//! episodic MDPs, with exact dynamic-programming ground truth and
//! diagnostics that replay a run's episode weights.
//!
//! - [`mdp`]: MDPs, value iteration, policy evaluation, occupancy and
//!   concentrability.
//! - [`data`]: behavior policies, dataset sampling and persistence.
//! - [`engine`]: local updates, aggregation, schedules.
//! - [`diagnostics`]: weight reconstruction, error decomposition, bound checks.
//! - [`harness`]: experiment configs, metrics and sweeps behind the CLI.

pub mod data;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod gen;
pub mod harness;
pub mod mdp;
pub mod trace;

pub use error::{Error, Result};
