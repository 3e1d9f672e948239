//! The federated pessimistic Q-learning engine.

mod learner;
mod params;
mod run;
mod schedule;

pub use learner::{AggregationOptions, AggregationRecord, Counters, LearnerState};
pub use params::{compute_alpha, compute_eta, compute_penalty, zeta1, AlphaGate, HyperParams, DEFAULT_C_B, DEFAULT_DELTA};
pub use run::{run_fedlcbq, run_fedlcbq_with, RunOptions, RunOutput};
pub use schedule::{
    build_schedule, exponential_round_bound, first_interval_bound, validate_schedule, ScheduleKind, ScheduleReport,
    SyncSchedule,
};
