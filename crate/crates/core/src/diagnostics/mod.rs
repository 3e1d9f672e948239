//! Post-hoc checks over run traces.

mod checks;
mod decomposition;
mod weights;

pub use checks::{
    counter_concentration_check, datasets_from_trace, monotone_value_check, pessimism_check, replay_check, ConcentrationReport,
    CounterViolation, MonotoneViolation, PessimismReport, PessimismViolation, ReplayReport, PESSIMISM_TOL,
};
pub use decomposition::{
    verify_d3_bounds, verify_decomposition, DecompositionEntry, DecompositionReport, PenaltyBoundReport, PenaltyViolation, PENALTY_RTOL,
    RESIDUAL_TOL,
};
pub use weights::{
    lambda, max_in_round_stddev, reconstruct_weights, verify_lemma6_bounds, verify_lemma6_trace, weights_from_learning_rates,
    EpisodeWeight, Lemma6Report, TraceIndex, WeightSlice, WeightViolation, BOUND_RTOL,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{value_iteration, TabularMdp};
use crate::trace::RunTrace;

/// Default constant in the counter concentration check.
pub const DEFAULT_C1: f64 = 1.0 / 3.0;

/// Summary of a decomposition run without the per-entry table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSummary {
    pub passed: bool,
    pub entries: usize,
    pub max_abs_residual: f64,
    pub worst: Option<(usize, usize, usize, usize)>,
    pub first_failure: Option<(usize, usize, usize, usize)>,
    pub tolerance: f64,
    pub noise_domination_rate: f64,
}

impl From<&DecompositionReport> for DecompositionSummary {
    fn from(r: &DecompositionReport) -> Self {
        DecompositionSummary {
            passed: r.passed,
            entries: r.entries.len(),
            max_abs_residual: r.max_abs_residual,
            worst: r.worst,
            first_failure: r.first_failure,
            tolerance: r.tolerance,
            noise_domination_rate: r.noise_domination_rate(),
        }
    }
}

/// Everything `verify` reports about one trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceVerification {
    pub passed: bool,
    pub weights: Lemma6Report,
    pub penalty: PenaltyBoundReport,
    pub monotone: Option<MonotoneViolation>,
    pub replay: ReplayReport,
    pub decomposition: Option<DecompositionSummary>,
    pub pessimism: Option<PessimismReport>,
}

/// Runs every trace-level check. The decomposition (against the optimal
/// policy) and pessimism checks need the MDP.
pub fn verify_trace(trace: &RunTrace, mdp: Option<&TabularMdp>) -> Result<TraceVerification> {
    let index = TraceIndex::new(trace)?;
    let weights = verify_lemma6_trace(trace, &index)?;
    let penalty = verify_d3_bounds(trace)?;
    let monotone = monotone_value_check(trace)?;
    let replay = replay_check(trace)?;
    let (decomposition, pessimism) = match mdp {
        Some(mdp) => {
            let (_, best) = value_iteration(mdp);
            let report = verify_decomposition(trace, mdp, &best.to_stochastic())?;
            (Some(DecompositionSummary::from(&report)), Some(pessimism_check(trace, mdp)?))
        }
        None => (None, None),
    };
    let passed = weights.passed
        && penalty.passed
        && monotone.is_none()
        && replay.identical
        && decomposition.as_ref().is_none_or(|d| d.passed)
        && pessimism.as_ref().is_none_or(|p| p.passed);
    Ok(TraceVerification {
        passed,
        weights,
        penalty,
        monotone,
        replay,
        decomposition,
        pessimism,
    })
}
