use super::learner::{AggregationOptions, AggregationRecord, LearnerState};
use super::params::HyperParams;
use super::schedule::SyncSchedule;
use crate::data::{check_datasets, OfflineDataset};
use crate::error::{Error, Result};
use crate::mdp::{DeterministicPolicy, Dims, ValueTables};
use crate::trace::{RunTrace, SyncSnapshot, TraceHeader, VisitRecord};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub aggregation: AggregationOptions,
    pub trace: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    /// `Q̂ = Q_K` and `V_K`, with the zero terminal slice.
    pub values: ValueTables,
    /// `π̂ = π_K`
    pub policy: DeterministicPolicy,
    pub trace: Option<RunTrace>,
}

/// Runs the algorithm over `K` episodes, aggregating at every sync point.
pub fn run_fedlcbq(
    dims: Dims,
    datasets: &[OfflineDataset],
    schedule: &SyncSchedule,
    hyper: &HyperParams,
    options: RunOptions,
) -> Result<RunOutput> {
    run_fedlcbq_with(dims, datasets, schedule, hyper, options, |_, _| {})
}

/// As [`run_fedlcbq`], calling `observer` after every aggregation.
pub fn run_fedlcbq_with<F>(
    dims: Dims,
    datasets: &[OfflineDataset],
    schedule: &SyncSchedule,
    hyper: &HyperParams,
    options: RunOptions,
    mut observer: F,
) -> Result<RunOutput>
where
    F: FnMut(&LearnerState, &AggregationRecord),
{
    let (data_dims, episodes) = check_datasets(datasets)?;
    if data_dims != dims {
        return Err(Error::validation(format!("datasets have dimensions {data_dims:?}, expected {dims:?}")));
    }
    if schedule.episodes != episodes {
        return Err(Error::validation(format!(
            "schedule was built for K = {} but the datasets hold K = {episodes}",
            schedule.episodes
        )));
    }
    let agents = datasets.len();
    let mut state = LearnerState::new(dims, agents)?;
    let mut trace = options.trace.then(|| RunTrace {
        header: TraceHeader {
            dims,
            agents,
            episodes,
            schedule: schedule.clone(),
            delta: hyper.delta,
            c_b: hyper.c_b,
            zeta1: hyper.zeta1,
            alpha_gate: options.aggregation.alpha_gate,
            clip: options.aggregation.clip,
            initial_q: 0.0,
            dataset_seeds: datasets.iter().map(|d| d.seed).collect(),
        },
        visits: Vec::with_capacity(if options.trace { episodes * agents * dims.horizon } else { 0 }),
        snapshots: Vec::with_capacity(schedule.len()),
    });

    for k in 1..=episodes {
        state.begin_episode();
        for (m, ds) in datasets.iter().enumerate() {
            let traj = &ds.trajectories[k - 1];
            let etas = state.local_update_episode(m, traj)?;
            if let Some(tr) = trace.as_mut() {
                for (h, (t, eta)) in traj.steps.iter().zip(etas).enumerate() {
                    tr.visits.push(VisitRecord {
                        k,
                        m,
                        h,
                        s: t.state,
                        a: t.action,
                        r: t.reward,
                        next: t.next_state,
                        eta,
                    });
                }
            }
        }
        if schedule.contains(k) {
            let record = state.global_aggregate(hyper, schedule, options.aggregation)?;
            if let Some(tr) = trace.as_mut() {
                tr.snapshots.push(SyncSnapshot {
                    sync_index: record.sync_index,
                    episode: k,
                    global_q: state.global_q.clone(),
                    global_v: state.global_v.clone(),
                    policy: state.policy.actions.clone(),
                    n_global: record.n_global.clone(),
                    n_round: record.n_round.clone(),
                });
            }
            observer(&state, &record);
        }
    }

    let mut values = ValueTables::zeros(dims);
    values.q[..dims.cells()].copy_from_slice(&state.global_q);
    values.v.copy_from_slice(&state.global_v);
    Ok(RunOutput {
        values,
        policy: state.policy,
        trace,
    })
}
