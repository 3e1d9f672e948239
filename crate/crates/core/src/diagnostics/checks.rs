//! Whole-run checks over a trace: pessimism of the values, monotone values,
//! concentration of the aggregated counters, and bit-exact replay.

use serde::{Deserialize, Serialize};

use crate::data::{OfflineDataset, Trajectory, Transition};
use crate::engine::{run_fedlcbq, AggregationOptions, HyperParams, RunOptions};
use crate::error::{Error, Result};
use crate::mdp::{evaluate_deterministic, value_iteration, DeterministicPolicy, OccupancyTables, TabularMdp};
use crate::trace::RunTrace;

pub const PESSIMISM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PessimismViolation {
    pub sync_index: usize,
    pub episode: usize,
    pub h: usize,
    pub s: usize,
    pub estimate: f64,
    pub policy_value: f64,
    pub optimal_value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PessimismReport {
    pub syncs_checked: usize,
    /// Largest `V_k − V^{π_k}` seen.
    pub max_excess: f64,
    pub violations: Vec<PessimismViolation>,
    pub passed: bool,
}

/// `V_k(s) <= V^{π_k}(s) <= V*(s)` at every sync, step and state, up to
/// [`PESSIMISM_TOL`].
pub fn pessimism_check(trace: &RunTrace, mdp: &TabularMdp) -> Result<PessimismReport> {
    trace.check_complete()?;
    let d = trace.header.dims;
    if mdp.dims() != d {
        return Err(Error::validation("trace and MDP dimensions differ"));
    }
    let (optimal, _) = value_iteration(mdp);
    let mut report = PessimismReport {
        max_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    for snap in &trace.snapshots {
        let policy = DeterministicPolicy::new(d, snap.policy.clone())?;
        let (values, _) = evaluate_deterministic(mdp, &policy)?;
        report.syncs_checked += 1;
        for h in 0..d.horizon {
            for s in 0..d.states {
                let est = snap.global_v[d.hs(h, s)];
                let (vp, vs) = (values.v(h, s), optimal.v(h, s));
                report.max_excess = report.max_excess.max(est - vp);
                if est > vp + PESSIMISM_TOL || vp > vs + PESSIMISM_TOL {
                    report.violations.push(PessimismViolation {
                        sync_index: snap.sync_index,
                        episode: snap.episode,
                        h,
                        s,
                        estimate: est,
                        policy_value: vp,
                        optimal_value: vs,
                    });
                }
            }
        }
    }
    report.passed = report.violations.is_empty();
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneViolation {
    pub sync_index: usize,
    pub h: usize,
    pub s: usize,
    pub before: f64,
    pub after: f64,
}

/// First place where a global value decreased between consecutive syncs.
pub fn monotone_value_check(trace: &RunTrace) -> Result<Option<MonotoneViolation>> {
    trace.check_complete()?;
    let d = trace.header.dims;
    let zero = vec![0.0; (d.horizon + 1) * d.states];
    let mut prev = &zero;
    for snap in &trace.snapshots {
        for (i, (&before, &after)) in prev.iter().zip(&snap.global_v).enumerate() {
            if after < before {
                return Ok(Some(MonotoneViolation {
                    sync_index: snap.sync_index,
                    h: i / d.states,
                    s: i % d.states,
                    before,
                    after,
                }));
            }
        }
        prev = &snap.global_v;
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterViolation {
    pub run: usize,
    pub episode: usize,
    pub cell: (usize, usize, usize),
    pub count: u64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub runs: usize,
    pub violating_runs: usize,
    pub violation_rate: f64,
    pub delta: f64,
    pub passed: bool,
    pub first_violation: Option<CounterViolation>,
}

/// Checks, for every run, episode `k` and cell with average occupancy `d`,
/// that the aggregated count `N_k` (all visits by all agents through `k`)
/// satisfies `kMd/2 <= N_k <= 2kMd` once `k >= K₀ = 4ζ₀/(c₁ M d)` and
/// `N_k <= 8ζ₀/c₁` before, with `ζ₀ = ln(2SAKH/δ)`. Passes when the share
/// of runs with any violation is at most `δ`.
pub fn counter_concentration_check(traces: &[RunTrace], d_avg: &OccupancyTables, delta: f64, c1: f64) -> Result<ConcentrationReport> {
    if traces.is_empty() {
        return Err(Error::validation("no traces to check"));
    }
    let usable = delta > 0.0 && delta < 1.0 && c1 > 0.0;
    if !usable {
        return Err(Error::validation("need delta in (0, 1) and c1 > 0"));
    }
    let mut report = ConcentrationReport {
        runs: traces.len(),
        delta,
        ..Default::default()
    };
    for (run, trace) in traces.iter().enumerate() {
        trace.check_complete()?;
        let hd = &trace.header;
        let d = hd.dims;
        if d_avg.dims != d {
            return Err(Error::validation("occupancy and trace dimensions differ"));
        }
        let m = hd.agents as f64;
        let zeta0 = (2.0 * (d.states * d.actions * hd.episodes * d.horizon) as f64 / delta).ln();
        let early_cap = 8.0 * zeta0 / c1;
        let mut counts = vec![0u64; d.cells()];
        let per_episode = hd.agents * d.horizon;
        let mut bad = None;
        'episodes: for (k0, chunk) in trace.visits.chunks(per_episode).enumerate() {
            for v in chunk {
                counts[d.sa(v.h, v.s, v.a)] += 1;
            }
            let k = (k0 + 1) as f64;
            for (flat, &count) in counts.iter().enumerate() {
                let (h, s, a) = d.unflatten(flat);
                let occ = d_avg.sa(h, s, a);
                let threshold = if occ > 0.0 { 4.0 * zeta0 / (c1 * m * occ) } else { f64::INFINITY };
                let (lower, upper) = if k >= threshold {
                    (0.5 * k * m * occ, 2.0 * k * m * occ)
                } else {
                    (0.0, early_cap)
                };
                let n = count as f64;
                if n < lower || n > upper {
                    bad = Some(CounterViolation {
                        run,
                        episode: k0 + 1,
                        cell: (h, s, a),
                        count,
                        lower,
                        upper,
                    });
                    break 'episodes;
                }
            }
        }
        if let Some(v) = bad {
            report.violating_runs += 1;
            report.first_violation.get_or_insert(v);
        }
    }
    report.violation_rate = report.violating_runs as f64 / report.runs as f64;
    report.passed = report.violation_rate <= delta;
    Ok(report)
}

/// Rebuilds each agent's dataset from the visit records of a trace.
pub fn datasets_from_trace(trace: &RunTrace) -> Result<Vec<OfflineDataset>> {
    trace.check_complete()?;
    let hd = &trace.header;
    let d = hd.dims;
    let mut out: Vec<OfflineDataset> = (0..hd.agents)
        .map(|m| OfflineDataset {
            agent_id: m,
            dims: d,
            trajectories: Vec::with_capacity(hd.episodes),
            behavior_policy_id: "replay".to_string(),
            seed: hd.dataset_seeds.get(m).copied().unwrap_or(0),
        })
        .collect();
    for chunk in trace.visits.chunks(d.horizon) {
        let m = chunk[0].m;
        let steps = chunk
            .iter()
            .map(|v| Transition {
                state: v.s,
                action: v.a,
                reward: v.r,
                next_state: v.next,
            })
            .collect();
        out[m].trajectories.push(Trajectory { steps });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub identical: bool,
    pub snapshots_compared: usize,
    pub first_mismatch: Option<String>,
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Reruns the algorithm on the trace's own data and compares every recorded
/// learning rate and every snapshot bit for bit.
pub fn replay_check(trace: &RunTrace) -> Result<ReplayReport> {
    let datasets = datasets_from_trace(trace)?;
    let hd = &trace.header;
    let hyper = HyperParams {
        delta: hd.delta,
        c_b: hd.c_b,
        zeta1: hd.zeta1,
    };
    let options = RunOptions {
        aggregation: AggregationOptions {
            alpha_gate: hd.alpha_gate,
            clip: hd.clip,
        },
        trace: true,
    };
    let rerun = run_fedlcbq(hd.dims, &datasets, &hd.schedule, &hyper, options)?
        .trace
        .expect("trace requested");
    let mut first_mismatch = None;
    if let Some(i) = trace.visits.iter().zip(&rerun.visits).position(|(a, b)| a.eta.to_bits() != b.eta.to_bits()) {
        first_mismatch = Some(format!("learning rate of visit record {i}"));
    }
    if first_mismatch.is_none() {
        for (a, b) in trace.snapshots.iter().zip(&rerun.snapshots) {
            let same = same_bits(&a.global_q, &b.global_q)
                && same_bits(&a.global_v, &b.global_v)
                && a.policy == b.policy
                && a.n_global == b.n_global
                && a.n_round == b.n_round;
            if !same {
                first_mismatch = Some(format!("snapshot at sync {} (episode {})", a.sync_index, a.episode));
                break;
            }
        }
    }
    Ok(ReplayReport {
        identical: first_mismatch.is_none(),
        snapshots_compared: trace.snapshots.len(),
        first_mismatch,
    })
}
