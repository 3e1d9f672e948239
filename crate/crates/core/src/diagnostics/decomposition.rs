//! Four-term split of the estimation error `Q^π − Q_k` at every sync and cell:
//!
//! ```text
//! D1 = ω₀ Q^π
//! D2 = Σ_i ω_i (P V_{ι(i)} − V_{ι(i)}(s'_i))          sampling noise
//! D3 = Σ_u B_u Π_{u' > u} λ_{u'}                       accumulated penalty
//! D4 = Σ_i ω_i P (V^π − V_{ι(i)})                      propagated error
//! ```
//!
//! The split is exact for runs started from `Q = 0` without clipping and with
//! the total-count averaging gate; anything left over is a bug.

use serde::{Deserialize, Serialize};

use super::weights::{lambda, round_weights, TraceIndex};
use crate::engine::AlphaGate;
use crate::error::{Error, Result};
use crate::mdp::{evaluate_policy, StochasticPolicy, TabularMdp};
use crate::trace::RunTrace;

/// Absolute tolerance on the identity residual.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionEntry {
    pub sync_index: usize,
    pub episode: usize,
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub n_global: u64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    /// `Q^π − Q_k`
    pub error: f64,
    /// `error − (D1 + D2 + D3 + D4)`
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub entries: Vec<DecompositionEntry>,
    pub max_abs_residual: f64,
    /// `(k, h, s, a)` of the largest residual.
    pub worst: Option<(usize, usize, usize, usize)>,
    /// First entry over tolerance, in (sync, cell) order.
    pub first_failure: Option<(usize, usize, usize, usize)>,
    pub tolerance: f64,
    pub passed: bool,
    /// Entries with `N > 0`.
    pub visited_entries: usize,
    /// Of those, how many have `|D2| <= D3`.
    pub noise_dominated: usize,
}

impl DecompositionReport {
    pub fn noise_domination_rate(&self) -> f64 {
        if self.visited_entries == 0 {
            1.0
        } else {
            self.noise_dominated as f64 / self.visited_entries as f64
        }
    }
}

/// Penalty of one round from its counters; kept separate from the engine's
/// copy on purpose.
fn round_penalty(horizon: usize, n_global: u64, n_round: u64, zeta1: f64, c_b: f64) -> f64 {
    if n_global == 0 {
        return 0.0;
    }
    let h = horizon as f64;
    let share = (h + 1.0) * n_round as f64 / (n_global as f64 + h * n_round as f64);
    share * (c_b * zeta1 * zeta1 * h.powi(4) / n_global as f64).sqrt()
}

/// `D3` at every sync for one flat cell index.
pub(crate) fn d3_series(trace: &RunTrace, flat: usize) -> Vec<f64> {
    let hd = &trace.header;
    let horizon = hd.dims.horizon;
    let mut acc = 0.0;
    trace
        .snapshots
        .iter()
        .map(|snap| {
            let (big, small) = (snap.n_global[flat], snap.n_round[flat]);
            acc = lambda(horizon, big, small) * acc + round_penalty(horizon, big, small, hd.zeta1, hd.c_b);
            acc
        })
        .collect()
}

fn check_decomposable(trace: &RunTrace) -> Result<()> {
    let hd = &trace.header;
    if hd.initial_q != 0.0 {
        return Err(Error::validation(format!(
            "decomposition needs a run started from Q = 0, trace has initial_q = {}",
            hd.initial_q
        )));
    }
    if hd.clip {
        return Err(Error::validation("decomposition is not exact for runs with clipping"));
    }
    if hd.alpha_gate != AlphaGate::TotalCount {
        return Err(Error::validation("decomposition needs the total-count averaging gate"));
    }
    Ok(())
}

/// Evaluates every term at every sync and cell of `trace` against the
/// comparator `policy`.
pub fn verify_decomposition(trace: &RunTrace, mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<DecompositionReport> {
    check_decomposable(trace)?;
    let index = TraceIndex::new(trace)?;
    let d = trace.header.dims;
    if mdp.dims() != d {
        return Err(Error::validation("trace and MDP dimensions differ"));
    }
    let (comparator, _) = evaluate_policy(mdp, policy, mdp.initial())?;
    let rounds = trace.snapshots.len();
    let zero_v = vec![0.0; (d.horizon + 1) * d.states];
    let v_before = |u: usize| -> &[f64] {
        if u == 0 {
            &zero_v
        } else {
            &trace.snapshots[u - 1].global_v
        }
    };

    let mut entries = Vec::with_capacity(rounds * d.cells());
    for flat in 0..d.cells() {
        let (h, s, a) = d.unflatten(flat);
        let next = mdp.next_dist(h, s, a);
        // per-round sums of the noise and propagation terms
        let mut noise = vec![0.0; rounds];
        let mut propagated = vec![0.0; rounds];
        for u in 0..rounds {
            let bucket = &index.buckets[flat][u];
            if bucket.is_empty() {
                continue;
            }
            let v_next = &v_before(u)[(h + 1) * d.states..(h + 2) * d.states];
            let expected: f64 = next.iter().zip(v_next).map(|(p, v)| p * v).sum();
            let gap: f64 = next
                .iter()
                .zip(comparator.v_slice(h + 1))
                .zip(v_next)
                .map(|((p, vp), v)| p * (vp - v))
                .sum();
            for &i in bucket {
                noise[u] += expected - v_next[trace.visits[i].next];
                propagated[u] += gap;
            }
        }
        let d3 = d3_series(trace, flat);
        let n_global: Vec<u64> = trace.snapshots.iter().map(|sn| sn.n_global[flat]).collect();
        let n_round: Vec<u64> = trace.snapshots.iter().map(|sn| sn.n_round[flat]).collect();
        let q_pi = comparator.q(h, s, a);
        for v in 0..rounds {
            let snap = &trace.snapshots[v];
            let (mut d1, mut d2, mut d4) = (0.0, 0.0, 0.0);
            if n_global[v] == 0 {
                d1 = q_pi;
            } else {
                let w = round_weights(d.horizon, &n_global[..=v], &n_round[..=v]);
                for u in 0..=v {
                    d2 += w[u] * noise[u];
                    d4 += w[u] * propagated[u];
                }
            }
            let error = q_pi - snap.global_q[flat];
            let residual = error - (d1 + d2 + d3[v] + d4);
            entries.push(DecompositionEntry {
                sync_index: v + 1,
                episode: snap.episode,
                h,
                s,
                a,
                n_global: n_global[v],
                d1,
                d2,
                d3: d3[v],
                d4,
                error,
                residual,
            });
        }
    }
    entries.sort_by_key(|e| (e.sync_index, e.h, e.s, e.a));
    Ok(summarize(entries, RESIDUAL_TOL))
}

fn summarize(entries: Vec<DecompositionEntry>, tolerance: f64) -> DecompositionReport {
    let mut max_abs_residual: f64 = 0.0;
    let mut worst = None;
    let mut first_failure = None;
    let (mut visited_entries, mut noise_dominated) = (0, 0);
    for e in &entries {
        let r = e.residual.abs();
        let key = (e.episode, e.h, e.s, e.a);
        if r > max_abs_residual || r.is_nan() {
            max_abs_residual = if r.is_nan() { f64::INFINITY } else { r };
            worst = Some(key);
        }
        if first_failure.is_none() && (r > tolerance || r.is_nan()) {
            first_failure = Some(key);
        }
        if e.n_global > 0 {
            visited_entries += 1;
            if e.d2.abs() <= e.d3 {
                noise_dominated += 1;
            }
        }
    }
    DecompositionReport {
        passed: first_failure.is_none(),
        entries,
        max_abs_residual,
        worst,
        first_failure,
        tolerance,
        visited_entries,
        noise_dominated,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyViolation {
    pub sync_index: usize,
    pub cell: (usize, usize, usize),
    pub d3: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PenaltyBoundReport {
    pub checked: usize,
    pub passed: bool,
    pub violations: Vec<PenaltyViolation>,
}

/// Relative slack on the bracket below.
pub const PENALTY_RTOL: f64 = 1e-12;

/// `sqrt(c_B ζ₁² H⁴ / N) <= D3 <= 2 sqrt(c_B ζ₁² H⁴ / N)` wherever `N > 0`,
/// and `D3 = 0` where `N = 0`.
pub fn verify_d3_bounds(trace: &RunTrace) -> Result<PenaltyBoundReport> {
    trace.check_complete()?;
    let hd = &trace.header;
    let d = hd.dims;
    let h4 = (d.horizon as f64).powi(4);
    let mut report = PenaltyBoundReport::default();
    for flat in 0..d.cells() {
        for (v, d3) in d3_series(trace, flat).into_iter().enumerate() {
            let big = trace.snapshots[v].n_global[flat];
            if big == 0 {
                // nothing aggregated yet: no penalty either
                if d3 != 0.0 {
                    report.violations.push(PenaltyViolation {
                        sync_index: v + 1,
                        cell: d.unflatten(flat),
                        d3,
                        lower: 0.0,
                        upper: 0.0,
                    });
                }
                continue;
            }
            report.checked += 1;
            let lower = (hd.c_b * hd.zeta1 * hd.zeta1 * h4 / big as f64).sqrt();
            let upper = 2.0 * lower;
            if d3 < lower * (1.0 - PENALTY_RTOL) || d3 > upper * (1.0 + PENALTY_RTOL) {
                report.violations.push(PenaltyViolation {
                    sync_index: v + 1,
                    cell: d.unflatten(flat),
                    d3,
                    lower,
                    upper,
                });
            }
        }
    }
    report.passed = report.violations.is_empty();
    Ok(report)
}
