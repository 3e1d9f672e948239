//! Closed-form episode weights of the error decomposition and their bounds.
//!
//! For a sync `v` and a cell with per-round counters `N_u`, `n_u`
//! (`N_0 = 0`), every visit made during round `u <= v` carries the weight
//!
//! ```text
//! ω(u) = (H+1) / (N_v + H n_v) · Π_{x=u}^{v-1} N_x / (N_x + H n_x)
//! ```
//!
//! and the previous global estimate is carried forward by
//! `λ_u = N_{u-1} / (N_u + H n_u)` (1 when `N_u = 0`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{RunTrace, VisitRecord};

/// Relative slack for floating-point comparisons against the bounds.
pub const BOUND_RTOL: f64 = 1e-12;

/// Visit indices bucketed by cell and sync round.
#[derive(Clone, Debug)]
pub struct TraceIndex {
    /// `[cell][round u - 1]` -> indices into `trace.visits`
    pub buckets: Vec<Vec<Vec<usize>>>,
}

impl TraceIndex {
    pub fn new(trace: &RunTrace) -> Result<Self> {
        trace.check_complete()?;
        let d = trace.header.dims;
        let schedule = &trace.header.schedule;
        let mut buckets = vec![vec![Vec::new(); schedule.len()]; d.cells()];
        for (i, v) in trace.visits.iter().enumerate() {
            let round = schedule.round_of(v.k);
            buckets[d.sa(v.h, v.s, v.a)][round - 1].push(i);
        }
        Ok(TraceIndex { buckets })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeWeight {
    /// Episode index `i`.
    pub episode: usize,
    pub agent: usize,
    pub round: usize,
    pub weight: f64,
}

/// Weights of one cell at one sync.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSlice {
    pub sync_index: usize,
    pub episode: usize,
    pub cell: (usize, usize, usize),
    /// `λ_u` for `u = 1..=v`.
    pub lambdas: Vec<f64>,
    pub omega0: f64,
    /// `N_{t_u}` for `u = 1..=v`.
    pub n_global: Vec<u64>,
    /// `n_{t_u}` for `u = 1..=v`.
    pub n_round: Vec<u64>,
    pub weights: Vec<EpisodeWeight>,
}

impl WeightSlice {
    /// `N_k + H n_k` at the slice's own sync.
    pub fn denominator(&self, horizon: usize) -> f64 {
        let v = self.n_global.len() - 1;
        self.n_global[v] as f64 + horizon as f64 * self.n_round[v] as f64
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().map(|w| w.weight).sum()
    }

    pub fn lambda_product(&self) -> f64 {
        self.lambdas.iter().product()
    }
}

/// `λ_u` from round counters.
pub fn lambda(horizon: usize, n_global: u64, n_round: u64) -> f64 {
    if n_global == 0 {
        1.0
    } else {
        (n_global - n_round) as f64 / (n_global as f64 + horizon as f64 * n_round as f64)
    }
}

/// Per-round weights `ω(u)` for `u = 1..=v` from the recorded counters.
pub(crate) fn round_weights(horizon: usize, n_global: &[u64], n_round: &[u64]) -> Vec<f64> {
    let h = horizon as f64;
    let v = n_global.len() - 1;
    let head = (h + 1.0) / (n_global[v] as f64 + h * n_round[v] as f64);
    let mut out = vec![0.0; v + 1];
    let mut carry = 1.0;
    for u in (0..=v).rev() {
        if u < v && n_global[u] > 0 {
            carry *= n_global[u] as f64 / (n_global[u] as f64 + h * n_round[u] as f64);
        }
        out[u] = head * carry;
    }
    out
}

fn sync_position(trace: &RunTrace, k: usize) -> Result<usize> {
    trace
        .header
        .schedule
        .points
        .binary_search(&k)
        .map_err(|_| Error::contract(format!("episode {k} is not a sync point of this trace")))
}

/// Rebuilds `λ`, `ω₀` and the per-episode `ω_i` for `cell` at sync episode `k`.
pub fn reconstruct_weights(trace: &RunTrace, index: &TraceIndex, cell: (usize, usize, usize), k: usize) -> Result<WeightSlice> {
    let d = trace.header.dims;
    let (h, s, a) = cell;
    if h >= d.horizon || s >= d.states || a >= d.actions {
        return Err(Error::validation(format!("cell {cell:?} out of range")));
    }
    let v = sync_position(trace, k)?;
    let flat = d.sa(h, s, a);
    let n_global: Vec<u64> = trace.snapshots[..=v].iter().map(|sn| sn.n_global[flat]).collect();
    let n_round: Vec<u64> = trace.snapshots[..=v].iter().map(|sn| sn.n_round[flat]).collect();
    let lambdas = n_global.iter().zip(&n_round).map(|(&big, &small)| lambda(d.horizon, big, small)).collect();
    let omega0 = if n_global[v] == 0 { 1.0 } else { 0.0 };
    let mut weights = Vec::new();
    if n_global[v] > 0 {
        let per_round = round_weights(d.horizon, &n_global, &n_round);
        for (u, bucket) in index.buckets[flat][..=v].iter().enumerate() {
            for &i in bucket {
                let rec = &trace.visits[i];
                weights.push(EpisodeWeight {
                    episode: rec.k,
                    agent: rec.m,
                    round: u + 1,
                    weight: per_round[u],
                });
            }
        }
    }
    Ok(WeightSlice {
        sync_index: v + 1,
        episode: k,
        cell,
        lambdas,
        omega0,
        n_global,
        n_round,
        weights,
    })
}

/// Second route to the weights: products of the learning rates actually
/// applied (read from the trace) times the averaging weights, carried
/// forward by the share each aggregation leaves on the previous estimate.
pub fn weights_from_learning_rates(trace: &RunTrace, index: &TraceIndex, cell: (usize, usize, usize), k: usize) -> Result<Vec<EpisodeWeight>> {
    let hd = &trace.header;
    let d = hd.dims;
    let (agents, horizon) = (hd.agents, d.horizon);
    let v = sync_position(trace, k)?;
    let flat = d.sa(cell.0, cell.1, cell.2);
    // per round: (episode, agent, weight inside the round) and the carry factor
    let mut rounds: Vec<(Vec<EpisodeWeight>, f64)> = Vec::with_capacity(v + 1);
    for (u, bucket) in index.buckets[flat][..=v].iter().enumerate() {
        let snap = &trace.snapshots[u];
        let (n_new, n) = (snap.n_global[flat], snap.n_round[flat]);
        let n_prev = n_new - n;
        let mut by_agent: Vec<Vec<&VisitRecord>> = vec![Vec::new(); agents];
        for &i in bucket {
            by_agent[trace.visits[i].m].push(&trace.visits[i]);
        }
        let mut entries = Vec::new();
        let mut carry = 0.0;
        for (m, visits) in by_agent.iter().enumerate() {
            let alpha = crate::engine::compute_alpha(agents, horizon, n_prev, visits.len() as u64, n_new, n)?;
            let mut keep = 1.0;
            for rec in visits.iter().rev() {
                entries.push(EpisodeWeight {
                    episode: rec.k,
                    agent: m,
                    round: u + 1,
                    weight: alpha * rec.eta * keep,
                });
                keep *= 1.0 - rec.eta;
            }
            carry += alpha * keep;
        }
        rounds.push((entries, carry));
    }
    let mut out = Vec::new();
    let mut forward = 1.0;
    for (entries, carry) in rounds.into_iter().rev() {
        for mut e in entries {
            e.weight *= forward;
            out.push(e);
        }
        forward *= carry;
    }
    out.sort_by_key(|e| (e.episode, e.agent));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightViolation {
    pub check: String,
    pub sync_index: usize,
    pub episode: usize,
    pub cell: (usize, usize, usize),
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Lemma6Report {
    pub slices_checked: usize,
    pub passed: bool,
    pub violations: Vec<WeightViolation>,
    /// Largest standard deviation of the weights within one round.
    pub max_in_round_stddev: f64,
}

fn le(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs * (1.0 + BOUND_RTOL) + f64::MIN_POSITIVE
}

/// Bounds on one slice: max weight, total weight, per-round partial sums,
/// sum of squares, and the telescoping identity `Σω = 1 − Πλ`.
pub fn verify_lemma6_bounds(slice: &WeightSlice, horizon: usize) -> Vec<WeightViolation> {
    let mut out = Vec::new();
    let mut fail = |check: &str, lhs: f64, rhs: f64| {
        out.push(WeightViolation {
            check: check.to_string(),
            sync_index: slice.sync_index,
            episode: slice.episode,
            cell: slice.cell,
            lhs,
            rhs,
        })
    };
    if slice.weights.is_empty() {
        if slice.omega0 != 1.0 && slice.n_global.last() == Some(&0) {
            fail("omega0", slice.omega0, 1.0);
        }
        return out;
    }
    let denom = slice.denominator(horizon);
    let h = horizon as f64;
    let wmax = 2.0 * h / denom;
    if let Some(w) = slice.weights.iter().map(|w| w.weight).reduce(f64::max) {
        if !le(w, wmax) {
            fail("max_weight", w, wmax);
        }
    }
    if slice.weights.iter().any(|w| w.weight < 0.0) {
        fail("non_negative", -1.0, 0.0);
    }
    let total = slice.weight_sum();
    if !le(total, 1.0) {
        fail("weight_sum", total, 1.0);
    }
    let sq: f64 = slice.weights.iter().map(|w| w.weight * w.weight).sum();
    if !le(sq, wmax) {
        fail("square_sum", sq, wmax);
    }
    for (u, &n_u) in slice.n_round.iter().enumerate() {
        let partial: f64 = slice.weights.iter().filter(|w| w.round == u + 1).map(|w| w.weight).sum();
        let bound = (h + 1.0) * n_u as f64 / denom;
        if !le(partial, bound) {
            fail(&format!("round_sum[{}]", u + 1), partial, bound);
        }
    }
    let telescoped = 1.0 - slice.lambda_product();
    if (total - telescoped).abs() > 1e-12 {
        fail("telescoping", total, telescoped);
    }
    if (total + slice.omega0 - 1.0).abs() > 1e-12 {
        fail("weights_plus_omega0", total + slice.omega0, 1.0);
    }
    out
}

/// Population standard deviation of the weights inside each round; the
/// largest over rounds.
pub fn max_in_round_stddev(slice: &WeightSlice) -> f64 {
    let rounds = slice.n_round.len();
    let mut worst: f64 = 0.0;
    for u in 1..=rounds {
        let ws: Vec<f64> = slice.weights.iter().filter(|w| w.round == u).map(|w| w.weight).collect();
        if ws.windows(2).all(|p| p[0] == p[1]) {
            continue;
        }
        let mean = ws.iter().sum::<f64>() / ws.len() as f64;
        let var = ws.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / ws.len() as f64;
        worst = worst.max(var.sqrt());
    }
    worst
}

/// Runs [`verify_lemma6_bounds`] on every cell at every sync of a trace.
pub fn verify_lemma6_trace(trace: &RunTrace, index: &TraceIndex) -> Result<Lemma6Report> {
    let d = trace.header.dims;
    let mut report = Lemma6Report::default();
    for &k in &trace.header.schedule.points {
        for cell in 0..d.cells() {
            let slice = reconstruct_weights(trace, index, d.unflatten(cell), k)?;
            report.violations.extend(verify_lemma6_bounds(&slice, d.horizon));
            report.max_in_round_stddev = report.max_in_round_stddev.max(max_in_round_stddev(&slice));
            report.slices_checked += 1;
        }
    }
    report.passed = report.violations.is_empty() && report.max_in_round_stddev == 0.0;
    Ok(report)
}
