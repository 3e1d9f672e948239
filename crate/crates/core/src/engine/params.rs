//! Learning rates, averaging weights and the global penalty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_C_B: f64 = 81.0;
pub const DEFAULT_DELTA: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub delta: f64,
    pub c_b: f64,
    /// `ln(S·A·K²·M·H / δ)`, natural log.
    pub zeta1: f64,
}

/// `ζ₁ = ln(S·A·K²·M·H / δ)`.
pub fn zeta1(states: usize, actions: usize, episodes: usize, agents: usize, horizon: usize, delta: f64) -> f64 {
    let k = episodes as f64;
    (states as f64 * actions as f64 * k * k * agents as f64 * horizon as f64 / delta).ln()
}

impl HyperParams {
    /// Requires `δ ∈ (0,1)` and `c_B > 0`.
    pub fn new(states: usize, actions: usize, episodes: usize, agents: usize, horizon: usize, delta: f64, c_b: f64) -> Result<Self> {
        if !(c_b.is_finite() && c_b > 0.0) {
            return Err(Error::validation(format!("c_B must be positive, got {c_b} (c_B = 0 needs ablation mode)")));
        }
        Self::build(states, actions, episodes, agents, horizon, delta, c_b)
    }

    /// Like [`HyperParams::new`] but also accepts `c_B = 0`.
    pub fn ablation(states: usize, actions: usize, episodes: usize, agents: usize, horizon: usize, delta: f64, c_b: f64) -> Result<Self> {
        if !(c_b.is_finite() && c_b >= 0.0) {
            return Err(Error::validation(format!("c_B must be non-negative, got {c_b}")));
        }
        Self::build(states, actions, episodes, agents, horizon, delta, c_b)
    }

    fn build(states: usize, actions: usize, episodes: usize, agents: usize, horizon: usize, delta: f64, c_b: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::validation(format!("delta must lie in (0, 1), got {delta}")));
        }
        if states == 0 || actions == 0 || episodes == 0 || agents == 0 || horizon == 0 {
            return Err(Error::validation("S, A, K, M, H must all be positive"));
        }
        Ok(HyperParams {
            delta,
            c_b,
            zeta1: zeta1(states, actions, episodes, agents, horizon, delta),
        })
    }
}

/// How the averaging weights treat agents that did not visit a cell in the
/// current round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaGate {
    /// Gate on the round total `n > 0`; every agent gets the weighted formula.
    /// The weights then sum to one.
    #[default]
    TotalCount,
    /// Gate per agent on `n^m > 0`, else `1/M`. Ablation only: the weights no
    /// longer sum to one.
    PerAgent,
}

/// `η = M(H+1) / (N_prev + M(H+1) n^m)`, called after incrementing `n^m`.
pub fn compute_eta(agents: usize, horizon: usize, n_prev: u64, n_local: u64) -> Result<f64> {
    if n_local == 0 {
        return Err(Error::contract("learning rate requested for a cell with zero local visits"));
    }
    let scale = (agents * (horizon + 1)) as f64;
    Ok(scale / (n_prev as f64 + scale * n_local as f64))
}

/// Importance-averaging weight of one agent at one cell.
pub fn compute_alpha(agents: usize, horizon: usize, n_prev: u64, n_local: u64, n_new: u64, n_round: u64) -> Result<f64> {
    if n_new != n_prev + n_round {
        return Err(Error::contract(format!(
            "inconsistent counters: N_new = {n_new} but N_prev + n = {}",
            n_prev + n_round
        )));
    }
    if n_local > n_round {
        return Err(Error::contract(format!("agent count {n_local} exceeds round total {n_round}")));
    }
    let m = agents as f64;
    if n_round == 0 {
        return Ok(1.0 / m);
    }
    let h = horizon as f64;
    Ok((n_prev as f64 + (h + 1.0) * m * n_local as f64) / (m * (n_new as f64 + h * n_round as f64)))
}

/// Global penalty `B = ((H+1) n / (N + H n)) · sqrt(c_B ζ₁² H⁴ / N)`, zero when `N = 0`.
pub fn compute_penalty(horizon: usize, n_new: u64, n_round: u64, zeta1: f64, c_b: f64) -> f64 {
    if n_new == 0 {
        return 0.0;
    }
    let h = horizon as f64;
    let (big, small) = (n_new as f64, n_round as f64);
    (h + 1.0) * small / (big + h * small) * (c_b * zeta1 * zeta1 * h.powi(4) / big).sqrt()
}
