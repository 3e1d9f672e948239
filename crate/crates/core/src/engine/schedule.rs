//! Synchronization schedules `𝒯(K)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative nudge applied before flooring `(1+γ)τ`, so that products which
/// are integers in exact arithmetic do not floor one below.
const FLOOR_NUDGE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Sync every `tau` episodes.
    Periodic { tau: usize },
    /// `τ₁ = tau1` (default `H`), `τ_i = ⌊(1+γ) τ_{i-1}⌋`.
    Exponential {
        gamma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau1: Option<usize>,
    },
    Explicit { points: Vec<usize> },
}

impl ScheduleKind {
    pub fn label(&self) -> String {
        match self {
            ScheduleKind::Periodic { tau } => format!("periodic(tau={tau})"),
            ScheduleKind::Exponential { gamma, tau1: None } => format!("exponential(gamma={gamma})"),
            ScheduleKind::Exponential { gamma, tau1: Some(t) } => format!("exponential(gamma={gamma},tau1={t})"),
            ScheduleKind::Explicit { points } => format!("explicit({})", points.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncSchedule {
    pub kind: ScheduleKind,
    pub episodes: usize,
    /// Strictly increasing, ends at `episodes`.
    pub points: Vec<usize>,
}

impl SyncSchedule {
    /// `τ_u = t_u - t_{u-1}` with `t_0 = 0`.
    pub fn intervals(&self) -> Vec<usize> {
        let mut prev = 0;
        self.points
            .iter()
            .map(|&t| {
                let tau = t - prev;
                prev = t;
                tau
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.points.binary_search(&k).is_ok()
    }

    /// `ι(k)`: last sync strictly before episode `k`, or 0.
    pub fn last_sync_before(&self, k: usize) -> usize {
        let idx = self.points.partition_point(|&t| t < k);
        if idx == 0 {
            0
        } else {
            self.points[idx - 1]
        }
    }

    /// `φ(k)`: 1-based index of the first sync at or after episode `k`.
    pub fn round_of(&self, k: usize) -> usize {
        self.points.partition_point(|&t| t < k) + 1
    }

    fn check(&self) -> Result<()> {
        if self.points.last() != Some(&self.episodes) {
            return Err(Error::validation(format!("schedule must end at K = {}", self.episodes)));
        }
        let mut prev = 0;
        for (u, &t) in self.points.iter().enumerate() {
            if t <= prev {
                return Err(Error::validation(format!(
                    "sync points must be strictly increasing and positive (t_{} = {t} after {prev})",
                    u + 1
                )));
            }
            prev = t;
        }
        Ok(())
    }
}

pub fn build_schedule(kind: &ScheduleKind, episodes: usize, horizon: usize) -> Result<SyncSchedule> {
    if episodes == 0 {
        return Err(Error::validation("K must be at least 1"));
    }
    let points = match kind {
        ScheduleKind::Periodic { tau } => {
            if *tau == 0 {
                return Err(Error::validation("periodic schedule needs tau >= 1"));
            }
            let mut pts: Vec<usize> = (1..).map(|i| i * tau).take_while(|&t| t < episodes).collect();
            pts.push(episodes);
            pts
        }
        ScheduleKind::Exponential { gamma, tau1 } => {
            if !(gamma.is_finite() && *gamma > 0.0) {
                return Err(Error::validation(format!("exponential schedule needs gamma > 0, got {gamma}")));
            }
            let mut tau = tau1.unwrap_or(horizon);
            if tau == 0 {
                return Err(Error::validation("exponential schedule needs tau1 >= 1"));
            }
            let mut pts = Vec::new();
            let mut t = 0;
            loop {
                if t + tau >= episodes {
                    pts.push(episodes);
                    break;
                }
                t += tau;
                pts.push(t);
                let next = ((1.0 + gamma) * tau as f64 * (1.0 + FLOOR_NUDGE)).floor() as usize;
                tau = next.max(tau);
            }
            pts
        }
        ScheduleKind::Explicit { points } => points.clone(),
    };
    let schedule = SyncSchedule {
        kind: kind.clone(),
        episodes,
        points,
    };
    schedule.check()?;
    Ok(schedule)
}

/// Outcome of checking the interval conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub passed: bool,
    pub first_interval_ok: bool,
    pub ratios_ok: bool,
    /// 1-based `u` of the first pair `(τ_u, τ_{u+1})` breaking the ratio bound.
    pub first_violation: Option<usize>,
    pub ratios: Vec<f64>,
    pub message: String,
}

/// Checks `τ₁ <= bound_tau1` and `τ_{u+1}/τ_u <= 1 + 2/H` for every `u`. The
/// ratio test is done in integers as `τ_{u+1}·H <= τ_u·(H+2)`.
pub fn validate_schedule(schedule: &SyncSchedule, horizon: usize, bound_tau1: f64) -> ScheduleReport {
    let taus = schedule.intervals();
    let first_interval_ok = taus.first().is_some_and(|&t| t as f64 <= bound_tau1);
    let ratios: Vec<f64> = taus.windows(2).map(|w| w[1] as f64 / w[0] as f64).collect();
    let first_violation = taus
        .windows(2)
        .position(|w| w[1] * horizon > w[0] * (horizon + 2))
        .map(|i| i + 1);
    let ratios_ok = first_violation.is_none();
    let message = match (first_interval_ok, first_violation) {
        (true, None) => "ok".to_string(),
        (false, _) => format!("tau_1 = {} exceeds bound {bound_tau1}", taus.first().copied().unwrap_or(0)),
        (true, Some(u)) => format!(
            "tau_{} / tau_{} = {} / {} exceeds 1 + 2/H = {}",
            u + 1,
            u,
            taus[u],
            taus[u - 1],
            1.0 + 2.0 / horizon as f64
        ),
    };
    ScheduleReport {
        passed: first_interval_ok && ratios_ok,
        first_interval_ok,
        ratios_ok,
        first_violation,
        ratios,
        message,
    }
}

/// Upper bound `1 + (1+H) ln(K/H² + 1)` on the number of exponential syncs
/// with `γ = 2/H`, `τ₁ = H`.
pub fn exponential_round_bound(episodes: usize, horizon: usize) -> f64 {
    let h = horizon as f64;
    1.0 + (1.0 + h) * (episodes as f64 / (h * h) + 1.0).ln()
}

/// First-interval bound `sqrt(H² S C*_avg K / M)`.
pub fn first_interval_bound(horizon: usize, states: usize, c_avg: f64, episodes: usize, agents: usize) -> f64 {
    let h = horizon as f64;
    (h * h * states as f64 * c_avg * episodes as f64 / agents as f64).sqrt()
}
