//! Per-agent local Q-learning and server-side pessimistic aggregation.

use serde::{Deserialize, Serialize};

use super::params::{compute_alpha, compute_eta, compute_penalty, AlphaGate, HyperParams};
use super::schedule::SyncSchedule;
use crate::data::Trajectory;
use crate::error::{Error, Result};
use crate::mdp::{argmax_first, DeterministicPolicy, Dims};

/// Visitation counters, all indexed `[h][s][a]` over the decision steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    /// `n^m`: visits by agent `m` since the last sync.
    pub n_local: Vec<Vec<u64>>,
    /// `N`: aggregated visits up to the last aggregation.
    pub n_global: Vec<u64>,
    /// `n = Σ_m n^m` for the round being aggregated; zero between syncs.
    pub n_round: Vec<u64>,
    /// `N_{ι(k)}`: the global counter at the last sync, used by the learning rate.
    pub n_prev: Vec<u64>,
}

impl Counters {
    fn new(dims: Dims, agents: usize) -> Self {
        Counters {
            n_local: vec![vec![0; dims.cells()]; agents],
            n_global: vec![0; dims.cells()],
            n_round: vec![0; dims.cells()],
            n_prev: vec![0; dims.cells()],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationOptions {
    pub alpha_gate: AlphaGate,
    /// Clip the aggregated Q to `[0, H-h]` before the value update.
    pub clip: bool,
}

/// What one aggregation step computed, before counters were rolled.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationRecord {
    pub episode: usize,
    pub sync_index: usize,
    /// `n_{k}` per cell.
    pub n_round: Vec<u64>,
    /// `N_{k}` per cell.
    pub n_global: Vec<u64>,
    /// `B_{k}` per cell.
    pub penalty: Vec<f64>,
}

/// All local and global tables of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerState {
    pub dims: Dims,
    pub agents: usize,
    /// `[m][h][s][a]`
    pub local_q: Vec<Vec<f64>>,
    /// `[m][h][s]` for `h ∈ [0, H]`; frozen at the last sync.
    pub local_v: Vec<Vec<f64>>,
    /// `[h][s][a]`
    pub global_q: Vec<f64>,
    /// `[h][s]` for `h ∈ [0, H]`
    pub global_v: Vec<f64>,
    pub policy: DeterministicPolicy,
    pub counters: Counters,
    /// Current episode `k`; 0 before the first episode.
    pub episode: usize,
    /// Number of aggregations performed so far.
    pub sync_index: usize,
}

impl LearnerState {
    pub fn new(dims: Dims, agents: usize) -> Result<Self> {
        if agents == 0 {
            return Err(Error::validation("at least one agent is required"));
        }
        let v_len = (dims.horizon + 1) * dims.states;
        Ok(LearnerState {
            dims,
            agents,
            local_q: vec![vec![0.0; dims.cells()]; agents],
            local_v: vec![vec![0.0; v_len]; agents],
            global_q: vec![0.0; dims.cells()],
            global_v: vec![0.0; v_len],
            policy: DeterministicPolicy::zeros(dims),
            counters: Counters::new(dims, agents),
            episode: 0,
            sync_index: 0,
        })
    }

    pub fn begin_episode(&mut self) {
        self.episode += 1;
    }

    /// Local Q-learning on one trajectory of agent `m`. Returns the learning
    /// rate applied at each step. The local value table is left untouched:
    /// targets bootstrap from the snapshot received at the last sync.
    pub fn local_update_episode(&mut self, m: usize, trajectory: &Trajectory) -> Result<Vec<f64>> {
        let d = self.dims;
        if m >= self.agents {
            return Err(Error::validation(format!("agent {m} out of range [0, {})", self.agents)));
        }
        if trajectory.steps.len() != d.horizon {
            return Err(Error::validation(format!(
                "trajectory has {} steps, expected H = {}",
                trajectory.steps.len(),
                d.horizon
            )));
        }
        let mut etas = Vec::with_capacity(d.horizon);
        for (h, t) in trajectory.steps.iter().enumerate() {
            d.check_state(t.state)?;
            d.check_state(t.next_state)?;
            d.check_action(t.action)?;
            let cell = d.sa(h, t.state, t.action);
            let n = &mut self.counters.n_local[m][cell];
            *n += 1;
            let eta = compute_eta(self.agents, d.horizon, self.counters.n_prev[cell], *n)?;
            let target = t.reward + self.local_v[m][d.hs(h + 1, t.next_state)];
            let q = &mut self.local_q[m][cell];
            *q = (1.0 - eta) * *q + eta * target;
            etas.push(eta);
        }
        Ok(etas)
    }

    /// Server aggregation at a scheduled episode, followed by the broadcast
    /// that overwrites every agent's local tables and rolls the counters.
    pub fn global_aggregate(
        &mut self,
        hyper: &HyperParams,
        schedule: &SyncSchedule,
        options: AggregationOptions,
    ) -> Result<AggregationRecord> {
        if !schedule.contains(self.episode) {
            return Err(Error::contract(format!("aggregation requested at episode {} which is not a sync point", self.episode)));
        }
        let d = self.dims;
        let h_count = d.horizon;
        let mut n_round = vec![0u64; d.cells()];
        for local in &self.counters.n_local {
            n_round.iter_mut().zip(local).for_each(|(n, x)| *n += x);
        }
        let n_global: Vec<u64> = self.counters.n_prev.iter().zip(&n_round).map(|(a, b)| a + b).collect();
        let mut penalty = vec![0.0; d.cells()];

        for cell in 0..d.cells() {
            let (n_prev, n, n_new) = (self.counters.n_prev[cell], n_round[cell], n_global[cell]);
            let b = compute_penalty(h_count, n_new, n, hyper.zeta1, hyper.c_b);
            let mut acc = 0.0;
            for m in 0..self.agents {
                let n_m = self.counters.n_local[m][cell];
                let alpha = match options.alpha_gate {
                    AlphaGate::TotalCount => compute_alpha(self.agents, h_count, n_prev, n_m, n_new, n)?,
                    AlphaGate::PerAgent if n_m > 0 => compute_alpha(self.agents, h_count, n_prev, n_m, n_new, n)?,
                    AlphaGate::PerAgent => 1.0 / self.agents as f64,
                };
                acc += alpha * self.local_q[m][cell];
            }
            let mut q = acc - b;
            if options.clip {
                let (h, _, _) = d.unflatten(cell);
                q = q.clamp(0.0, (h_count - h) as f64);
            }
            self.global_q[cell] = q;
            penalty[cell] = b;
        }

        for h in 0..h_count {
            for s in 0..d.states {
                let base = d.sa(h, s, 0);
                let (best, qmax) = argmax_first(&self.global_q[base..base + d.actions]);
                let v = &mut self.global_v[d.hs(h, s)];
                if qmax >= *v {
                    *v = qmax;
                    self.policy.actions[d.hs(h, s)] = best;
                }
            }
        }

        for m in 0..self.agents {
            self.local_q[m].copy_from_slice(&self.global_q);
            self.local_v[m].copy_from_slice(&self.global_v);
            self.counters.n_local[m].iter_mut().for_each(|x| *x = 0);
        }
        self.counters.n_prev.copy_from_slice(&n_global);
        self.counters.n_global.copy_from_slice(&n_global);
        self.counters.n_round.iter_mut().for_each(|x| *x = 0);
        self.sync_index += 1;

        Ok(AggregationRecord {
            episode: self.episode,
            sync_index: self.sync_index,
            n_round,
            n_global,
            penalty,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Transition;
    use crate::engine::schedule::{build_schedule, ScheduleKind};

    fn step(s: usize, a: usize, r: f64, next: usize) -> Transition {
        Transition {
            state: s,
            action: a,
            reward: r,
            next_state: next,
        }
    }

    fn one_step(r: f64) -> Trajectory {
        Trajectory { steps: vec![step(0, 0, r, 0)] }
    }

    #[test]
    fn first_visit_overwrites() {
        let d = Dims::new(2, 2, 1).unwrap();
        let mut st = LearnerState::new(d, 1).unwrap();
        st.begin_episode();
        let etas = st.local_update_episode(0, &Trajectory { steps: vec![step(1, 1, 0.7, 0)] }).unwrap();
        assert_eq!(etas, vec![1.0]);
        assert_eq!(st.local_q[0][d.sa(0, 1, 1)], 0.7);
        for cell in [d.sa(0, 0, 0), d.sa(0, 0, 1), d.sa(0, 1, 0)] {
            assert_eq!(st.local_q[0][cell].to_bits(), 0.0f64.to_bits());
        }
    }

    #[test]
    fn two_visits_average() {
        let d = Dims::new(1, 1, 1).unwrap();
        let mut st = LearnerState::new(d, 1).unwrap();
        st.local_update_episode(0, &one_step(1.0)).unwrap();
        let etas = st.local_update_episode(0, &one_step(0.0)).unwrap();
        assert_eq!(etas, vec![0.5]);
        assert_eq!(st.local_q[0][0], 0.5);
    }

    #[test]
    fn local_value_stays_frozen() {
        let d = Dims::new(2, 1, 2).unwrap();
        let mut st = LearnerState::new(d, 2).unwrap();
        st.local_v[0][d.hs(1, 1)] = 0.25;
        let snapshot = st.local_v.clone();
        let traj = Trajectory {
            steps: vec![step(0, 0, 0.5, 1), step(1, 0, 1.0, 0)],
        };
        st.local_update_episode(0, &traj).unwrap();
        assert_eq!(st.local_v, snapshot);
        assert_eq!(st.local_q[0][d.sa(0, 0, 0)], 0.75);
    }

    #[test]
    fn hand_traced_two_agent_aggregation() {
        let d = Dims::new(1, 1, 1).unwrap();
        let schedule = build_schedule(&ScheduleKind::Periodic { tau: 1 }, 1, 1).unwrap();
        let hyper = HyperParams { delta: 0.01, c_b: 81.0, zeta1: 2.0 };
        let mut st = LearnerState::new(d, 2).unwrap();
        st.begin_episode();
        st.local_update_episode(0, &one_step(1.0)).unwrap();
        st.local_update_episode(1, &one_step(0.0)).unwrap();
        let rec = st.global_aggregate(&hyper, &schedule, AggregationOptions::default()).unwrap();
        let b = (81.0f64 * 4.0 / 2.0).sqrt();
        assert!((rec.penalty[0] - b).abs() < 1e-12);
        assert!((st.global_q[0] - (0.5 - b)).abs() < 1e-12);
        assert_eq!(st.global_v[0], 0.0);
        assert_eq!(st.counters.n_global, vec![2]);
        assert_eq!(st.counters.n_prev, vec![2]);
        assert_eq!(st.counters.n_local, vec![vec![0], vec![0]]);
        assert_eq!(st.local_q[0], st.global_q);
        assert_eq!(st.local_q[1], st.global_q);
    }

    #[test]
    fn single_agent_weights_are_one() {
        let d = Dims::new(1, 1, 1).unwrap();
        let schedule = build_schedule(&ScheduleKind::Periodic { tau: 1 }, 2, 1).unwrap();
        let hyper = HyperParams { delta: 0.5, c_b: 0.0, zeta1: 1.0 };
        let mut st = LearnerState::new(d, 1).unwrap();
        st.begin_episode();
        st.local_update_episode(0, &one_step(0.6)).unwrap();
        st.global_aggregate(&hyper, &schedule, AggregationOptions::default()).unwrap();
        assert_eq!(st.global_q[0], 0.6);
        assert_eq!(st.global_v[0], 0.6);
    }

    #[test]
    fn empty_round_is_idempotent() {
        let d = Dims::new(2, 2, 1).unwrap();
        let schedule = build_schedule(&ScheduleKind::Periodic { tau: 1 }, 3, 1).unwrap();
        let hyper = HyperParams { delta: 0.01, c_b: 1e-4, zeta1: 2.0 };
        let mut st = LearnerState::new(d, 3).unwrap();
        st.begin_episode();
        for m in 0..3 {
            st.local_update_episode(m, &Trajectory { steps: vec![step(0, 1, 0.9, 0)] }).unwrap();
        }
        st.global_aggregate(&hyper, &schedule, AggregationOptions::default()).unwrap();
        let (q, v, pi) = (st.global_q.clone(), st.global_v.clone(), st.policy.clone());
        st.begin_episode();
        // nobody visits anything this round
        st.global_aggregate(&hyper, &schedule, AggregationOptions::default()).unwrap();
        assert_eq!(st.global_q, q);
        assert_eq!(st.global_v, v);
        assert_eq!(st.policy, pi);
    }

    #[test]
    fn off_schedule_aggregation_is_a_contract_error() {
        let d = Dims::new(1, 1, 1).unwrap();
        let schedule = build_schedule(&ScheduleKind::Periodic { tau: 5 }, 10, 1).unwrap();
        let hyper = HyperParams { delta: 0.01, c_b: 1.0, zeta1: 1.0 };
        let mut st = LearnerState::new(d, 1).unwrap();
        st.begin_episode();
        assert!(matches!(
            st.global_aggregate(&hyper, &schedule, AggregationOptions::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn policy_kept_when_value_does_not_improve() {
        let d = Dims::new(1, 2, 1).unwrap();
        let schedule = build_schedule(&ScheduleKind::Periodic { tau: 1 }, 2, 1).unwrap();
        let hyper = HyperParams { delta: 0.5, c_b: 0.0, zeta1: 1.0 };
        let mut st = LearnerState::new(d, 1).unwrap();
        st.begin_episode();
        st.local_update_episode(0, &Trajectory { steps: vec![step(0, 1, 0.8, 0)] }).unwrap();
        st.global_aggregate(&hyper, &schedule, AggregationOptions::default()).unwrap();
        assert_eq!(st.policy.actions, vec![1]);
        assert_eq!(st.global_v[0], 0.8);
        st.begin_episode();
        st.local_update_episode(0, &Trajectory { steps: vec![step(0, 1, 0.0, 0)] }).unwrap();
        st.global_aggregate(&hyper, &schedule, AggregationOptions::default()).unwrap();
        // eta = 2/3 on the second visit: Q = 0.8/3
        assert!((st.global_q[1] - 0.8 / 3.0).abs() < 1e-15);
        assert_eq!(st.global_v[0], 0.8);
        assert_eq!(st.policy.actions, vec![1]);
    }
}
