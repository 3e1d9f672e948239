//! Single runs with per-sync policy evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{behaviors_for, ExperimentConfig};
use crate::data::{sample_agent_datasets, OfflineDataset};
use crate::engine::{build_schedule, run_fedlcbq_with, AggregationOptions, HyperParams, RunOptions, RunOutput, SyncSchedule};
use crate::error::{Error, Result};
use crate::mdp::{evaluate_deterministic, value_iteration, Dims, TabularMdp};

/// Lowest gap accepted before it is treated as an evaluation bug.
pub const GAP_FLOOR: f64 = -1e-9;

/// Column names of the per-run metrics CSV, in order.
pub const SYNC_COLUMNS: [&str; 7] = [
    "sync_index",
    "episode_k",
    "value_gap",
    "V1_pess",
    "V1_pi_k",
    "comm_rounds_so_far",
    "payload_entries",
];

/// Table entries exchanged in one sync: every agent's Q and the visit
/// counters up, then Q, N and V down.
pub fn payload_per_sync(dims: Dims, agents: usize) -> u64 {
    let (h, s, a) = (dims.horizon as u64, dims.states as u64, dims.actions as u64);
    agents as u64 * h * s * a + h * s * a + 2 * h * s * a + h * s
}

/// Measurements taken right after one aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncMetrics {
    pub sync_index: usize,
    pub episode_k: usize,
    /// `V*(ρ) − V^{π_k}(ρ)`
    pub value_gap: f64,
    /// `V_k(ρ)` at the first step.
    pub v1_pess: f64,
    pub v1_pi_k: f64,
    pub comm_rounds_so_far: usize,
    pub payload_entries: u64,
}

/// Identifies the run a metrics row belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLabels {
    pub run_id: String,
    pub seed: u64,
    pub agents: usize,
    pub episodes: usize,
    pub schedule: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub labels: RunLabels,
    pub metrics: SyncMetrics,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub labels: RunLabels,
    pub optimal_value: f64,
    pub rows: Vec<SyncMetrics>,
    pub output: RunOutput,
}

impl RunResult {
    pub fn last(&self) -> &SyncMetrics {
        self.rows.last().expect("every schedule ends with a sync at K")
    }

    pub fn metrics_rows(&self) -> Vec<MetricsRow> {
        self.rows
            .iter()
            .map(|m| MetricsRow {
                labels: self.labels.clone(),
                metrics: *m,
            })
            .collect()
    }
}

/// Runs the engine and evaluates the maintained policy exactly after every sync.
pub fn execute_run(
    mdp: &TabularMdp,
    datasets: &[OfflineDataset],
    schedule: &SyncSchedule,
    hyper: &HyperParams,
    options: RunOptions,
    labels: RunLabels,
) -> Result<RunResult> {
    let dims = mdp.dims();
    for ds in datasets {
        ds.validate_against(mdp)?;
    }
    let (optimal, _) = value_iteration(mdp);
    let rho = mdp.initial();
    let optimal_value = optimal.initial_value(rho);
    let payload = payload_per_sync(dims, datasets.len());
    let mut rows = Vec::with_capacity(schedule.len());
    let mut failure = None;
    let output = run_fedlcbq_with(dims, datasets, schedule, hyper, options, |state, record| {
        if failure.is_some() {
            return;
        }
        let evaluated = match evaluate_deterministic(mdp, &state.policy) {
            Ok((_, v)) => v,
            Err(e) => {
                failure = Some(e);
                return;
            }
        };
        let pess: f64 = rho.iter().zip(&state.global_v[..dims.states]).map(|(p, v)| p * v).sum();
        let gap = optimal_value - evaluated;
        if gap < GAP_FLOOR || gap.is_nan() {
            failure = Some(Error::Invariant(format!(
                "value gap {gap} at sync {} is below {GAP_FLOOR}: policy evaluated above the optimum",
                record.sync_index
            )));
            return;
        }
        rows.push(SyncMetrics {
            sync_index: record.sync_index,
            episode_k: record.episode,
            value_gap: gap,
            v1_pess: pess,
            v1_pi_k: evaluated,
            comm_rounds_so_far: record.sync_index,
            payload_entries: payload * record.sync_index as u64,
        });
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(RunResult {
        labels,
        optimal_value,
        rows,
        output,
    })
}

/// Settings of one generated run, after sweep axes are applied.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSettings {
    pub agents: usize,
    pub episodes: usize,
    pub schedule: crate::engine::ScheduleKind,
}

impl CellSettings {
    pub fn base(config: &ExperimentConfig) -> Self {
        CellSettings {
            agents: config.agents,
            episodes: config.episodes,
            schedule: config.schedule.clone(),
        }
    }
}

/// Hyperparameters for a config; `c_B = 0` is accepted as an ablation.
pub fn hyper_for(config_delta: f64, c_b: f64, dims: Dims, episodes: usize, agents: usize) -> Result<HyperParams> {
    HyperParams::ablation(dims.states, dims.actions, episodes, agents, dims.horizon, config_delta, c_b)
}

/// Generates datasets for `seed` and runs one cell of an experiment.
pub fn run_generated(config: &ExperimentConfig, mdp: &TabularMdp, cell: &CellSettings, seed: u64, run_id: String) -> Result<RunResult> {
    let dims = mdp.dims();
    let behaviors = behaviors_for(&config.behaviors, cell.agents, dims)?;
    let datasets = sample_agent_datasets(mdp, &behaviors, cell.episodes, seed)?;
    let schedule = build_schedule(&cell.schedule, cell.episodes, dims.horizon)?;
    let hyper = hyper_for(config.delta, config.c_b, dims, cell.episodes, cell.agents)?;
    let options = RunOptions {
        aggregation: AggregationOptions {
            alpha_gate: config.alpha_gate,
            clip: config.clip,
        },
        trace: config.trace,
    };
    let labels = RunLabels {
        run_id,
        seed,
        agents: cell.agents,
        episodes: cell.episodes,
        schedule: cell.schedule.label(),
    };
    execute_run(mdp, &datasets, &schedule, &hyper, options, labels)
}

/// Writes the seven-column per-sync CSV.
pub fn write_sync_csv(rows: &[SyncMetrics], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SYNC_COLUMNS)?;
    for r in rows {
        w.write_record(sync_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

fn sync_fields(r: &SyncMetrics) -> [String; 7] {
    [
        r.sync_index.to_string(),
        r.episode_k.to_string(),
        r.value_gap.to_string(),
        r.v1_pess.to_string(),
        r.v1_pi_k.to_string(),
        r.comm_rounds_so_far.to_string(),
        r.payload_entries.to_string(),
    ]
}

/// Labelled per-sync rows of many runs.
pub fn write_metrics_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["run_id", "seed", "M", "K", "schedule"];
    header.extend(SYNC_COLUMNS);
    w.write_record(&header)?;
    for r in rows {
        let l = &r.labels;
        let mut fields = vec![l.run_id.clone(), l.seed.to_string(), l.agents.to_string(), l.episodes.to_string(), l.schedule.clone()];
        fields.extend(sync_fields(&r.metrics));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ScheduleKind;
    use crate::gen::chain_mdp;
    use crate::harness::config::BehaviorSpec;

    fn chain_config(episodes: usize, c_b: f64) -> ExperimentConfig {
        ExperimentConfig {
            mdp: crate::gen::MdpSpec::Chain { states: 3, horizon: 3 },
            horizon: None,
            agents: 1,
            episodes,
            behaviors: vec![BehaviorSpec::Uniform],
            schedule: ScheduleKind::Periodic { tau: 10 },
            delta: 0.01,
            c_b,
            alpha_gate: Default::default(),
            clip: false,
            seeds: vec![1],
            axes: None,
            out: None,
            trace: false,
        }
    }

    #[test]
    fn payload_formula() {
        let d = Dims::new(4, 2, 3).unwrap();
        assert_eq!(payload_per_sync(d, 2), 2 * 24 + 24 + 48 + 12);
    }

    #[test]
    fn rows_follow_the_schedule() {
        let config = chain_config(35, 0.01);
        let mdp = chain_mdp(3, 3).unwrap();
        let res = run_generated(&config, &mdp, &CellSettings::base(&config), 7, "r".into()).unwrap();
        let ks: Vec<usize> = res.rows.iter().map(|r| r.episode_k).collect();
        assert_eq!(ks, vec![10, 20, 30, 35]);
        for (i, r) in res.rows.iter().enumerate() {
            assert_eq!(r.comm_rounds_so_far, i + 1);
            assert_eq!(r.sync_index, i + 1);
            assert!(r.value_gap >= GAP_FLOOR);
            assert!(r.v1_pess <= r.v1_pi_k + 1e-9);
        }
        assert_eq!(res.optimal_value, 1.0);
    }

    #[test]
    fn chain_gap_shrinks_with_more_data() {
        let mdp = chain_mdp(3, 3).unwrap();
        let mut gaps = Vec::new();
        for k in [500, 2000, 8000] {
            let config = chain_config(k, 0.01);
            let mut total = 0.0;
            for seed in 0..5 {
                total += run_generated(&config, &mdp, &CellSettings::base(&config), seed, String::new()).unwrap().last().value_gap;
            }
            gaps.push(total / 5.0);
        }
        assert!(gaps[0] >= gaps[1] && gaps[1] >= gaps[2], "{gaps:?}");
    }

    #[test]
    fn csv_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let config = chain_config(40, 0.01);
        let mdp = chain_mdp(3, 3).unwrap();
        let cell = CellSettings::base(&config);
        let a = run_generated(&config, &mdp, &cell, 3, "x".into()).unwrap();
        let b = run_generated(&config, &mdp, &cell, 3, "x".into()).unwrap();
        write_sync_csv(&a.rows, dir.path().join("a.csv")).unwrap();
        write_sync_csv(&b.rows, dir.path().join("b.csv")).unwrap();
        let (ta, tb) = (
            std::fs::read(dir.path().join("a.csv")).unwrap(),
            std::fs::read(dir.path().join("b.csv")).unwrap(),
        );
        assert_eq!(ta, tb);
        let text = String::from_utf8(ta).unwrap();
        assert!(text.starts_with("sync_index,episode_k,value_gap,V1_pess,V1_pi_k,comm_rounds_so_far,payload_entries\n"));
    }
}
