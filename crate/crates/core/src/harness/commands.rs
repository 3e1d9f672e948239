//! The work behind each CLI subcommand, returning JSON-ready summaries.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{behaviors_for, ExperimentConfig, RunConfig, RunInput};
use super::run::{execute_run, hyper_for, run_generated, write_sync_csv, CellSettings, RunLabels, RunResult};
use super::sweep::{require_some_success, run_sweep, write_sweep, SummaryRow};
use crate::data::{make_behavior_policy, sample_agent_datasets, BehaviorKind, OfflineDataset};
use crate::diagnostics::{verify_trace, TraceVerification};
use crate::engine::{
    build_schedule, exponential_round_bound, validate_schedule, AggregationOptions, RunOptions, ScheduleKind, ScheduleReport,
};
use crate::error::{Error, Result};
use crate::gen::{split_coverage_masks, MdpSpec};
use crate::mdp::{average_concentrability, clipped_concentrability, occupancy_distributions, value_iteration, Concentrability, TabularMdp};
use crate::trace::RunTrace;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACE_FILE: &str = "trace.flcqt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageCheck {
    pub per_agent: Vec<Concentrability>,
    pub average: Concentrability,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenMdpSummary {
    pub path: PathBuf,
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub optimal_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageCheck>,
}

/// Concentrability of the two split-coverage masks against the optimal policy.
pub fn split_coverage_check(mdp: &TabularMdp) -> Result<CoverageCheck> {
    let d = mdp.dims();
    let (_, best) = value_iteration(mdp);
    let d_opt = occupancy_distributions(mdp, &best.to_stochastic())?;
    let occs = split_coverage_masks(d)
        .into_iter()
        .map(|mask| occupancy_distributions(mdp, &make_behavior_policy(&BehaviorKind::MaskedUniform(mask), mdp)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(CoverageCheck {
        per_agent: occs
            .iter()
            .map(|o| clipped_concentrability(&d_opt, o, d.states))
            .collect::<Result<Vec<_>>>()?,
        average: average_concentrability(&d_opt, &occs, d.states)?,
    })
}

/// Builds an MDP and writes it as JSON. Split MDPs are checked for the
/// intended coverage pattern.
pub fn gen_mdp(spec: &MdpSpec, out: &Path) -> Result<GenMdpSummary> {
    let mdp = spec.build()?;
    let d = mdp.dims();
    let coverage = match spec {
        MdpSpec::Split { .. } => {
            let check = split_coverage_check(&mdp)?;
            if check.per_agent.iter().any(|c| c.is_finite()) || !check.average.is_finite() {
                return Err(Error::Invariant(format!("split MDP does not have the split coverage pattern: {check:?}")));
            }
            Some(check)
        }
        _ => None,
    };
    mdp.save(out)?;
    let (vt, _) = value_iteration(&mdp);
    Ok(GenMdpSummary {
        path: out.to_path_buf(),
        states: d.states,
        actions: d.actions,
        horizon: d.horizon,
        optimal_value: vt.initial_value(mdp.initial()),
        coverage,
    })
}

fn first_seed(config: &ExperimentConfig, seed: Option<u64>) -> Result<u64> {
    match seed {
        Some(s) => Ok(s),
        None => config.seeds.first().copied().ok_or_else(|| Error::validation("seed list is empty")),
    }
}

/// Writes `mdp.json`, one `agent_<m>.flcqd` (plus metadata) per agent and a
/// `run.json` that `run` accepts.
pub fn gen_data(config: &ExperimentConfig, seed: Option<u64>, out_dir: &Path) -> Result<RunConfig> {
    let seed = first_seed(config, seed)?;
    let mdp = config.mdp_spec()?.build()?;
    let behaviors = behaviors_for(&config.behaviors, config.agents, mdp.dims())?;
    let datasets = sample_agent_datasets(&mdp, &behaviors, config.episodes, seed)?;
    std::fs::create_dir_all(out_dir)?;
    let mdp_path = out_dir.join("mdp.json");
    mdp.save(&mdp_path)?;
    let mut paths = Vec::new();
    for ds in &datasets {
        let p = out_dir.join(format!("agent_{}.flcqd", ds.agent_id));
        ds.save(&p)?;
        paths.push(p);
    }
    let run = RunConfig {
        mdp: mdp_path,
        datasets: paths,
        schedule: config.schedule.clone(),
        delta: config.delta,
        c_b: config.c_b,
        seed,
        trace: config.trace,
        out: out_dir.join("run"),
        alpha_gate: config.alpha_gate,
        clip: config.clip,
    };
    std::fs::write(out_dir.join("run.json"), serde_json::to_string_pretty(&run)?)?;
    Ok(run)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub seed: u64,
    pub agents: usize,
    pub episodes: usize,
    pub schedule: String,
    pub optimal_value: f64,
    pub final_gap: f64,
    pub final_pess: f64,
    pub comm_rounds: usize,
    pub payload_entries: u64,
    pub metrics: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

fn finish_run(result: &RunResult, out_dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir)?;
    let metrics = out_dir.join(METRICS_FILE);
    write_sync_csv(&result.rows, &metrics)?;
    let trace = match &result.output.trace {
        Some(t) => {
            let p = out_dir.join(TRACE_FILE);
            t.save(&p)?;
            Some(p)
        }
        None => None,
    };
    let last = result.last();
    Ok(RunSummary {
        run_id: result.labels.run_id.clone(),
        seed: result.labels.seed,
        agents: result.labels.agents,
        episodes: result.labels.episodes,
        schedule: result.labels.schedule.clone(),
        optimal_value: result.optimal_value,
        final_gap: last.value_gap,
        final_pess: last.v1_pess,
        comm_rounds: last.comm_rounds_so_far,
        payload_entries: last.payload_entries,
        metrics,
        trace,
    })
}

fn run_from_files(config: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    let mdp = TabularMdp::load(&config.mdp)?;
    let datasets = config.datasets.iter().map(OfflineDataset::load).collect::<Result<Vec<_>>>()?;
    let episodes = datasets.first().map(|d| d.episodes()).ok_or_else(|| Error::validation("no datasets listed"))?;
    let d = mdp.dims();
    let schedule = build_schedule(&config.schedule, episodes, d.horizon)?;
    let hyper = hyper_for(config.delta, config.c_b, d, episodes, datasets.len())?;
    let options = RunOptions {
        aggregation: AggregationOptions {
            alpha_gate: config.alpha_gate,
            clip: config.clip,
        },
        trace: config.trace,
    };
    let labels = RunLabels {
        run_id: format!("files-s{}", config.seed),
        seed: config.seed,
        agents: datasets.len(),
        episodes,
        schedule: config.schedule.label(),
    };
    let result = execute_run(&mdp, &datasets, &schedule, &hyper, options, labels)?;
    finish_run(&result, out_dir)
}

/// Runs either config shape; `out` overrides the config's output directory.
pub fn cmd_run(input: &RunInput, seed: Option<u64>, out: Option<&Path>) -> Result<RunSummary> {
    match input {
        RunInput::Files(cfg) => run_from_files(cfg, out.unwrap_or(&cfg.out)),
        RunInput::Experiment(cfg) => {
            cfg.validate()?;
            let seed = first_seed(cfg, seed)?;
            let out_dir = out
                .map(Path::to_path_buf)
                .or_else(|| cfg.out.clone())
                .ok_or_else(|| Error::validation("no output directory: set \"out\" or pass --out"))?;
            let mdp = cfg.mdp_spec()?.build()?;
            let result = run_generated(cfg, &mdp, &CellSettings::base(cfg), seed, format!("s{seed}"))?;
            finish_run(&result, &out_dir)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub out: PathBuf,
    pub runs: usize,
    pub failures: usize,
    pub cells: Vec<SummaryRow>,
}

pub fn cmd_sweep(config: &ExperimentConfig, seed: Option<u64>, out: Option<&Path>) -> Result<SweepSummary> {
    let mut config = config.clone();
    if let Some(s) = seed {
        config.seeds = vec![s];
    }
    config.trace = false;
    if config.axes.is_none() {
        return Err(Error::validation("sweep needs an \"axes\" entry"));
    }
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.out.clone())
        .ok_or_else(|| Error::validation("no output directory: set \"out\" or pass --out"))?;
    let mdp = config.mdp_spec()?.build()?;
    let result = run_sweep(&config, &mdp)?;
    write_sweep(&result, &out_dir)?;
    require_some_success(&result)?;
    Ok(SweepSummary {
        out: out_dir,
        runs: result.runs.len(),
        failures: result.runs.iter().filter(|r| r.error.is_some()).count(),
        cells: result.summary,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub kind: String,
    pub episodes: usize,
    pub horizon: usize,
    pub points: Vec<usize>,
    pub intervals: Vec<usize>,
    pub rounds: usize,
    pub validation: ScheduleReport,
    /// Only for exponential schedules.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub within_round_bound: Option<bool>,
    /// Syncs after every episode.
    pub communication_heavy: bool,
}

/// Builds and checks a schedule; `tau1_bound` caps the first interval.
pub fn cmd_schedule(kind: &ScheduleKind, episodes: usize, horizon: usize, tau1_bound: Option<f64>) -> Result<ScheduleSummary> {
    if horizon == 0 {
        return Err(Error::validation("H must be at least 1"));
    }
    let schedule = build_schedule(kind, episodes, horizon)?;
    let validation = validate_schedule(&schedule, horizon, tau1_bound.unwrap_or(f64::INFINITY));
    let rounds = schedule.len();
    let round_bound = matches!(kind, ScheduleKind::Exponential { .. }).then(|| exponential_round_bound(episodes, horizon));
    Ok(ScheduleSummary {
        kind: kind.label(),
        episodes,
        horizon,
        intervals: schedule.intervals(),
        points: schedule.points,
        rounds,
        validation,
        round_bound,
        within_round_bound: round_bound.map(|b| rounds as f64 <= b),
        communication_heavy: rounds == episodes,
    })
}

/// Loads a trace (and optionally its MDP) and runs every check.
pub fn cmd_verify(trace_path: &Path, mdp_path: Option<&Path>) -> Result<TraceVerification> {
    let trace = RunTrace::load(trace_path)?;
    let mdp = mdp_path.map(TabularMdp::load).transpose()?;
    verify_trace(&trace, mdp.as_ref())
}
