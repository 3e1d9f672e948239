//! Grid sweeps over agents, episodes and schedules, replicated over seeds.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{run_generated, write_metrics_csv, CellSettings, MetricsRow, RunResult};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// Final numbers of one run, or why it failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell_id: usize,
    pub run_id: String,
    pub seed: u64,
    pub agents: usize,
    pub episodes: usize,
    pub schedule: String,
    pub final_gap: Option<f64>,
    pub final_pess: Option<f64>,
    pub comm_rounds: Option<usize>,
    pub payload_entries: Option<u64>,
    pub error: Option<String>,
}

/// Aggregate over the seeds of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell_id: usize,
    pub agents: usize,
    pub episodes: usize,
    pub schedule: String,
    pub runs: usize,
    pub failures: usize,
    pub gap_mean: f64,
    /// Sample standard deviation; 0 with fewer than two runs.
    pub gap_stddev: f64,
    pub pess_mean: f64,
    pub comm_rounds: usize,
    pub payload_entries: u64,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub cells: Vec<CellSettings>,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    pub curves: Vec<MetricsRow>,
}

/// Cross product of the axes, agents outermost; empty axes keep the base value.
pub fn sweep_cells(config: &ExperimentConfig) -> Vec<CellSettings> {
    let base = CellSettings::base(config);
    let axes = config.axes.clone().unwrap_or_default();
    let agents = if axes.agents.is_empty() { vec![base.agents] } else { axes.agents };
    let episodes = if axes.episodes.is_empty() { vec![base.episodes] } else { axes.episodes };
    let schedules = if axes.schedules.is_empty() { vec![base.schedule] } else { axes.schedules };
    let mut out = Vec::new();
    for &m in &agents {
        for &k in &episodes {
            for s in &schedules {
                out.push(CellSettings {
                    agents: m,
                    episodes: k,
                    schedule: s.clone(),
                });
            }
        }
    }
    out
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every cell for every seed in a worker pool. A failing run is
/// recorded and the sweep continues.
pub fn run_sweep(config: &ExperimentConfig, mdp: &TabularMdp) -> Result<SweepResult> {
    config.validate()?;
    let cells = sweep_cells(config);
    let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| config.seeds.iter().map(move |&s| (c, s))).collect();
    let results: Vec<(usize, u64, Result<RunResult>)> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let id = format!("c{c}-s{seed}");
            (c, seed, run_generated(config, mdp, &cells[c], seed, id))
        })
        .collect();

    let mut runs = Vec::with_capacity(results.len());
    let mut curves = Vec::new();
    for (c, seed, res) in results {
        let cell = &cells[c];
        let mut rec = RunRecord {
            cell_id: c,
            run_id: format!("c{c}-s{seed}"),
            seed,
            agents: cell.agents,
            episodes: cell.episodes,
            schedule: cell.schedule.label(),
            final_gap: None,
            final_pess: None,
            comm_rounds: None,
            payload_entries: None,
            error: None,
        };
        match res {
            Ok(r) => {
                let last = r.last();
                rec.final_gap = Some(last.value_gap);
                rec.final_pess = Some(last.v1_pess);
                rec.comm_rounds = Some(last.comm_rounds_so_far);
                rec.payload_entries = Some(last.payload_entries);
                curves.extend(r.metrics_rows());
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        runs.push(rec);
    }

    let summary = cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.cell_id == c).collect();
            let gaps: Vec<f64> = mine.iter().filter_map(|r| r.final_gap).collect();
            let pess: Vec<f64> = mine.iter().filter_map(|r| r.final_pess).collect();
            let (gap_mean, gap_stddev) = mean_std(&gaps);
            let ok = mine.iter().find(|r| r.error.is_none());
            SummaryRow {
                cell_id: c,
                agents: cell.agents,
                episodes: cell.episodes,
                schedule: cell.schedule.label(),
                runs: mine.len(),
                failures: mine.len() - gaps.len(),
                gap_mean,
                gap_stddev,
                pess_mean: mean_std(&pess).0,
                comm_rounds: ok.and_then(|r| r.comm_rounds).unwrap_or(0),
                payload_entries: ok.and_then(|r| r.payload_entries).unwrap_or(0),
            }
        })
        .collect();

    Ok(SweepResult {
        cells,
        runs,
        summary,
        curves,
    })
}

/// `runs.csv`, `summary.csv` and `curves.csv` in `dir`.
pub fn write_sweep(result: &SweepResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("runs.csv"))?;
    for r in &result.runs {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    for r in &result.summary {
        w.serialize(r)?;
    }
    w.flush()?;
    write_metrics_csv(&result.curves, dir.join("curves.csv"))
}

/// Fails with an invariant error when every run of the sweep failed.
pub fn require_some_success(result: &SweepResult) -> Result<()> {
    if result.runs.iter().all(|r| r.error.is_some()) {
        let first = result.runs.first().and_then(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::Invariant(format!("every sweep run failed; first error: {first}")));
    }
    Ok(())
}
