//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Runs as a plain binary (no libtest harness) so the verdict lines are
//! always printed.

mod common;

use std::time::Instant;

use rayon::prelude::*;

use fedlcbq::data::{empirical_occupancy, make_behavior_policy, sample_dataset, BehaviorKind};
use fedlcbq::diagnostics::{
    counter_concentration_check, monotone_value_check, pessimism_check, verify_d3_bounds, verify_decomposition, verify_lemma6_trace,
    weights_from_learning_rates, reconstruct_weights, TraceIndex, DEFAULT_C1,
};
use fedlcbq::engine::{build_schedule, exponential_round_bound, run_fedlcbq, validate_schedule, HyperParams, RunOptions, ScheduleKind};
use fedlcbq::gen::{random_mdp, split_mdp, MdpSpec};
use fedlcbq::harness::{run_generated, run_sweep, split_coverage_check, BehaviorSpec, CellSettings, ExperimentConfig, SweepAxes};
use fedlcbq::mdp::{occupancy_distributions, value_iteration, Dims, TabularMdp};
use fedlcbq::trace::RunTrace;

use common::{fuzz_case, random_policy, FuzzCase};
use rand_chacha::rand_core::SeedableRng;

/// MDP seed of the fixed S=4/A=2/H=3 instance used by the pessimism and
/// speedup criteria.
const RANDOM_MDP_SEED: u64 = 2;
/// Penalty scale for the speedup sweep, calibrated once.
const SPEEDUP_C_B: f64 = 0.01;
/// Penalty scale and per-agent episodes for the coverage experiment,
/// calibrated once.
const COVERAGE_C_B: f64 = 1e-6;
const COVERAGE_EPISODES: usize = 10_000;

struct Verdict {
    passed: bool,
    detail: String,
}

fn campaign(count: u64, offset: u64) -> Vec<FuzzCase> {
    (0..count).into_par_iter().map(|i| fuzz_case(offset + i)).collect()
}

fn c1_decomposition(cases: &[FuzzCase]) -> Verdict {
    let reports: Vec<(f64, bool)> = cases
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            // alternate between the optimal policy and a random comparator
            let policy = if i % 2 == 0 {
                value_iteration(&c.mdp).1.to_stochastic()
            } else {
                random_policy(&mut rand_chacha::ChaCha8Rng::seed_from_u64(i as u64), c.mdp.dims())
            };
            let r = verify_decomposition(&c.trace, &c.mdp, &policy).unwrap();
            (r.max_abs_residual, r.passed)
        })
        .collect();
    let worst = reports.iter().map(|r| r.0).fold(0.0, f64::max);
    let failing = reports.iter().filter(|r| !r.1).count();
    Verdict {
        passed: failing == 0 && worst <= 1e-8,
        detail: format!("{} configs, {failing} failing, max |residual| = {worst:.2e} (tol 1e-8)", cases.len()),
    }
}

fn c2_weights(cases: &[FuzzCase]) -> Verdict {
    let results: Vec<(usize, f64, usize)> = cases
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let index = TraceIndex::new(&c.trace).unwrap();
            let r = verify_lemma6_trace(&c.trace, &index).unwrap();
            // second route through the recorded learning rates on every tenth trace
            let mut mismatches = 0;
            if i % 10 == 0 {
                let d = c.trace.header.dims;
                for &k in &c.trace.header.schedule.points {
                    for flat in 0..d.cells() {
                        let cell = d.unflatten(flat);
                        let mut closed = reconstruct_weights(&c.trace, &index, cell, k).unwrap().weights;
                        closed.sort_by_key(|w| (w.episode, w.agent));
                        let alt = weights_from_learning_rates(&c.trace, &index, cell, k).unwrap();
                        if closed.is_empty() {
                            continue;
                        }
                        if alt.len() != closed.len()
                            || alt.iter().zip(&closed).any(|(a, b)| (a.weight - b.weight).abs() > 1e-12 * b.weight)
                        {
                            mismatches += 1;
                        }
                    }
                }
            }
            (r.violations.len(), r.max_in_round_stddev, mismatches)
        })
        .collect();
    let violations: usize = results.iter().map(|r| r.0).sum();
    let stddev = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let mismatches: usize = results.iter().map(|r| r.2).sum();
    Verdict {
        passed: violations == 0 && stddev == 0.0 && mismatches == 0,
        detail: format!(
            "{} traces, {violations} bound violations, max in-round stddev = {stddev:e}, {mismatches} learning-rate route mismatches",
            cases.len()
        ),
    }
}

fn c3_penalty(cases: &[FuzzCase]) -> Verdict {
    let results: Vec<(usize, usize)> = cases
        .par_iter()
        .map(|c| {
            let r = verify_d3_bounds(&c.trace).unwrap();
            (r.checked, r.violations.len())
        })
        .collect();
    let checked: usize = results.iter().map(|r| r.0).sum();
    let violations: usize = results.iter().map(|r| r.1).sum();
    Verdict {
        passed: violations == 0 && checked > 0,
        detail: format!("{checked} visited sync cells over {} traces, {violations} outside the bracket or nonzero at N = 0", cases.len()),
    }
}

fn traced_random_runs(c_b: f64, runs: u64) -> (TabularMdp, Vec<RunTrace>) {
    let config = ExperimentConfig {
        mdp: MdpSpec::Random {
            states: 4,
            actions: 2,
            horizon: 3,
            seed: RANDOM_MDP_SEED,
        },
        horizon: None,
        agents: 2,
        episodes: 500,
        behaviors: vec![BehaviorSpec::EpsilonOptimal { epsilon: 0.5 }],
        schedule: ScheduleKind::Exponential { gamma: 2.0 / 3.0, tau1: None },
        delta: 0.01,
        c_b,
        alpha_gate: Default::default(),
        clip: false,
        seeds: (0..runs).collect(),
        axes: None,
        out: None,
        trace: true,
    };
    let mdp = config.mdp.build().unwrap();
    let cell = CellSettings::base(&config);
    let traces = (0..runs)
        .into_par_iter()
        .map(|seed| run_generated(&config, &mdp, &cell, seed, String::new()).unwrap().output.trace.unwrap())
        .collect();
    (mdp, traces)
}

fn c4_pessimism(mdp: &TabularMdp, traces: &[RunTrace]) -> Verdict {
    let reports: Vec<_> = traces.par_iter().map(|t| pessimism_check(t, mdp).unwrap()).collect();
    let bad = reports.iter().filter(|r| !r.passed).count();
    let excess = reports.iter().map(|r| r.max_excess).fold(f64::NEG_INFINITY, f64::max);
    Verdict {
        passed: bad == 0,
        detail: format!("c_B = 81, {} runs, {bad} with V_k > V^pi_k + 1e-9, max V_k - V^pi_k = {excess:.3e}", traces.len()),
    }
}

fn c5_monotone(groups: &[&[RunTrace]]) -> Verdict {
    let all: Vec<&RunTrace> = groups.iter().flat_map(|g| g.iter()).collect();
    let bad = all.par_iter().filter(|t| monotone_value_check(t).unwrap().is_some()).count();
    Verdict {
        passed: bad == 0,
        detail: format!("{} runs, {bad} with a decrease of the global value", all.len()),
    }
}

fn c6_speedup() -> Verdict {
    let config = ExperimentConfig {
        mdp: MdpSpec::Random {
            states: 4,
            actions: 2,
            horizon: 3,
            seed: RANDOM_MDP_SEED,
        },
        horizon: None,
        agents: 1,
        episodes: 2000,
        behaviors: vec![BehaviorSpec::EpsilonOptimal { epsilon: 0.5 }],
        schedule: ScheduleKind::Exponential { gamma: 2.0 / 3.0, tau1: None },
        delta: 0.01,
        c_b: SPEEDUP_C_B,
        alpha_gate: Default::default(),
        clip: false,
        seeds: (0..20).collect(),
        axes: Some(SweepAxes {
            agents: vec![1, 2, 4, 8],
            ..Default::default()
        }),
        out: None,
        trace: false,
    };
    let mdp = config.mdp.build().unwrap();
    let res = run_sweep(&config, &mdp).unwrap();
    let means: Vec<f64> = res.summary.iter().map(|s| s.gap_mean).collect();
    let failures: usize = res.summary.iter().map(|s| s.failures).sum();
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    let ratio_ok = means[3] <= 0.7 * means[0];
    Verdict {
        passed: failures == 0 && monotone && ratio_ok,
        detail: format!(
            "c_B = {SPEEDUP_C_B}, mean gap for M = 1,2,4,8: {:.4} {:.4} {:.4} {:.4}; M=8/M=1 = {:.3} (need non-increasing and <= 0.7)",
            means[0],
            means[1],
            means[2],
            means[3],
            means[3] / means[0]
        ),
    }
}

fn c7_coverage() -> Verdict {
    let (s, a, h) = (3, 2, 5);
    let mdp = split_mdp(s, a, h).unwrap();
    let coverage = split_coverage_check(&mdp).unwrap();
    let pattern_ok = coverage.per_agent.iter().all(|c| !c.is_finite()) && coverage.average.is_finite();
    let v_star = value_iteration(&mdp).0.initial_value(mdp.initial());
    let config = |behaviors: Vec<BehaviorSpec>, agents: usize| ExperimentConfig {
        mdp: MdpSpec::Split {
            states: s,
            actions: a,
            horizon: h,
        },
        horizon: None,
        agents,
        episodes: COVERAGE_EPISODES,
        behaviors,
        schedule: ScheduleKind::Exponential {
            gamma: 2.0 / h as f64,
            tau1: None,
        },
        delta: 0.01,
        c_b: COVERAGE_C_B,
        alpha_gate: Default::default(),
        clip: false,
        seeds: (0..10).collect(),
        axes: None,
        out: None,
        trace: false,
    };
    let alone0 = config(vec![BehaviorSpec::SplitMask { group: 0 }], 1);
    let alone1 = config(vec![BehaviorSpec::SplitMask { group: 1 }], 1);
    let joint = config(vec![BehaviorSpec::SplitMask { group: 0 }, BehaviorSpec::SplitMask { group: 1 }], 2);
    let gap = |c: &ExperimentConfig, seed: u64| run_generated(c, &mdp, &CellSettings::base(c), seed, String::new()).unwrap().last().value_gap;
    let rows: Vec<(f64, f64, f64)> = (0..10u64).into_par_iter().map(|seed| (gap(&alone0, seed), gap(&alone1, seed), gap(&joint, seed))).collect();
    let good = rows.iter().filter(|(g0, g1, gj)| *g0 >= 0.5 * v_star && *g1 >= 0.5 * v_star && *gj <= 0.2 * v_star).count();
    let mean = |f: fn(&(f64, f64, f64)) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    Verdict {
        passed: pattern_ok && good > rows.len() / 2,
        detail: format!(
            "C* per agent = {:?}, C*_avg = {:?}; V* = {v_star}; mean gaps alone = {:.3} / {:.3}, joint = {:.3}; {good}/10 seeds meet both thresholds",
            coverage.per_agent.iter().map(|c| c.as_f64()).collect::<Vec<_>>(),
            coverage.average.as_f64(),
            mean(|r| r.0),
            mean(|r| r.1),
            mean(|r| r.2)
        ),
    }
}

fn c8_rounds() -> Verdict {
    let mut lines = Vec::new();
    let mut ok = true;
    for h in [2usize, 5, 10] {
        for k in [100usize, 1000, 10_000] {
            let s = build_schedule(&ScheduleKind::Exponential { gamma: 2.0 / h as f64, tau1: None }, k, h).unwrap();
            let bound = exponential_round_bound(k, h);
            let report = validate_schedule(&s, h, f64::INFINITY);
            ok &= (s.len() as f64) <= bound && report.ratios_ok;
            lines.push(format!("H={h},K={k}: {}<={bound:.1}", s.len()));
        }
    }
    Verdict {
        passed: ok,
        detail: lines.join("; "),
    }
}

fn c9_counters() -> Verdict {
    let mdp = random_mdp(2, 1, 1, 0).unwrap();
    let (agents, episodes, delta) = (4usize, 500usize, 0.05);
    let dims = mdp.dims();
    let uniform = make_behavior_policy(&BehaviorKind::Uniform, &mdp).unwrap();
    let d_avg = occupancy_distributions(&mdp, &uniform).unwrap();
    let schedule = build_schedule(&ScheduleKind::Exponential { gamma: 2.0, tau1: None }, episodes, 1).unwrap();
    let hyper = HyperParams::new(2, 1, episodes, agents, 1, delta, 81.0).unwrap();
    let traces: Vec<RunTrace> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let data = fedlcbq::data::sample_agent_datasets(&mdp, &vec![BehaviorKind::Uniform; agents], episodes, seed).unwrap();
            let options = RunOptions {
                trace: true,
                ..Default::default()
            };
            run_fedlcbq(dims, &data, &schedule, &hyper, options).unwrap().trace.unwrap()
        })
        .collect();
    let report = counter_concentration_check(&traces, &d_avg, delta, DEFAULT_C1).unwrap();
    Verdict {
        passed: report.passed,
        detail: format!(
            "{} runs, rho = {:?}, violation rate {:.3} (need <= {delta})",
            report.runs,
            mdp.initial(),
            report.violation_rate
        ),
    }
}

/// Expected return of a deterministic policy from a point mass, by forward
/// propagation of the state distribution.
fn forward_value(mdp: &TabularMdp, actions: &[usize], start: &[f64]) -> f64 {
    let d = mdp.dims();
    let mut dist = start.to_vec();
    let mut total = 0.0;
    for h in 0..d.horizon {
        let mut next = vec![0.0; d.states];
        for s in 0..d.states {
            if dist[s] == 0.0 {
                continue;
            }
            let a = actions[h * d.states + s];
            total += dist[s] * mdp.reward(h, s, a);
            for (n, p) in next.iter_mut().zip(mdp.next_dist(h, s, a)) {
                *n += dist[s] * p;
            }
        }
        dist = next;
    }
    total
}

fn c10_oracles() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut mdps = 0;
    for seed in 0..20u64 {
        for s in 1..=3 {
            for a in 1..=2 {
                for h in 1..=3 {
                    let mdp = random_mdp(s, a, h, 1000 + seed).unwrap();
                    let (vt, _) = value_iteration(&mdp);
                    let n_policies = a.pow((s * h) as u32);
                    // best value per start state over all deterministic policies
                    let mut best = vec![f64::NEG_INFINITY; s];
                    for code in 0..n_policies {
                        let mut c = code;
                        let actions: Vec<usize> = (0..s * h)
                            .map(|_| {
                                let x = c % a;
                                c /= a;
                                x
                            })
                            .collect();
                        for (s0, b) in best.iter_mut().enumerate() {
                            let mut start = vec![0.0; s];
                            start[s0] = 1.0;
                            *b = b.max(forward_value(&mdp, &actions, &start));
                        }
                    }
                    for (s0, b) in best.iter().enumerate() {
                        worst = worst.max((vt.v(0, s0) - b).abs());
                    }
                    mdps += 1;
                }
            }
        }
    }
    let exact_ok = worst <= 1e-12;

    // empirical occupancy against the forward recursion, 3 sigma per cell
    let mut cells = 0;
    let mut outside = Vec::new();
    for seed in 0..3u64 {
        let mdp = random_mdp(4, 2, 3, 77 + seed).unwrap();
        let policy = make_behavior_policy(&BehaviorKind::EpsilonOptimal(0.4), &mdp).unwrap();
        let exact = occupancy_distributions(&mdp, &policy).unwrap();
        let ds = sample_dataset(&mdp, &policy, 50_000, 500 + seed).unwrap();
        let emp = empirical_occupancy(&ds, mdp.dims()).unwrap();
        let n = 50_000.0;
        for (i, (&p, &q)) in exact.state_action.iter().zip(&emp.state_action).enumerate() {
            cells += 1;
            let sigma = (p * (1.0 - p) / n).sqrt();
            if (p - q).abs() > 3.0 * sigma {
                outside.push((seed, Dims::unflatten(&mdp.dims(), i), p, q));
            }
        }
    }
    Verdict {
        passed: exact_ok && outside.is_empty(),
        detail: format!(
            "{mdps} MDPs, max |VI - enumeration| = {worst:.1e}; occupancy: {}/{cells} cells outside 3 sigma at K = 50000{}",
            outside.len(),
            if outside.is_empty() { String::new() } else { format!(" {outside:?}") }
        ),
    }
}

fn report(number: usize, name: &str, started: Instant, v: Verdict, failed: &mut Vec<usize>) {
    let tag = if v.passed { "PASS" } else { "FAIL" };
    println!("criterion {number:>2} [{tag}] {name}: {} ({:.1}s)", v.detail, started.elapsed().as_secs_f64());
    if !v.passed {
        failed.push(number);
    }
}

fn main() {
    // `cargo test -- <filter>` style arguments are accepted and ignored
    let mut failed = Vec::new();

    let t = Instant::now();
    let cases = campaign(1000, 0);
    println!("fuzz campaign: {} traced runs generated ({:.1}s)", cases.len(), t.elapsed().as_secs_f64());

    let t = Instant::now();
    report(1, "decomposition identity", t, c1_decomposition(&cases[..50]), &mut failed);
    let t = Instant::now();
    report(2, "weight bounds", t, c2_weights(&cases), &mut failed);
    let t = Instant::now();
    report(3, "penalty bracket", t, c3_penalty(&cases), &mut failed);

    let t = Instant::now();
    let (mdp, pess_traces) = traced_random_runs(81.0, 50);
    report(4, "pessimism", t, c4_pessimism(&mdp, &pess_traces), &mut failed);

    let t = Instant::now();
    let fuzz_traces: Vec<RunTrace> = cases.iter().map(|c| c.trace.clone()).collect();
    let (_, calibrated_traces) = traced_random_runs(SPEEDUP_C_B, 20);
    report(5, "monotone global value", t, c5_monotone(&[&fuzz_traces, &pess_traces, &calibrated_traces]), &mut failed);

    let t = Instant::now();
    report(6, "speedup in the number of agents", t, c6_speedup(), &mut failed);
    let t = Instant::now();
    report(7, "collaborative coverage", t, c7_coverage(), &mut failed);
    let t = Instant::now();
    report(8, "communication rounds", t, c8_rounds(), &mut failed);
    let t = Instant::now();
    report(9, "counter concentration", t, c9_counters(), &mut failed);
    let t = Instant::now();
    report(10, "ground-truth oracles", t, c10_oracles(), &mut failed);

    if failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
    } else {
        println!("acceptance: FAILED criteria {failed:?}");
        std::process::exit(1);
    }
}
