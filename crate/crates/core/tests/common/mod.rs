//! Random run configurations shared by the integration suites.
#![allow(dead_code)]

use fedlcbq::data::{sample_agent_datasets, BehaviorKind};
use fedlcbq::engine::{build_schedule, run_fedlcbq, HyperParams, RunOptions, ScheduleKind};
use fedlcbq::gen::random_mdp;
use fedlcbq::mdp::{Dims, StochasticPolicy, TabularMdp};
use fedlcbq::trace::RunTrace;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stochastic policy with some actions switched off.
pub fn random_policy(rng: &mut ChaCha8Rng, dims: Dims) -> StochasticPolicy {
    let mut probs = Vec::with_capacity(dims.cells());
    for _ in 0..dims.horizon * dims.states {
        let mut row: Vec<f64> = (0..dims.actions).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() + 1e-3 }).collect();
        if row.iter().all(|&x| x == 0.0) {
            row[rng.gen_range(0..dims.actions)] = 1.0;
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
        // fold the rounding residue into one positive entry
        let residue = 1.0 - row.iter().sum::<f64>();
        if let Some(x) = row.iter_mut().find(|x| **x > 0.0) {
            *x += residue;
        }
        probs.extend(row);
    }
    StochasticPolicy::new(dims, probs).unwrap()
}

pub fn random_schedule(rng: &mut ChaCha8Rng, episodes: usize, horizon: usize) -> ScheduleKind {
    match rng.gen_range(0..3) {
        0 => ScheduleKind::Periodic {
            tau: rng.gen_range(1..=episodes),
        },
        1 => ScheduleKind::Exponential {
            gamma: rng.gen_range(0.05..2.0),
            tau1: if rng.gen_bool(0.5) { Some(rng.gen_range(1..=horizon + 2)) } else { None },
        },
        _ => {
            let mut points: Vec<usize> = (1..episodes).filter(|_| rng.gen_bool(0.2)).collect();
            points.push(episodes);
            ScheduleKind::Explicit { points }
        }
    }
}

#[derive(Clone, Debug)]
pub struct FuzzCase {
    pub mdp: TabularMdp,
    pub trace: RunTrace,
}

/// One traced run on a random small configuration: S <= 4, A <= 3, H <= 4,
/// M <= 4, K <= 200, mixed schedules and behaviors, c_B log-uniform over
/// [1e-6, 81].
pub fn fuzz_case(seed: u64) -> FuzzCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s, a, h) = (rng.gen_range(1..=4), rng.gen_range(1..=3), rng.gen_range(1..=4));
    let agents = rng.gen_range(1..=4);
    let episodes = rng.gen_range(1..=200);
    let mdp = random_mdp(s, a, h, rng.gen()).unwrap();
    let dims = mdp.dims();
    let behaviors: Vec<BehaviorKind> = (0..agents)
        .map(|_| match rng.gen_range(0..3) {
            0 => BehaviorKind::Uniform,
            1 => BehaviorKind::EpsilonOptimal(rng.gen()),
            _ => BehaviorKind::Explicit(random_policy(&mut rng, dims)),
        })
        .collect();
    let datasets = sample_agent_datasets(&mdp, &behaviors, episodes, rng.gen()).unwrap();
    let kind = random_schedule(&mut rng, episodes, h);
    let schedule = build_schedule(&kind, episodes, h).unwrap();
    let c_b = 10f64.powf(rng.gen_range(-6.0..(81f64).log10()));
    let delta = rng.gen_range(0.001..0.5);
    let hyper = HyperParams::new(s, a, episodes, agents, h, delta, c_b).unwrap();
    let out = run_fedlcbq(
        dims,
        &datasets,
        &schedule,
        &hyper,
        RunOptions {
            trace: true,
            ..Default::default()
        },
    )
    .unwrap();
    FuzzCase {
        mdp,
        trace: out.trace.unwrap(),
    }
}
