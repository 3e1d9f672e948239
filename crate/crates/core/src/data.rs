//! Behavior policies, offline dataset sampling and dataset persistence.
//!
//! Dataset files are a little-endian binary body (`FLCQD1` magic followed by
//! `K * H` fixed-width records `(u32 s, u32 a, f64 r, u32 s')`) plus a JSON
//! sidecar `<name>.meta.json` holding the dimensions, `K`, seed and policy id.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::{value_iteration, Dims, OccupancyTables, StochasticPolicy, TabularMdp};

pub const DATASET_MAGIC: &[u8; 6] = b"FLCQD1";
const RECORD_BYTES: usize = 4 + 4 + 8 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// One episode: exactly `H` transitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineDataset {
    pub agent_id: usize,
    pub dims: Dims,
    pub trajectories: Vec<Trajectory>,
    pub behavior_policy_id: String,
    pub seed: u64,
}

/// Allowed actions per `(h, s, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionMask {
    pub dims: Dims,
    pub allowed: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BehaviorKind {
    /// `(1-ε)` on the optimal action plus `ε/A` everywhere.
    EpsilonOptimal(f64),
    Uniform,
    MaskedUniform(ActionMask),
    Explicit(StochasticPolicy),
}

impl BehaviorKind {
    /// Short identifier recorded in dataset metadata.
    pub fn id(&self) -> String {
        match self {
            BehaviorKind::EpsilonOptimal(eps) => format!("epsilon_optimal({eps})"),
            BehaviorKind::Uniform => "uniform".to_string(),
            BehaviorKind::MaskedUniform(mask) => {
                let bits: String = mask.allowed.iter().map(|&b| if b { '1' } else { '0' }).collect();
                format!("masked_uniform({bits})")
            }
            BehaviorKind::Explicit(_) => "explicit".to_string(),
        }
    }
}

pub fn make_behavior_policy(kind: &BehaviorKind, mdp: &TabularMdp) -> Result<StochasticPolicy> {
    let d = mdp.dims();
    let a_n = d.actions as f64;
    match kind {
        BehaviorKind::EpsilonOptimal(eps) => {
            if !(0.0..=1.0).contains(eps) {
                return Err(Error::validation(format!("epsilon {eps} outside [0, 1]")));
            }
            let (_, pi_star) = value_iteration(mdp);
            let mut probs = vec![eps / a_n; d.cells()];
            for h in 0..d.horizon {
                for s in 0..d.states {
                    probs[d.sa(h, s, pi_star.action(h, s))] += 1.0 - eps;
                }
            }
            StochasticPolicy::new(d, probs)
        }
        BehaviorKind::Uniform => StochasticPolicy::new(d, vec![1.0 / a_n; d.cells()]),
        BehaviorKind::MaskedUniform(mask) => {
            if mask.dims != d || mask.allowed.len() != d.cells() {
                return Err(Error::validation("action mask dimensions do not match the MDP"));
            }
            let mut probs = vec![0.0; d.cells()];
            for h in 0..d.horizon {
                for s in 0..d.states {
                    let base = d.sa(h, s, 0);
                    let row = &mask.allowed[base..base + d.actions];
                    let count = row.iter().filter(|&&b| b).count();
                    if count == 0 {
                        return Err(Error::validation(format!("empty allowed action set at (h={h}, s={s})")));
                    }
                    for (a, &ok) in row.iter().enumerate() {
                        if ok {
                            probs[base + a] = 1.0 / count as f64;
                        }
                    }
                }
            }
            StochasticPolicy::new(d, probs)
        }
        BehaviorKind::Explicit(pi) => StochasticPolicy::new(d, pi.probs.clone()),
    }
}

/// Per-agent stream seed: first 8 bytes of SHA-256 over the little-endian
/// master seed followed by the little-endian agent id.
pub fn derive_agent_seed(master_seed: u64, agent_id: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update((agent_id as u64).to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn sample_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Draws `episodes` i.i.d. trajectories under `policy`. A pure function of
/// its inputs. The returned dataset has agent id 0 and an empty policy id;
/// see [`sample_agent_datasets`] for labelled multi-agent generation.
pub fn sample_dataset(mdp: &TabularMdp, policy: &StochasticPolicy, episodes: usize, seed: u64) -> Result<OfflineDataset> {
    let d = mdp.dims();
    if episodes == 0 {
        return Err(Error::validation("K must be at least 1"));
    }
    if policy.horizon != d.horizon || policy.states != d.states || policy.num_actions != d.actions {
        return Err(Error::validation("behavior policy dimensions do not match the MDP"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trajectories = (0..episodes)
        .map(|_| {
            let mut s = sample_index(&mut rng, mdp.initial());
            let steps = (0..d.horizon)
                .map(|h| {
                    let a = sample_index(&mut rng, policy.row(h, s));
                    let next = sample_index(&mut rng, mdp.next_dist(h, s, a));
                    let t = Transition {
                        state: s,
                        action: a,
                        reward: mdp.reward(h, s, a),
                        next_state: next,
                    };
                    s = next;
                    t
                })
                .collect();
            Trajectory { steps }
        })
        .collect();
    Ok(OfflineDataset {
        agent_id: 0,
        dims: d,
        trajectories,
        behavior_policy_id: String::new(),
        seed,
    })
}

/// One dataset per behavior, agent `m` seeded with `derive_agent_seed(master, m)`.
pub fn sample_agent_datasets(
    mdp: &TabularMdp,
    behaviors: &[BehaviorKind],
    episodes: usize,
    master_seed: u64,
) -> Result<Vec<OfflineDataset>> {
    behaviors
        .par_iter()
        .enumerate()
        .map(|(m, kind)| {
            let policy = make_behavior_policy(kind, mdp)?;
            let seed = derive_agent_seed(master_seed, m);
            let mut ds = sample_dataset(mdp, &policy, episodes, seed)?;
            ds.agent_id = m;
            ds.behavior_policy_id = kind.id();
            Ok(ds)
        })
        .collect()
}

/// Visit frequencies per step, normalized by `K`.
pub fn empirical_occupancy(dataset: &OfflineDataset, dims: Dims) -> Result<OccupancyTables> {
    if dataset.trajectories.is_empty() {
        return Err(Error::validation("empirical occupancy of an empty dataset"));
    }
    dataset.check_shape(dims)?;
    let mut occ = OccupancyTables::zeros(dims);
    for traj in &dataset.trajectories {
        for (h, t) in traj.steps.iter().enumerate() {
            occ.state[dims.hs(h, t.state)] += 1.0;
            occ.state_action[dims.sa(h, t.state, t.action)] += 1.0;
        }
    }
    let k = dataset.trajectories.len() as f64;
    occ.state.iter_mut().for_each(|x| *x /= k);
    occ.state_action.iter_mut().for_each(|x| *x /= k);
    Ok(occ)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub agent_id: usize,
    #[serde(rename = "K")]
    pub episodes: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    pub seed: u64,
    pub behavior_policy_id: String,
}

/// `agent_0.flcqd` -> `agent_0.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

impl OfflineDataset {
    pub fn episodes(&self) -> usize {
        self.trajectories.len()
    }

    /// Index bounds, trajectory length and next-state chaining.
    pub fn check_shape(&self, dims: Dims) -> Result<()> {
        if self.dims != dims {
            return Err(Error::validation(format!(
                "dataset of agent {} has dimensions {:?}, expected {:?}",
                self.agent_id, self.dims, dims
            )));
        }
        for (k, traj) in self.trajectories.iter().enumerate() {
            if traj.steps.len() != dims.horizon {
                return Err(Error::validation(format!(
                    "agent {} trajectory {k} has {} steps, expected H = {}",
                    self.agent_id,
                    traj.steps.len(),
                    dims.horizon
                )));
            }
            for (h, t) in traj.steps.iter().enumerate() {
                if t.state >= dims.states || t.next_state >= dims.states || t.action >= dims.actions {
                    return Err(Error::validation(format!(
                        "agent {} trajectory {k} step {h}: index out of range",
                        self.agent_id
                    )));
                }
                if let Some(next) = traj.steps.get(h + 1) {
                    if next.state != t.next_state {
                        return Err(Error::validation(format!(
                            "agent {} trajectory {k} step {h}: next_state {} does not chain into state {}",
                            self.agent_id, t.next_state, next.state
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Shape checks plus reward fidelity against the generating MDP.
    pub fn validate_against(&self, mdp: &TabularMdp) -> Result<()> {
        self.check_shape(mdp.dims())?;
        for (k, traj) in self.trajectories.iter().enumerate() {
            for (h, t) in traj.steps.iter().enumerate() {
                if t.reward != mdp.reward(h, t.state, t.action) {
                    return Err(Error::validation(format!(
                        "agent {} trajectory {k} step {h}: reward {} differs from r_h(s,a) = {}",
                        self.agent_id,
                        t.reward,
                        mdp.reward(h, t.state, t.action)
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            agent_id: self.agent_id,
            episodes: self.episodes(),
            horizon: self.dims.horizon,
            states: self.dims.states,
            actions: self.dims.actions,
            seed: self.seed,
            behavior_policy_id: self.behavior_policy_id.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(DATASET_MAGIC.len() + self.episodes() * self.dims.horizon * RECORD_BYTES);
        out.extend_from_slice(DATASET_MAGIC);
        for traj in &self.trajectories {
            for t in &traj.steps {
                out.extend_from_slice(&(t.state as u32).to_le_bytes());
                out.extend_from_slice(&(t.action as u32).to_le_bytes());
                out.extend_from_slice(&t.reward.to_le_bytes());
                out.extend_from_slice(&(t.next_state as u32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], meta: &DatasetMeta) -> Result<Self> {
        if bytes.len() < DATASET_MAGIC.len() || &bytes[..DATASET_MAGIC.len()] != DATASET_MAGIC {
            return Err(Error::parse(0, "missing FLCQD1 magic"));
        }
        let dims = Dims::new(meta.states, meta.actions, meta.horizon)?;
        let expected = DATASET_MAGIC.len() + meta.episodes * meta.horizon * RECORD_BYTES;
        if bytes.len() != expected {
            let offset = bytes.len().min(expected) as u64;
            return Err(Error::parse(
                offset,
                format!("dataset body is {} bytes, expected {expected} for K={} H={}", bytes.len(), meta.episodes, meta.horizon),
            ));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let mut offset = DATASET_MAGIC.len();
        let mut trajectories = Vec::with_capacity(meta.episodes);
        for _ in 0..meta.episodes {
            let mut steps = Vec::with_capacity(meta.horizon);
            for _ in 0..meta.horizon {
                let t = Transition {
                    state: u32_at(offset),
                    action: u32_at(offset + 4),
                    reward: f64::from_le_bytes(bytes[offset + 8..offset + 16].try_into().unwrap()),
                    next_state: u32_at(offset + 16),
                };
                if t.state >= dims.states || t.next_state >= dims.states || t.action >= dims.actions {
                    return Err(Error::parse(offset as u64, "state or action index out of range"));
                }
                if !(0.0..=1.0).contains(&t.reward) {
                    return Err(Error::parse(offset as u64 + 8, format!("reward {} outside [0, 1]", t.reward)));
                }
                steps.push(t);
                offset += RECORD_BYTES;
            }
            trajectories.push(Trajectory { steps });
        }
        let ds = OfflineDataset {
            agent_id: meta.agent_id,
            dims,
            trajectories,
            behavior_policy_id: meta.behavior_policy_id.clone(),
            seed: meta.seed,
        };
        ds.check_shape(dims)?;
        Ok(ds)
    }

    /// Writes the binary body at `path` and the sidecar next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        OfflineDataset::from_bytes(&bytes, &meta)
    }
}

/// All datasets share dimensions and `K`.
pub fn check_datasets(datasets: &[OfflineDataset]) -> Result<(Dims, usize)> {
    let first = datasets.first().ok_or_else(|| Error::validation("no datasets supplied"))?;
    let (dims, k) = (first.dims, first.episodes());
    for ds in datasets {
        if ds.episodes() != k {
            return Err(Error::validation(format!(
                "agent {} has K = {}, agent {} has K = {k}; all agents need the same number of episodes",
                ds.agent_id,
                ds.episodes(),
                first.agent_id
            )));
        }
        ds.check_shape(dims)?;
    }
    Ok((dims, k))
}
