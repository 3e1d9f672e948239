//! JSON configuration for runs and sweeps.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::BehaviorKind;
use crate::engine::{AlphaGate, ScheduleKind, DEFAULT_C_B, DEFAULT_DELTA};
use crate::error::{Error, Result};
use crate::gen::{split_coverage_masks, MdpSpec};
use crate::mdp::Dims;

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_c_b() -> f64 {
    DEFAULT_C_B
}

fn default_agents() -> usize {
    1
}

/// Behavior policy of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorSpec {
    EpsilonOptimal { epsilon: f64 },
    Uniform,
    /// Uniform over the actions that coverage group `group` (0 or 1) of the
    /// split MDP may use.
    SplitMask { group: usize },
}

impl BehaviorSpec {
    pub fn resolve(&self, dims: Dims) -> Result<BehaviorKind> {
        Ok(match *self {
            BehaviorSpec::EpsilonOptimal { epsilon } => BehaviorKind::EpsilonOptimal(epsilon),
            BehaviorSpec::Uniform => BehaviorKind::Uniform,
            BehaviorSpec::SplitMask { group } => {
                if group > 1 {
                    return Err(Error::validation(format!("split mask group must be 0 or 1, got {group}")));
                }
                if dims.states < 2 || dims.actions < 2 || dims.horizon < 3 {
                    return Err(Error::validation("split masks need S >= 2, A >= 2, H >= 3"));
                }
                let [a, b] = split_coverage_masks(dims);
                BehaviorKind::MaskedUniform(if group == 0 { a } else { b })
            }
        })
    }
}

/// Behaviors for `agents` agents: the listed specs, cycled.
pub fn behaviors_for(specs: &[BehaviorSpec], agents: usize, dims: Dims) -> Result<Vec<BehaviorKind>> {
    if specs.is_empty() {
        return Err(Error::validation("at least one behavior spec is required"));
    }
    (0..agents).map(|m| specs[m % specs.len()].resolve(dims)).collect()
}

/// Values to sweep; an empty axis keeps the base config's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepAxes {
    #[serde(default)]
    pub agents: Vec<usize>,
    #[serde(default)]
    pub episodes: Vec<usize>,
    #[serde(default)]
    pub schedules: Vec<ScheduleKind>,
}

impl SweepAxes {
    pub fn is_empty(&self) -> bool {
        self.agents.is_empty() && self.episodes.is_empty() && self.schedules.is_empty()
    }
}

/// An experiment generated from scratch: MDP, datasets, run, evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mdp: MdpSpec,
    /// Replaces the generator's horizon; not allowed with a path source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default = "default_agents")]
    pub agents: usize,
    /// Episodes per agent.
    pub episodes: usize,
    /// Cycled over the agents.
    pub behaviors: Vec<BehaviorSpec>,
    pub schedule: ScheduleKind,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(rename = "c_B", default = "default_c_b")]
    pub c_b: f64,
    #[serde(default)]
    pub alpha_gate: AlphaGate,
    #[serde(default)]
    pub clip: bool,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<SweepAxes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Write a trace per run.
    #[serde(default)]
    pub trace: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::validation("seed list is empty"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::validation(format!("seed {dup} appears more than once")));
        }
        if self.agents == 0 || self.episodes == 0 {
            return Err(Error::validation("agents and episodes must be positive"));
        }
        if self.behaviors.is_empty() {
            return Err(Error::validation("at least one behavior spec is required"));
        }
        if let Some(axes) = &self.axes {
            if axes.is_empty() {
                return Err(Error::validation("sweep axes are all empty"));
            }
            if axes.agents.contains(&0) || axes.episodes.contains(&0) {
                return Err(Error::validation("sweep axes must hold positive agent and episode counts"));
            }
        }
        Ok(())
    }

    /// Generator spec with the horizon override applied.
    pub fn mdp_spec(&self) -> Result<MdpSpec> {
        let Some(h) = self.horizon else {
            return Ok(self.mdp.clone());
        };
        let mut spec = self.mdp.clone();
        match &mut spec {
            MdpSpec::Random { horizon, .. } | MdpSpec::Chain { horizon, .. } | MdpSpec::Split { horizon, .. } => *horizon = h,
            MdpSpec::Path { .. } => return Err(Error::validation("horizon override needs a generated MDP, not a file")),
        }
        Ok(spec)
    }
}

/// A run over datasets already on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mdp: PathBuf,
    pub datasets: Vec<PathBuf>,
    pub schedule: ScheduleKind,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(rename = "c_B", default = "default_c_b")]
    pub c_b: f64,
    /// Label for the run; data randomness comes from the datasets.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trace: bool,
    pub out: PathBuf,
    #[serde(default)]
    pub alpha_gate: AlphaGate,
    #[serde(default)]
    pub clip: bool,
}

/// Either config shape accepted by `run`.
#[derive(Clone, Debug, PartialEq)]
pub enum RunInput {
    Files(RunConfig),
    Experiment(ExperimentConfig),
}

impl RunInput {
    /// A config with a `datasets` key is a file-based run.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("datasets").is_some() {
            Ok(RunInput::Files(serde_json::from_value(value)?))
        } else {
            Ok(RunInput::Experiment(serde_json::from_value(value)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        serde_json::from_str(
            r#"{
                "mdp": {"kind": "random", "states": 3, "actions": 2, "horizon": 2, "seed": 1},
                "episodes": 10,
                "behaviors": [{"kind": "uniform"}],
                "schedule": {"kind": "periodic", "tau": 2},
                "seeds": [1, 2]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = base();
        assert_eq!(c.agents, 1);
        assert_eq!(c.c_b, DEFAULT_C_B);
        assert_eq!(c.delta, DEFAULT_DELTA);
        assert_eq!(c.alpha_gate, AlphaGate::TotalCount);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn seed_rules() {
        let mut c = base();
        c.seeds.clear();
        assert!(matches!(c.validate(), Err(Error::Validation(_))));
        c.seeds = vec![3, 4, 3];
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_axes_rejected() {
        let mut c = base();
        c.axes = Some(SweepAxes::default());
        assert!(c.validate().is_err());
    }

    #[test]
    fn horizon_override() {
        let mut c = base();
        c.horizon = Some(5);
        assert_eq!(
            c.mdp_spec().unwrap(),
            MdpSpec::Random {
                states: 3,
                actions: 2,
                horizon: 5,
                seed: 1
            }
        );
    }

    #[test]
    fn run_input_dispatch() {
        let files = r#"{"mdp": "m.json", "datasets": ["a.flcqd"], "schedule": {"kind": "periodic", "tau": 1}, "out": "o"}"#;
        assert!(matches!(RunInput::from_json(files).unwrap(), RunInput::Files(_)));
        let exp = serde_json::to_string(&base()).unwrap();
        assert!(matches!(RunInput::from_json(&exp).unwrap(), RunInput::Experiment(_)));
    }

    #[test]
    fn behaviors_cycle() {
        let d = Dims::new(3, 2, 4).unwrap();
        let specs = [BehaviorSpec::SplitMask { group: 0 }, BehaviorSpec::SplitMask { group: 1 }];
        let kinds = behaviors_for(&specs, 3, d).unwrap();
        assert_eq!(kinds[0], kinds[2]);
        assert_ne!(kinds[0], kinds[1]);
        assert!(BehaviorSpec::SplitMask { group: 2 }.resolve(d).is_err());
    }
}
