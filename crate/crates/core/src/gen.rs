//! Seeded MDP generators used by the CLI and the experiment suites.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ActionMask;
use crate::error::{Error, Result};
use crate::mdp::{Dims, TabularMdp};

/// Probability that a risky action keeps the split-coverage MDP on its clean track.
pub const RISKY_SURVIVAL: f64 = 0.3;

/// Generator description, serializable inside experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MdpSpec {
    Random { states: usize, actions: usize, horizon: usize, seed: u64 },
    Chain { states: usize, horizon: usize },
    Split { states: usize, actions: usize, horizon: usize },
    Path { path: String },
}

impl MdpSpec {
    pub fn build(&self) -> Result<TabularMdp> {
        match *self {
            MdpSpec::Random { states, actions, horizon, seed } => random_mdp(states, actions, horizon, seed),
            MdpSpec::Chain { states, horizon } => chain_mdp(states, horizon),
            MdpSpec::Split { states, actions, horizon } => split_mdp(states, actions, horizon),
            MdpSpec::Path { ref path } => TabularMdp::load(path),
        }
    }
}

/// Dirichlet(1) draw: normalized unit exponentials.
fn flat_dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    // Push the rounding residue into the largest entry so the row sums to 1.
    let residue = 1.0 - w.iter().sum::<f64>();
    let imax = (0..n).fold(0, |b, i| if w[i] > w[b] { i } else { b });
    w[imax] += residue;
    w
}

/// Random MDP: Dirichlet(1) transition rows, Uniform[0,1] rewards, uniform `ρ`.
pub fn random_mdp(states: usize, actions: usize, horizon: usize, seed: u64) -> Result<TabularMdp> {
    let dims = Dims::new(states, actions, horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Vec::with_capacity(dims.cells() * states);
    let mut r = Vec::with_capacity(dims.cells());
    for _ in 0..dims.cells() {
        p.extend(flat_dirichlet(&mut rng, states));
        r.push(rng.gen::<f64>());
    }
    TabularMdp::new(dims, p, r, vec![1.0 / states as f64; states])
}

/// Deterministic goal-reaching chain with two actions: `0` stays, `1` moves
/// one state right. Reward 1 at the final step in the rightmost state.
pub fn chain_mdp(states: usize, horizon: usize) -> Result<TabularMdp> {
    let dims = Dims::new(states, 2, horizon)?;
    if horizon < states {
        return Err(Error::validation(format!(
            "chain goal state {} is unreachable within horizon {horizon}",
            states - 1
        )));
    }
    let mut p = vec![0.0; dims.cells() * states];
    let mut r = vec![0.0; dims.cells()];
    for h in 0..horizon {
        for s in 0..states {
            for a in 0..2 {
                let next = if a == 1 { (s + 1).min(states - 1) } else { s };
                p[dims.sa(h, s, a) * states + next] = 1.0;
                if h == horizon - 1 && s == states - 1 {
                    r[dims.sa(h, s, a)] = 1.0;
                }
            }
        }
    }
    let mut rho = vec![0.0; states];
    rho[0] = 1.0;
    TabularMdp::new(dims, p, r, rho)
}

/// Two-region MDP for the collaborative-coverage regime.
///
/// State `0` is the clean track, states `1..S` are absorbing dead ends.
/// On the clean track action `1` is safe and every other action survives
/// with probability [`RISKY_SURVIVAL`]. The only reward is 1 at the final
/// step on the clean track, so `V* = 1` and the optimal policy plays the
/// safe action at every decision step.
pub fn split_mdp(states: usize, actions: usize, horizon: usize) -> Result<TabularMdp> {
    let dims = Dims::new(states, actions, horizon)?;
    if states < 2 || actions < 2 || horizon < 3 {
        return Err(Error::validation(format!(
            "split MDP needs S >= 2, A >= 2, H >= 3 (got S={states}, A={actions}, H={horizon})"
        )));
    }
    let dead = states - 1;
    let mut p = vec![0.0; dims.cells() * states];
    let mut r = vec![0.0; dims.cells()];
    for h in 0..horizon {
        for s in 0..states {
            for a in 0..actions {
                let row = &mut p[dims.sa(h, s, a) * states..(dims.sa(h, s, a) + 1) * states];
                if s != 0 {
                    row[s] = 1.0;
                } else if a == 1 {
                    row[0] = 1.0;
                } else {
                    row[0] = RISKY_SURVIVAL;
                    row[1..].iter_mut().for_each(|x| *x = (1.0 - RISKY_SURVIVAL) / dead as f64);
                }
                if h == horizon - 1 && s == 0 {
                    r[dims.sa(h, s, a)] = 1.0;
                }
            }
        }
    }
    let mut rho = vec![0.0; states];
    rho[0] = 1.0;
    TabularMdp::new(dims, p, r, rho)
}

/// Decision steps `[0, H-1)` are split into an early and a late group; agent
/// `0` may play every action on the clean track early but only the risky
/// action `0` late, agent `1` the reverse.
pub fn split_coverage_masks(dims: Dims) -> [ActionMask; 2] {
    let decision_steps = dims.horizon - 1;
    let early_end = decision_steps.div_ceil(2);
    let build = |early_open: bool| {
        let mut allowed = vec![true; dims.cells()];
        for h in 0..decision_steps {
            let open = (h < early_end) == early_open;
            if !open {
                for a in 1..dims.actions {
                    allowed[dims.sa(h, 0, a)] = false;
                }
            }
        }
        ActionMask { dims, allowed }
    };
    [build(true), build(false)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_behavior_policy, BehaviorKind};
    use crate::mdp::{average_concentrability, clipped_concentrability, occupancy_distributions, value_iteration};

    #[test]
    fn chain_two_by_two_has_value_one() {
        let mdp = chain_mdp(2, 2).unwrap();
        let (vt, pi) = value_iteration(&mdp);
        assert_eq!(vt.initial_value(mdp.initial()), 1.0);
        assert_eq!(pi.action(0, 0), 1);
        assert!(chain_mdp(5, 3).is_err());
    }

    #[test]
    fn random_generator_is_seed_deterministic() {
        let a = random_mdp(4, 2, 3, 11).unwrap().to_json().unwrap();
        let b = random_mdp(4, 2, 3, 11).unwrap().to_json().unwrap();
        let c = random_mdp(4, 2, 3, 12).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn split_mdp_has_collective_but_not_individual_coverage() {
        for (s, a, h) in [(2, 2, 3), (2, 2, 5), (3, 3, 4)] {
            let mdp = split_mdp(s, a, h).unwrap();
            let (vt, pi_star) = value_iteration(&mdp);
            assert!((vt.initial_value(mdp.initial()) - 1.0).abs() < 1e-12);
            let d_opt = occupancy_distributions(&mdp, &pi_star.to_stochastic()).unwrap();
            let behaviors: Vec<_> = split_coverage_masks(mdp.dims())
                .into_iter()
                .map(|m| {
                    let mu = make_behavior_policy(&BehaviorKind::MaskedUniform(m), &mdp).unwrap();
                    occupancy_distributions(&mdp, &mu).unwrap()
                })
                .collect();
            for b in &behaviors {
                assert!(!clipped_concentrability(&d_opt, b, s).unwrap().is_finite());
            }
            assert!(average_concentrability(&d_opt, &behaviors, s).unwrap().is_finite());
        }
    }
}
