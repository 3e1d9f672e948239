//! Tabular episodic MDPs and exact dynamic-programming ground truth.
//!
//! Steps are indexed from `0` internally (`h = 0` is the first step). Value
//! tables carry one extra terminal slice at `h = H`, identically zero.
//! Transitions are non-stationary: every step owns its own kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability vectors supplied as input.
pub const INPUT_TOL: f64 = 1e-12;
/// Tolerance for sums accumulated by the DP routines.
pub const SUM_TOL: f64 = 1e-10;

/// Shape of a tabular episodic problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn new(states: usize, actions: usize, horizon: usize) -> Result<Self> {
        if states == 0 || actions == 0 || horizon == 0 {
            return Err(Error::validation(format!(
                "dimensions must be positive (S={states}, A={actions}, H={horizon})"
            )));
        }
        Ok(Dims {
            states,
            actions,
            horizon,
        })
    }

    /// Number of `(h, s, a)` cells over the decision steps.
    #[inline]
    pub fn cells(&self) -> usize {
        self.horizon * self.states * self.actions
    }

    /// Flat index of `(h, s, a)`; valid for `h <= H` in tables that carry
    /// the terminal slice.
    #[inline]
    pub fn sa(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.states + s) * self.actions + a
    }

    #[inline]
    pub fn hs(&self, h: usize, s: usize) -> usize {
        h * self.states + s
    }

    /// Inverse of [`Dims::sa`].
    pub fn unflatten(&self, idx: usize) -> (usize, usize, usize) {
        let a = idx % self.actions;
        let hs = idx / self.actions;
        (hs / self.states, hs % self.states, a)
    }

    pub fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.states {
            return Err(Error::validation(format!("state {s} out of range [0, {})", self.states)));
        }
        Ok(())
    }

    pub fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.actions {
            return Err(Error::validation(format!("action {a} out of range [0, {})", self.actions)));
        }
        Ok(())
    }
}

fn check_distribution(p: &[f64], path: &str) -> Result<()> {
    if let Some((i, x)) = p.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::validation(format!("{path}[{i}] = {x} is not a non-negative probability")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > INPUT_TOL {
        return Err(Error::validation(format!("{path} sums to {total}, expected 1")));
    }
    Ok(())
}

/// A finite-horizon MDP with step-dependent kernels and rewards in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    dims: Dims,
    /// `[h][s][a][s']`
    transitions: Vec<f64>,
    /// `[h][s][a]`
    rewards: Vec<f64>,
    initial: Vec<f64>,
}

/// On-disk JSON form of an MDP.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpDocument {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "P")]
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub r: Vec<Vec<Vec<f64>>>,
    pub rho: Vec<f64>,
}

impl TabularMdp {
    /// Builds an MDP from flat row-major tables and validates every invariant.
    pub fn new(dims: Dims, transitions: Vec<f64>, rewards: Vec<f64>, initial: Vec<f64>) -> Result<Self> {
        let dims = Dims::new(dims.states, dims.actions, dims.horizon)?;
        let (s_n, a_n) = (dims.states, dims.actions);
        if transitions.len() != dims.cells() * s_n {
            return Err(Error::validation(format!(
                "P has {} entries, expected H*S*A*S = {}",
                transitions.len(),
                dims.cells() * s_n
            )));
        }
        if rewards.len() != dims.cells() {
            return Err(Error::validation(format!(
                "r has {} entries, expected H*S*A = {}",
                rewards.len(),
                dims.cells()
            )));
        }
        if initial.len() != s_n {
            return Err(Error::validation(format!("rho has {} entries, expected S = {s_n}", initial.len())));
        }
        for h in 0..dims.horizon {
            for s in 0..s_n {
                for a in 0..a_n {
                    let idx = dims.sa(h, s, a);
                    check_distribution(&transitions[idx * s_n..(idx + 1) * s_n], &format!("P[{h}][{s}][{a}]"))?;
                    let r = rewards[idx];
                    if !(0.0..=1.0).contains(&r) {
                        return Err(Error::validation(format!("r[{h}][{s}][{a}] = {r} outside [0, 1]")));
                    }
                }
            }
        }
        check_distribution(&initial, "rho")?;
        Ok(TabularMdp {
            dims,
            transitions,
            rewards,
            initial,
        })
    }

    pub fn from_document(doc: MdpDocument) -> Result<Self> {
        let dims = Dims::new(doc.states, doc.actions, doc.horizon)?;
        let shape_err = |what: &str| Error::validation(format!("{what} has the wrong shape for S={}, A={}, H={}", dims.states, dims.actions, dims.horizon));
        if doc.transitions.len() != dims.horizon || doc.r.len() != dims.horizon {
            return Err(shape_err("P or r (outer dimension H)"));
        }
        let mut p = Vec::with_capacity(dims.cells() * dims.states);
        let mut r = Vec::with_capacity(dims.cells());
        for (h, (ph, rh)) in doc.transitions.iter().zip(&doc.r).enumerate() {
            if ph.len() != dims.states || rh.len() != dims.states {
                return Err(shape_err(&format!("P[{h}] or r[{h}]")));
            }
            for (s, (phs, rhs)) in ph.iter().zip(rh).enumerate() {
                if phs.len() != dims.actions || rhs.len() != dims.actions {
                    return Err(shape_err(&format!("P[{h}][{s}] or r[{h}][{s}]")));
                }
                for (a, row) in phs.iter().enumerate() {
                    if row.len() != dims.states {
                        return Err(shape_err(&format!("P[{h}][{s}][{a}]")));
                    }
                    p.extend_from_slice(row);
                }
                r.extend_from_slice(rhs);
            }
        }
        TabularMdp::new(dims, p, r, doc.rho)
    }

    pub fn to_document(&self) -> MdpDocument {
        let d = self.dims;
        let transitions = (0..d.horizon)
            .map(|h| {
                (0..d.states)
                    .map(|s| (0..d.actions).map(|a| self.next_dist(h, s, a).to_vec()).collect())
                    .collect()
            })
            .collect();
        let r = (0..d.horizon)
            .map(|h| (0..d.states).map(|s| (0..d.actions).map(|a| self.reward(h, s, a)).collect()).collect())
            .collect();
        MdpDocument {
            states: d.states,
            actions: d.actions,
            horizon: d.horizon,
            transitions,
            r,
            rho: self.initial.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        TabularMdp::from_document(doc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        TabularMdp::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn next_dist(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let n = self.dims.states;
        let idx = self.dims.sa(h, s, a);
        &self.transitions[idx * n..(idx + 1) * n]
    }

    #[inline]
    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[self.dims.sa(h, s, a)]
    }

    #[inline]
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// `P_{h,s,a} · v` for a next-step value slice `v` of length `S`.
    #[inline]
    pub fn expect(&self, h: usize, s: usize, a: usize, v: &[f64]) -> f64 {
        self.next_dist(h, s, a).iter().zip(v).map(|(p, x)| p * x).sum()
    }
}

/// One action per `(h, s)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    pub horizon: usize,
    pub states: usize,
    pub num_actions: usize,
    /// `[h][s]`
    pub actions: Vec<usize>,
}

impl DeterministicPolicy {
    /// The all-zero policy, used as the learner's initial policy.
    pub fn zeros(dims: Dims) -> Self {
        DeterministicPolicy {
            horizon: dims.horizon,
            states: dims.states,
            num_actions: dims.actions,
            actions: vec![0; dims.horizon * dims.states],
        }
    }

    pub fn new(dims: Dims, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != dims.horizon * dims.states {
            return Err(Error::validation(format!(
                "policy has {} entries, expected H*S = {}",
                actions.len(),
                dims.horizon * dims.states
            )));
        }
        if let Some(i) = actions.iter().position(|&a| a >= dims.actions) {
            return Err(Error::validation(format!(
                "policy[{}][{}] = {} outside [0, {})",
                i / dims.states,
                i % dims.states,
                actions[i],
                dims.actions
            )));
        }
        Ok(DeterministicPolicy {
            horizon: dims.horizon,
            states: dims.states,
            num_actions: dims.actions,
            actions,
        })
    }

    #[inline]
    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[h * self.states + s]
    }

    pub fn to_stochastic(&self) -> StochasticPolicy {
        let mut probs = vec![0.0; self.actions.len() * self.num_actions];
        for (i, &a) in self.actions.iter().enumerate() {
            probs[i * self.num_actions + a] = 1.0;
        }
        StochasticPolicy {
            horizon: self.horizon,
            states: self.states,
            num_actions: self.num_actions,
            probs,
        }
    }

    fn check_dims(&self, dims: Dims) -> Result<()> {
        if self.horizon != dims.horizon || self.states != dims.states || self.num_actions != dims.actions {
            return Err(Error::validation("policy dimensions do not match the MDP"));
        }
        Ok(())
    }
}

/// A distribution over actions per `(h, s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy {
    pub horizon: usize,
    pub states: usize,
    pub num_actions: usize,
    /// `[h][s][a]`
    pub probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(dims: Dims, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != dims.cells() {
            return Err(Error::validation(format!(
                "policy has {} entries, expected H*S*A = {}",
                probs.len(),
                dims.cells()
            )));
        }
        for h in 0..dims.horizon {
            for s in 0..dims.states {
                let start = dims.sa(h, s, 0);
                check_distribution(&probs[start..start + dims.actions], &format!("pi[{h}][{s}]"))?;
            }
        }
        Ok(StochasticPolicy {
            horizon: dims.horizon,
            states: dims.states,
            num_actions: dims.actions,
            probs,
        })
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let start = (h * self.states + s) * self.num_actions;
        &self.probs[start..start + self.num_actions]
    }

    fn check_dims(&self, dims: Dims) -> Result<()> {
        if self.horizon != dims.horizon || self.states != dims.states || self.num_actions != dims.actions {
            return Err(Error::validation(format!(
                "policy dimensions (H={}, S={}, A={}) do not match the MDP (H={}, S={}, A={})",
                self.horizon, self.states, self.num_actions, dims.horizon, dims.states, dims.actions
            )));
        }
        Ok(())
    }
}

/// `Q[h][s][a]` and `V[h][s]` for `h ∈ [0, H]`; the `h = H` slice is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTables {
    pub dims: Dims,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl ValueTables {
    pub fn zeros(dims: Dims) -> Self {
        ValueTables {
            dims,
            q: vec![0.0; (dims.horizon + 1) * dims.states * dims.actions],
            v: vec![0.0; (dims.horizon + 1) * dims.states],
        }
    }

    #[inline]
    pub fn q(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q[self.dims.sa(h, s, a)]
    }

    #[inline]
    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.v[self.dims.hs(h, s)]
    }

    /// The value slice `V[h][·]`.
    #[inline]
    pub fn v_slice(&self, h: usize) -> &[f64] {
        let n = self.dims.states;
        &self.v[h * n..(h + 1) * n]
    }

    /// `Σ_s ρ(s) V[0][s]`.
    pub fn initial_value(&self, rho: &[f64]) -> f64 {
        rho.iter().zip(self.v_slice(0)).map(|(p, v)| p * v).sum()
    }
}

/// Smallest index attaining the maximum.
pub(crate) fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &x) in values.iter().enumerate().skip(1) {
        if x > values[best] {
            best = i;
        }
    }
    (best, values[best])
}

/// Backward induction on the Bellman optimality equation. Ties in the argmax
/// go to the smallest action index.
pub fn value_iteration(mdp: &TabularMdp) -> (ValueTables, DeterministicPolicy) {
    let d = mdp.dims();
    let mut tables = ValueTables::zeros(d);
    let mut policy = DeterministicPolicy::zeros(d);
    for h in (0..d.horizon).rev() {
        let (head, tail) = tables.v.split_at_mut((h + 1) * d.states);
        let v_next = &tail[..d.states];
        for s in 0..d.states {
            let base = d.sa(h, s, 0);
            for a in 0..d.actions {
                tables.q[base + a] = mdp.reward(h, s, a) + mdp.expect(h, s, a, v_next);
            }
            let (best, value) = argmax_first(&tables.q[base..base + d.actions]);
            head[d.hs(h, s)] = value;
            policy.actions[d.hs(h, s)] = best;
        }
    }
    (tables, policy)
}

/// Exact `Q^π`, `V^π` by backward recursion, plus `V₁^π(ρ)`.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &StochasticPolicy, rho: &[f64]) -> Result<(ValueTables, f64)> {
    let d = mdp.dims();
    policy.check_dims(d)?;
    if rho.len() != d.states {
        return Err(Error::validation(format!("rho has {} entries, expected {}", rho.len(), d.states)));
    }
    let mut tables = ValueTables::zeros(d);
    for h in (0..d.horizon).rev() {
        let (head, tail) = tables.v.split_at_mut((h + 1) * d.states);
        let v_next = &tail[..d.states];
        for s in 0..d.states {
            let base = d.sa(h, s, 0);
            let mut v = 0.0;
            for (a, p) in policy.row(h, s).iter().enumerate() {
                let q = mdp.reward(h, s, a) + mdp.expect(h, s, a, v_next);
                tables.q[base + a] = q;
                v += p * q;
            }
            head[d.hs(h, s)] = v;
        }
    }
    let value = tables.initial_value(rho);
    Ok((tables, value))
}

/// Evaluation of a deterministic policy from the MDP's own initial distribution.
pub fn evaluate_deterministic(mdp: &TabularMdp, policy: &DeterministicPolicy) -> Result<(ValueTables, f64)> {
    policy.check_dims(mdp.dims())?;
    evaluate_policy(mdp, &policy.to_stochastic(), mdp.initial())
}

/// State and state-action occupancy per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTables {
    pub dims: Dims,
    /// `[h][s]`
    pub state: Vec<f64>,
    /// `[h][s][a]`
    pub state_action: Vec<f64>,
}

impl OccupancyTables {
    pub fn zeros(dims: Dims) -> Self {
        OccupancyTables {
            dims,
            state: vec![0.0; dims.horizon * dims.states],
            state_action: vec![0.0; dims.cells()],
        }
    }

    #[inline]
    pub fn sa(&self, h: usize, s: usize, a: usize) -> f64 {
        self.state_action[self.dims.sa(h, s, a)]
    }

    #[inline]
    pub fn s(&self, h: usize, s: usize) -> f64 {
        self.state[self.dims.hs(h, s)]
    }

    /// Elementwise mean of a non-empty list of tables.
    pub fn average(tables: &[OccupancyTables]) -> Result<OccupancyTables> {
        let first = tables.first().ok_or_else(|| Error::validation("empty list of occupancy tables"))?;
        let mut out = OccupancyTables::zeros(first.dims);
        for t in tables {
            if t.dims != first.dims {
                return Err(Error::validation("occupancy tables have mismatched dimensions"));
            }
            out.state.iter_mut().zip(&t.state).for_each(|(o, x)| *o += x);
            out.state_action.iter_mut().zip(&t.state_action).for_each(|(o, x)| *o += x);
        }
        let m = tables.len() as f64;
        out.state.iter_mut().for_each(|x| *x /= m);
        out.state_action.iter_mut().for_each(|x| *x /= m);
        Ok(out)
    }
}

/// Forward recursion for the occupancy distributions of `policy` from `ρ`.
pub fn occupancy_distributions(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<OccupancyTables> {
    let d = mdp.dims();
    policy.check_dims(d)?;
    let mut occ = OccupancyTables::zeros(d);
    occ.state[..d.states].copy_from_slice(mdp.initial());
    for h in 0..d.horizon {
        for s in 0..d.states {
            let ds = occ.state[d.hs(h, s)];
            for (a, p) in policy.row(h, s).iter().enumerate() {
                let mass = ds * p;
                occ.state_action[d.sa(h, s, a)] = mass;
                if h + 1 < d.horizon && mass != 0.0 {
                    let next = mdp.next_dist(h, s, a);
                    let row = &mut occ.state[(h + 1) * d.states..(h + 2) * d.states];
                    for (o, p) in row.iter_mut().zip(next) {
                        *o += mass * p;
                    }
                }
            }
        }
    }
    Ok(occ)
}

/// A concentrability coefficient; `Infinite` when the behavior data misses a
/// cell that the comparison policy visits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Concentrability {
    Finite(f64),
    Infinite,
}

impl Concentrability {
    pub fn is_finite(&self) -> bool {
        matches!(self, Concentrability::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Concentrability::Finite(x) => Some(*x),
            Concentrability::Infinite => None,
        }
    }

    pub fn as_f64(&self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }
}

/// `max_{h,s,a} min{d_opt, cap} / d_behavior` with `0/0 = 0`. `cap = None`
/// gives the unclipped ratio.
pub fn occupancy_ratio(d_opt: &OccupancyTables, d_behavior: &OccupancyTables, cap: Option<f64>) -> Result<Concentrability> {
    if d_opt.dims != d_behavior.dims {
        return Err(Error::validation("occupancy tables have mismatched dimensions"));
    }
    let mut worst: f64 = 0.0;
    for (&num, &den) in d_opt.state_action.iter().zip(&d_behavior.state_action) {
        let num = cap.map_or(num, |c| num.min(c));
        if num == 0.0 {
            continue;
        }
        if den == 0.0 {
            return Ok(Concentrability::Infinite);
        }
        worst = worst.max(num / den);
    }
    Ok(Concentrability::Finite(worst))
}

/// Single-policy clipped concentrability with clip threshold `1/S`.
pub fn clipped_concentrability(d_opt: &OccupancyTables, d_behavior: &OccupancyTables, num_states: usize) -> Result<Concentrability> {
    if num_states != d_opt.dims.states {
        return Err(Error::validation(format!("S = {num_states} does not match the tables' S = {}", d_opt.dims.states)));
    }
    occupancy_ratio(d_opt, d_behavior, Some(1.0 / num_states as f64))
}

/// Clipped concentrability against the agent-averaged behavior occupancy.
pub fn average_concentrability(d_opt: &OccupancyTables, d_behaviors: &[OccupancyTables], num_states: usize) -> Result<Concentrability> {
    if d_behaviors.is_empty() {
        return Err(Error::validation("average concentrability needs at least one behavior table"));
    }
    let avg = OccupancyTables::average(d_behaviors)?;
    clipped_concentrability(d_opt, &avg, num_states)
}
