//! Finite networked MDPs and the exact quantities derived from them.
//!
//! Joint actions use a mixed-radix encoding of the per-agent actions with
//! agent 0 as the most significant digit. Dense tensors are stored row-major
//! in `[state][joint_action][next_state]` order.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_REWARD_BOUND: f64 = 100.0;
const STOCHASTIC_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Cooperative,
    Adversary,
}

/// A finite MDP shared by `N` agents, each with a private reward table.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkedMdp {
    num_states: usize,
    action_sizes: Vec<usize>,
    num_joint_actions: usize,
    transitions: Vec<f64>,
    rewards: Vec<Vec<f64>>,
    gamma: f64,
    roles: Vec<Role>,
    reward_bound: f64,
}

impl NetworkedMdp {
    /// Builds and validates an MDP. `transitions` holds `P(s'|s,a)` and each
    /// entry of `rewards` holds one agent's `r^i(s,a,s')`, both in
    /// `[s][a][s']` order.
    pub fn new(
        num_states: usize,
        action_sizes: Vec<usize>,
        transitions: Vec<f64>,
        rewards: Vec<Vec<f64>>,
        gamma: f64,
        roles: Vec<Role>,
        reward_bound: f64,
    ) -> Result<Self> {
        if num_states == 0 {
            return Err(Error::InvalidMdp("state space is empty".into()));
        }
        if action_sizes.is_empty() {
            return Err(Error::InvalidMdp("no agents".into()));
        }
        if let Some(i) = action_sizes.iter().position(|&n| n == 0) {
            return Err(Error::InvalidMdp(format!("agent {i} has an empty action set")));
        }
        let num_joint_actions = action_sizes
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| Error::InvalidMdp("joint action space overflows".into()))?;
        let len = num_states * num_joint_actions * num_states;
        if transitions.len() != len {
            return Err(Error::Dimension(format!(
                "transition kernel has {} entries, expected {len}",
                transitions.len()
            )));
        }
        let num_agents = action_sizes.len();
        if rewards.len() != num_agents || roles.len() != num_agents {
            return Err(Error::Dimension(format!(
                "{num_agents} agents but {} reward tables and {} roles",
                rewards.len(),
                roles.len()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidMdp(format!("discount {gamma} outside [0, 1)")));
        }
        if !(reward_bound.is_finite() && reward_bound > 0.0) {
            return Err(Error::InvalidMdp(format!("reward bound {reward_bound} must be positive")));
        }
        let adversaries = roles.iter().filter(|r| **r == Role::Adversary).count();
        if adversaries > 1 {
            return Err(Error::InvalidMdp(format!(
                "{adversaries} agents tagged adversary; at most one is supported"
            )));
        }
        for (row_idx, row) in transitions.chunks(num_states).enumerate() {
            let (s, a) = (row_idx / num_joint_actions, row_idx % num_joint_actions);
            if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
                return Err(Error::InvalidMdp(format!("P(.|{s},{a}) has invalid entry {p}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidMdp(format!("P(.|{s},{a}) sums to {sum}")));
            }
        }
        for (i, table) in rewards.iter().enumerate() {
            if table.len() != len {
                return Err(Error::Dimension(format!(
                    "reward table of agent {i} has {} entries, expected {len}",
                    table.len()
                )));
            }
            if let Some(r) = table.iter().find(|r| !(r.is_finite() && r.abs() <= reward_bound)) {
                return Err(Error::InvalidMdp(format!(
                    "agent {i} reward {r} is not bounded by {reward_bound}"
                )));
            }
        }
        Ok(Self {
            num_states,
            action_sizes,
            num_joint_actions,
            transitions,
            rewards,
            gamma,
            roles,
            reward_bound,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.action_sizes.len()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn action_sizes(&self) -> &[usize] {
        &self.action_sizes
    }

    pub fn num_joint_actions(&self) -> usize {
        self.num_joint_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    pub fn adversary(&self) -> Option<usize> {
        self.roles.iter().position(|r| *r == Role::Adversary)
    }

    /// Returns a copy with the roles replaced.
    pub fn with_roles(&self, roles: Vec<Role>) -> Result<Self> {
        let mut out = self.clone();
        if roles.len() != self.num_agents() {
            return Err(Error::Dimension(format!(
                "{} roles for {} agents",
                roles.len(),
                self.num_agents()
            )));
        }
        if roles.iter().filter(|r| **r == Role::Adversary).count() > 1 {
            return Err(Error::InvalidMdp("at most one adversary is supported".into()));
        }
        out.roles = roles;
        Ok(out)
    }

    /// Returns a copy in which `agent`'s reward table is replaced. The reward
    /// bound grows to cover the new table if necessary.
    pub fn with_reward_table(&self, agent: usize, table: Vec<f64>) -> Result<Self> {
        if agent >= self.num_agents() {
            return Err(Error::Input(format!("agent {agent} >= {}", self.num_agents())));
        }
        if table.len() != self.transitions.len() {
            return Err(Error::Dimension(format!(
                "reward table has {} entries, expected {}",
                table.len(),
                self.transitions.len()
            )));
        }
        if let Some(r) = table.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp(format!("agent {agent} reward {r} is not finite")));
        }
        let mut out = self.clone();
        out.reward_bound = table.iter().fold(self.reward_bound, |b, r| b.max(r.abs()));
        out.rewards[agent] = table;
        Ok(out)
    }

    fn index(&self, s: usize, a: usize, next: usize) -> usize {
        (s * self.num_joint_actions + a) * self.num_states + next
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[self.index(s, a, next)]
    }

    /// `P(.|s,a)` as a slice over next states.
    pub fn next_state_distribution(&self, s: usize, a: usize) -> &[f64] {
        let start = self.index(s, a, 0);
        &self.transitions[start..start + self.num_states]
    }

    pub fn reward(&self, agent: usize, s: usize, a: usize, next: usize) -> f64 {
        self.rewards[agent][self.index(s, a, next)]
    }

    pub fn reward_table(&self, agent: usize) -> &[f64] {
        &self.rewards[agent]
    }

    pub fn encode_joint_action(&self, actions: &[usize]) -> Result<usize> {
        encode_joint_action(&self.action_sizes, actions)
    }

    pub fn decode_joint_action(&self, a: usize) -> Vec<usize> {
        decode_joint_action(&self.action_sizes, a)
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.num_states {
            return Err(Error::Input(format!("state {s} >= {}", self.num_states)));
        }
        Ok(())
    }

    fn check_policy(&self, policy: &JointPolicy) -> Result<()> {
        if policy.num_states != self.num_states || policy.action_sizes != self.action_sizes {
            return Err(Error::Config(format!(
                "policy over {} states / actions {:?} does not fit mdp with {} states / actions {:?}",
                policy.num_states, policy.action_sizes, self.num_states, self.action_sizes
            )));
        }
        Ok(())
    }

    /// `P_theta(s'|s) = sum_a P(s'|s,a) pi(a|s)`.
    pub fn transition_matrix(&self, policy: &JointPolicy) -> Result<DMatrix<f64>> {
        self.check_policy(policy)?;
        let n = self.num_states;
        let mut out = DMatrix::zeros(n, n);
        for s in 0..n {
            let joint = policy.joint_distribution(s);
            for (a, pa) in joint.iter().enumerate() {
                for (next, p) in self.next_state_distribution(s, a).iter().enumerate() {
                    out[(s, next)] += pa * p;
                }
            }
        }
        Ok(out)
    }

    /// Per-agent and team-average expected rewards under `policy`.
    pub fn reward_summaries(&self, policy: &JointPolicy) -> Result<RewardSummary> {
        self.check_policy(policy)?;
        let (ns, na) = (self.num_states, self.num_joint_actions);
        let joint: Vec<Vec<f64>> = (0..ns).map(|s| policy.joint_distribution(s)).collect();
        let mut per_agent_sa = Vec::with_capacity(self.num_agents());
        let mut per_agent_state = Vec::with_capacity(self.num_agents());
        for i in 0..self.num_agents() {
            let mut sa = DVector::zeros(ns * na);
            let mut st = DVector::zeros(ns);
            for s in 0..ns {
                for a in 0..na {
                    let start = self.index(s, a, 0);
                    let r_hat: f64 = self.next_state_distribution(s, a)
                        .iter()
                        .zip(&self.rewards[i][start..start + ns])
                        .map(|(p, r)| p * r)
                        .sum();
                    sa[s * na + a] = r_hat;
                    st[s] += joint[s][a] * r_hat;
                }
            }
            per_agent_sa.push(sa);
            per_agent_state.push(st);
        }
        let n = self.num_agents() as f64;
        let team_sa = per_agent_sa.iter().fold(DVector::zeros(ns * na), |acc, v| acc + v) / n;
        let team_state = per_agent_state.iter().fold(DVector::zeros(ns), |acc, v| acc + v) / n;
        Ok(RewardSummary { per_agent_sa, per_agent_state, team_sa, team_state })
    }

    /// Samples `s' ~ P(.|s,a)` and returns every agent's reward for the
    /// transition.
    pub fn sample_step<R: Rng + ?Sized>(
        &self,
        s: usize,
        a: usize,
        rng: &mut R,
    ) -> Result<(usize, Vec<f64>)> {
        self.check_state(s)?;
        if a >= self.num_joint_actions {
            return Err(Error::Input(format!("joint action {a} >= {}", self.num_joint_actions)));
        }
        let next = sample_categorical(self.next_state_distribution(s, a), rng);
        let idx = self.index(s, a, next);
        let rewards = self.rewards.iter().map(|table| table[idx]).collect();
        Ok((next, rewards))
    }

    /// Loads an MDP from its TOML description. See [`MdpFile`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path, message),
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: MdpFile = toml::from_str(text).map_err(|e| Error::parse("<mdp>", e))?;
        file.into_mdp()
    }
}

/// Mixed-radix joint-action index with agent 0 most significant.
pub fn encode_joint_action(action_sizes: &[usize], actions: &[usize]) -> Result<usize> {
    if actions.len() != action_sizes.len() {
        return Err(Error::Dimension(format!(
            "{} actions for {} agents",
            actions.len(),
            action_sizes.len()
        )));
    }
    let mut idx = 0;
    for (i, (&a, &n)) in actions.iter().zip(action_sizes).enumerate() {
        if a >= n {
            return Err(Error::Input(format!("agent {i} action {a} >= {n}")));
        }
        idx = idx * n + a;
    }
    Ok(idx)
}

pub fn decode_joint_action(action_sizes: &[usize], mut a: usize) -> Vec<usize> {
    let mut out = vec![0; action_sizes.len()];
    for (slot, &n) in out.iter_mut().zip(action_sizes).rev() {
        *slot = a % n;
        a /= n;
    }
    out
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap at the top; pick the last supported entry
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Product policy `pi(a|s) = prod_i pi^i(a^i|s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointPolicy {
    num_states: usize,
    action_sizes: Vec<usize>,
    /// `per_agent[i][s * |A^i| + a_i]`
    per_agent: Vec<Vec<f64>>,
}

impl JointPolicy {
    pub fn new(num_states: usize, action_sizes: Vec<usize>, per_agent: Vec<Vec<f64>>) -> Result<Self> {
        if per_agent.len() != action_sizes.len() {
            return Err(Error::Dimension(format!(
                "{} conditionals for {} agents",
                per_agent.len(),
                action_sizes.len()
            )));
        }
        for (i, (probs, &n)) in per_agent.iter().zip(&action_sizes).enumerate() {
            if probs.len() != num_states * n {
                return Err(Error::Dimension(format!(
                    "agent {i} conditional has {} entries, expected {}",
                    probs.len(),
                    num_states * n
                )));
            }
            for (s, row) in probs.chunks(n).enumerate() {
                if row.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                    return Err(Error::Parameter(format!(
                        "agent {i} policy at state {s} has a non-positive entry"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::Parameter(format!(
                        "agent {i} policy at state {s} sums to {sum}"
                    )));
                }
            }
        }
        Ok(Self { num_states, action_sizes, per_agent })
    }

    pub fn uniform(num_states: usize, action_sizes: &[usize]) -> Self {
        let per_agent = action_sizes
            .iter()
            .map(|&n| vec![1.0 / n as f64; num_states * n])
            .collect();
        Self { num_states, action_sizes: action_sizes.to_vec(), per_agent }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn action_sizes(&self) -> &[usize] {
        &self.action_sizes
    }

    /// `pi^i(.|s)`.
    pub fn agent_distribution(&self, agent: usize, s: usize) -> &[f64] {
        let n = self.action_sizes[agent];
        &self.per_agent[agent][s * n..(s + 1) * n]
    }

    /// `pi(.|s)` over joint actions.
    pub fn joint_distribution(&self, s: usize) -> Vec<f64> {
        let mut out = vec![1.0];
        for agent in 0..self.action_sizes.len() {
            let local = self.agent_distribution(agent, s);
            out = out
                .iter()
                .flat_map(|p| local.iter().map(move |q| p * q))
                .collect();
        }
        out
    }

    pub fn joint_prob(&self, s: usize, a: usize) -> f64 {
        decode_joint_action(&self.action_sizes, a)
            .iter()
            .enumerate()
            .map(|(i, &ai)| self.agent_distribution(i, s)[ai])
            .product()
    }
}

/// Expected rewards per `(s,a)` and per state, per agent and team-averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardSummary {
    /// `R^i` over `(s,a)` pairs, index `s * |A| + a`.
    pub per_agent_sa: Vec<DVector<f64>>,
    /// `R_theta^i` over states.
    pub per_agent_state: Vec<DVector<f64>>,
    pub team_sa: DVector<f64>,
    pub team_state: DVector<f64>,
}

/// Verifies that the chain is irreducible and aperiodic.
///
/// Irreducibility is checked by forward and backward reachability from state
/// 0; aperiodicity by the gcd of level differences along every edge of a BFS
/// tree, which together are equivalent to some power of the matrix being
/// entrywise positive.
pub fn check_primitive(p: &DMatrix<f64>) -> Result<()> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(Error::Dimension(format!("transition matrix is {}x{}", p.nrows(), p.ncols())));
    }
    let forward = bfs_levels(n, |u, v| p[(u, v)] > 0.0);
    let backward = bfs_levels(n, |u, v| p[(v, u)] > 0.0);
    let outside: Vec<usize> = (0..n)
        .filter(|&s| forward[s].is_none() || backward[s].is_none())
        .collect();
    if !outside.is_empty() {
        return Err(Error::Irreducible { states: outside });
    }
    let mut period = 0usize;
    for u in 0..n {
        for v in 0..n {
            if p[(u, v)] > 0.0 {
                let (lu, lv) = (forward[u].unwrap(), forward[v].unwrap());
                period = gcd(period, (lu + 1).abs_diff(lv));
            }
        }
    }
    if period != 1 {
        return Err(Error::Irreducible { states: (0..n).collect() });
    }
    Ok(())
}

fn bfs_levels(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<Option<usize>> {
    let mut level = vec![None; n];
    level[0] = Some(0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        let next = level[u].unwrap() + 1;
        for v in 0..n {
            if level[v].is_none() && edge(u, v) {
                level[v] = Some(next);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Stationary distribution `d` with `d P = d`, `sum d = 1`.
///
/// Solves `(P^T - I) d = 0` with the last equation replaced by the
/// normalisation, and falls back to power iteration when the direct solve
/// does not meet the residual bound.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_primitive(p)?;
    let n = p.nrows();
    let mut system = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        system[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    if let Some(d) = system.lu().solve(&rhs) {
        if is_stationary(p, &d) {
            return Ok(d);
        }
    }
    let mut d = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..1_000_000 {
        let next = (d.transpose() * p).transpose();
        let change = (&next - &d).amax();
        d = next;
        if change < 1e-15 {
            break;
        }
    }
    d /= d.sum();
    if is_stationary(p, &d) {
        Ok(d)
    } else {
        Err(Error::Singular("stationary distribution did not meet the residual bound".into()))
    }
}

fn is_stationary(p: &DMatrix<f64>, d: &DVector<f64>) -> bool {
    let residual = (d.transpose() * p - d.transpose()).amax();
    residual <= STATIONARY_TOL && d.iter().all(|x| *x > 0.0) && (d.sum() - 1.0).abs() <= STATIONARY_TOL
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Num {
    Int(i64),
    Float(f64),
}

impl Num {
    fn as_f64(&self) -> f64 {
        match *self {
            Num::Int(i) => i as f64,
            Num::Float(x) => x,
        }
    }

    fn as_index(&self) -> Result<usize> {
        match *self {
            Num::Int(i) if i >= 0 => Ok(i as usize),
            _ => Err(Error::parse("<mdp>", "indices must be non-negative integers")),
        }
    }
}

/// On-disk MDP description.
///
/// ```toml
/// num_states = 2
/// action_sizes = [2, 1]
/// gamma = 0.9
/// roles = ["adversary", "cooperative"]
/// reward_bound = 100.0                 # optional
/// transitions = [[0, 0, 1, 1.0], ...]  # (s, a, s', p), or
/// transition_rows = [[...], ...]       # |S|*|A| dense rows of length |S|
/// rewards = [[0, 0, 0, 1, 2.5], ...]   # (agent, s, a, s', r); missing = 0
/// ```
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpFile {
    num_states: usize,
    action_sizes: Vec<usize>,
    gamma: f64,
    roles: Option<Vec<Role>>,
    reward_bound: Option<f64>,
    #[serde(default)]
    transitions: Vec<Vec<Num>>,
    transition_rows: Option<Vec<Vec<Num>>>,
    #[serde(default)]
    rewards: Vec<Vec<Num>>,
}

impl MdpFile {
    fn into_mdp(self) -> Result<NetworkedMdp> {
        let ns = self.num_states;
        let na: usize = self.action_sizes.iter().product();
        let n_agents = self.action_sizes.len();
        let len = ns * na * ns;
        let bad = |what: &str| Error::parse("<mdp>", what);
        let mut transitions = vec![0.0; len];
        match (&self.transition_rows, self.transitions.is_empty()) {
            (Some(_), false) => return Err(bad("give either `transitions` or `transition_rows`, not both")),
            (None, true) => return Err(bad("missing `transitions`")),
            (Some(rows), true) => {
                if rows.len() != ns * na || rows.iter().any(|r| r.len() != ns) {
                    return Err(bad("`transition_rows` must have |S|*|A| rows of length |S|"));
                }
                for (k, x) in rows.iter().flatten().enumerate() {
                    transitions[k] = x.as_f64();
                }
            }
            (None, false) => {
                for entry in &self.transitions {
                    let [s, a, next, p] = entry.as_slice() else {
                        return Err(bad("transition entries are (s, a, s', p)"));
                    };
                    let (s, a, next) = (s.as_index()?, a.as_index()?, next.as_index()?);
                    if s >= ns || a >= na || next >= ns {
                        return Err(bad(&format!("transition entry ({s}, {a}, {next}) out of range")));
                    }
                    transitions[(s * na + a) * ns + next] = p.as_f64();
                }
            }
        }
        let mut rewards = vec![vec![0.0; len]; n_agents];
        for entry in &self.rewards {
            let [i, s, a, next, r] = entry.as_slice() else {
                return Err(bad("reward entries are (agent, s, a, s', r)"));
            };
            let (i, s, a, next) = (i.as_index()?, s.as_index()?, a.as_index()?, next.as_index()?);
            if i >= n_agents || s >= ns || a >= na || next >= ns {
                return Err(bad(&format!("reward entry ({i}, {s}, {a}, {next}) out of range")));
            }
            rewards[i][(s * na + a) * ns + next] = r.as_f64();
        }
        let roles = self.roles.unwrap_or_else(|| vec![Role::Cooperative; n_agents]);
        NetworkedMdp::new(
            ns,
            self.action_sizes,
            transitions,
            rewards,
            self.gamma,
            roles,
            self.reward_bound.unwrap_or(DEFAULT_REWARD_BOUND),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng;

    fn random_mdp(seed: u64, ns: usize, actions: Vec<usize>) -> NetworkedMdp {
        let mut rng = stream(seed, Stream::Init);
        let na: usize = actions.iter().product();
        let mut transitions = Vec::new();
        for _ in 0..ns * na {
            let row: Vec<f64> = (0..ns).map(|_| rng.random::<f64>() + 0.05).collect();
            let sum: f64 = row.iter().sum();
            transitions.extend(row.iter().map(|x| x / sum));
        }
        let rewards = (0..actions.len())
            .map(|_| (0..ns * na * ns).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let roles = vec![Role::Cooperative; actions.len()];
        NetworkedMdp::new(ns, actions, transitions, rewards, 0.9, roles, 100.0).unwrap()
    }

    fn random_policy(seed: u64, ns: usize, actions: &[usize]) -> JointPolicy {
        let mut rng = stream(seed, Stream::Policy(0));
        let per_agent = actions
            .iter()
            .map(|&n| {
                (0..ns)
                    .flat_map(|_| {
                        let row: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.1).collect();
                        let sum: f64 = row.iter().sum();
                        row.into_iter().map(move |x| x / sum)
                    })
                    .collect()
            })
            .collect();
        JointPolicy::new(ns, actions.to_vec(), per_agent).unwrap()
    }

    fn two_state(p: [[f64; 2]; 2]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[p[0][0], p[0][1], p[1][0], p[1][1]])
    }

    #[test]
    fn joint_action_encoding_is_mixed_radix() {
        let sizes = [2, 3, 2];
        assert_eq!(encode_joint_action(&sizes, &[1, 0, 0]).unwrap(), 6);
        assert_eq!(encode_joint_action(&sizes, &[0, 2, 1]).unwrap(), 5);
        for a in 0..12 {
            let d = decode_joint_action(&sizes, a);
            assert_eq!(encode_joint_action(&sizes, &d).unwrap(), a);
        }
        assert!(matches!(encode_joint_action(&sizes, &[0, 3, 0]), Err(Error::Input(_))));
    }

    #[test]
    fn single_action_drops_action_axis() {
        let mdp = random_mdp(1, 3, vec![1, 1]);
        let p = mdp.transition_matrix(&JointPolicy::uniform(3, &[1, 1])).unwrap();
        for s in 0..3 {
            for next in 0..3 {
                assert_eq!(p[(s, next)], mdp.transition(s, 0, next));
            }
        }
    }

    #[test]
    fn uniform_policy_averages_point_masses() {
        let mdp = NetworkedMdp::new(
            2,
            vec![2],
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0],
            vec![vec![0.0; 8]],
            0.5,
            vec![Role::Cooperative],
            1.0,
        )
        .unwrap();
        let p = mdp.transition_matrix(&JointPolicy::uniform(2, &[2])).unwrap();
        assert_eq!(p.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.5]);
    }

    #[test]
    fn transition_matrix_matches_brute_force() {
        let mdp = random_mdp(2, 3, vec![2, 2]);
        let policy = random_policy(2, 3, &[2, 2]);
        let p = mdp.transition_matrix(&policy).unwrap();
        for s in 0..3 {
            for next in 0..3 {
                let mut expect = 0.0;
                for a0 in 0..2 {
                    for a1 in 0..2 {
                        let pi = policy.agent_distribution(0, s)[a0] * policy.agent_distribution(1, s)[a1];
                        expect += mdp.transition(s, a0 * 2 + a1, next) * pi;
                    }
                }
                assert!((p[(s, next)] - expect).abs() < 1e-14);
            }
            assert!((p.row(s).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_policy_is_rejected() {
        let mdp = random_mdp(3, 3, vec![2]);
        let err = mdp.transition_matrix(&JointPolicy::uniform(3, &[3])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn stationary_examples() {
        let d = stationary_distribution(&two_state([[0.5, 0.5], [0.5, 0.5]])).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-12 && (d[1] - 0.5).abs() < 1e-12);
        // d0 * 0.1 = d1 * 0.5 with d0 + d1 = 1
        let d = stationary_distribution(&two_state([[0.9, 0.1], [0.5, 0.5]])).unwrap();
        assert!((d[0] - 5.0 / 6.0).abs() < 1e-12 && (d[1] - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn identity_chain_is_rejected() {
        let err = stationary_distribution(&DMatrix::identity(2, 2)).unwrap_err();
        match err {
            Error::Irreducible { states } => assert_eq!(states, vec![1]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn periodic_chain_is_rejected() {
        let err = stationary_distribution(&two_state([[0.0, 1.0], [1.0, 0.0]])).unwrap_err();
        assert!(matches!(err, Error::Irreducible { .. }));
    }

    fn primitive_by_power(p: &DMatrix<f64>) -> bool {
        let n = p.nrows();
        let b = p.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        let mut acc = b.clone();
        for _ in 0..(n - 1) * (n - 1) + 1 {
            if acc.iter().all(|x| *x > 0.0) {
                return true;
            }
            acc = (&acc * &b).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        }
        false
    }

    #[test]
    fn primitivity_agrees_with_matrix_powers() {
        let mut rng = stream(5, Stream::Init);
        for _ in 0..300 {
            let n = rng.random_range(1..6);
            let p = DMatrix::from_fn(n, n, |_, _| if rng.random::<f64>() < 0.35 { 1.0 } else { 0.0 });
            assert_eq!(check_primitive(&p).is_ok(), primitive_by_power(&p), "{p}");
        }
    }

    #[test]
    fn stationary_residual_on_random_chains() {
        for seed in 0..20 {
            let mdp = random_mdp(seed, 5, vec![2]);
            let policy = random_policy(seed, 5, &[2]);
            let p = mdp.transition_matrix(&policy).unwrap();
            let d = stationary_distribution(&p).unwrap();
            assert!((d.transpose() * &p - d.transpose()).amax() <= 1e-10);
        }
    }

    #[test]
    fn point_mass_rewards_are_exact() {
        // s' = 1 - s deterministically, agent reward r(s,a,s') = 10 s + a + 3 s'
        let mut transitions = vec![0.0; 8];
        let mut rewards = vec![0.0; 8];
        for s in 0..2 {
            for a in 0..2 {
                let next = 1 - s;
                transitions[(s * 2 + a) * 2 + next] = 1.0;
                for n2 in 0..2 {
                    rewards[(s * 2 + a) * 2 + n2] = (10 * s + a + 3 * n2) as f64;
                }
            }
        }
        let mdp = NetworkedMdp::new(2, vec![2], transitions, vec![rewards], 0.5, vec![Role::Cooperative], 100.0)
            .unwrap();
        let summary = mdp.reward_summaries(&JointPolicy::uniform(2, &[2])).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                assert_eq!(summary.per_agent_sa[0][s * 2 + a], mdp.reward(0, s, a, 1 - s));
            }
        }
    }

    #[test]
    fn zero_rewards_give_zero_summaries() {
        let mut mdp = random_mdp(4, 3, vec![2, 2]);
        mdp.rewards.iter_mut().for_each(|t| t.iter_mut().for_each(|r| *r = 0.0));
        let summary = mdp.reward_summaries(&random_policy(4, 3, &[2, 2])).unwrap();
        assert!(summary.team_sa.iter().chain(summary.team_state.iter()).all(|x| *x == 0.0));
    }

    #[test]
    fn reward_summaries_match_triple_loop() {
        let mdp = random_mdp(6, 2, vec![2]);
        let policy = random_policy(6, 2, &[2]);
        let summary = mdp.reward_summaries(&policy).unwrap();
        for i in 0..1 {
            for s in 0..2 {
                let mut by_state = 0.0;
                for a in 0..2 {
                    let mut r_hat = 0.0;
                    for next in 0..2 {
                        r_hat += mdp.transition(s, a, next) * mdp.reward(i, s, a, next);
                    }
                    assert!((summary.per_agent_sa[i][s * 2 + a] - r_hat).abs() < 1e-14);
                    by_state += policy.agent_distribution(0, s)[a] * r_hat;
                }
                assert!((summary.per_agent_state[i][s] - by_state).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn team_average_identities() {
        let mdp = random_mdp(7, 3, vec![2, 2, 2]);
        let summary = mdp.reward_summaries(&random_policy(7, 3, &[2, 2, 2])).unwrap();
        let n = 3.0;
        let mean = summary.per_agent_sa.iter().fold(DVector::zeros(24), |acc, v| acc + v) / n;
        assert!((mean - &summary.team_sa).amax() < 1e-12);
        // (1/N) sum_i (r_est - r^i) = r_est - r for any estimate
        let mut rng = stream(7, Stream::Init);
        for _ in 0..10 {
            let est = DVector::from_fn(24, |_, _| rng.random_range(-5.0..5.0));
            let lhs = summary
                .per_agent_sa
                .iter()
                .fold(DVector::zeros(24), |acc, r| acc + (&est - r))
                / n;
            assert!((lhs - (&est - &summary.team_sa)).amax() < 1e-12);
        }
    }

    #[test]
    fn sample_step_point_mass_and_determinism() {
        let mdp = random_mdp(8, 3, vec![2]);
        let mut a = stream(3, Stream::Environment);
        let mut b = stream(3, Stream::Environment);
        for _ in 0..50 {
            assert_eq!(mdp.sample_step(1, 1, &mut a).unwrap(), mdp.sample_step(1, 1, &mut b).unwrap());
        }
        let det = NetworkedMdp::new(
            2,
            vec![1],
            vec![0.0, 1.0, 1.0, 0.0],
            vec![vec![1.0, 2.0, 3.0, 4.0]],
            0.0,
            vec![Role::Cooperative],
            10.0,
        )
        .unwrap();
        for _ in 0..20 {
            assert_eq!(det.sample_step(0, 0, &mut a).unwrap(), (1, vec![2.0]));
        }
        assert!(matches!(det.sample_step(2, 0, &mut a), Err(Error::Input(_))));
        assert!(matches!(det.sample_step(0, 1, &mut a), Err(Error::Input(_))));
    }

    #[test]
    fn sample_step_frequencies_within_three_sigma() {
        let mdp = random_mdp(9, 4, vec![2]);
        let mut rng = stream(11, Stream::Environment);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[mdp.sample_step(2, 1, &mut rng).unwrap().0] += 1;
        }
        for (next, &c) in counts.iter().enumerate() {
            let p = mdp.transition(2, 1, next);
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() <= 3.0 * sigma, "state {next}");
        }
    }

    #[test]
    fn rejects_invalid_mdps() {
        let ok = || (vec![0.5, 0.5, 0.5, 0.5], vec![vec![0.0; 4]]);
        let (t, r) = ok();
        assert!(NetworkedMdp::new(2, vec![1], t, r, 1.0, vec![Role::Cooperative], 1.0).is_err());
        let (_, r) = ok();
        assert!(NetworkedMdp::new(2, vec![1], vec![0.6, 0.5, 0.5, 0.5], r, 0.5, vec![Role::Cooperative], 1.0).is_err());
        let (t, _) = ok();
        assert!(NetworkedMdp::new(2, vec![1], t, vec![vec![0.0, 0.0, 0.0, 5.0]], 0.5, vec![Role::Cooperative], 1.0).is_err());
        let (t, _) = ok();
        let two_adv = NetworkedMdp::new(
            2,
            vec![1, 1],
            t,
            vec![vec![0.0; 4], vec![0.0; 4]],
            0.5,
            vec![Role::Adversary, Role::Adversary],
            1.0,
        );
        assert!(two_adv.is_err());
    }

    #[test]
    fn loads_sparse_and_dense_files() {
        let sparse = r#"
            num_states = 2
            action_sizes = [1]
            gamma = 0.5
            roles = ["adversary"]
            transitions = [[0, 0, 0, 0.9], [0, 0, 1, 0.1], [1, 0, 0, 0.5], [1, 0, 1, 0.5]]
            rewards = [[0, 0, 0, 1, 2]]
        "#;
        let mdp = NetworkedMdp::from_toml_str(sparse).unwrap();
        assert_eq!(mdp.transition(0, 0, 1), 0.1);
        assert_eq!(mdp.reward(0, 0, 0, 1), 2.0);
        assert_eq!(mdp.adversary(), Some(0));
        let dense = r#"
            num_states = 2
            action_sizes = [1]
            gamma = 0.5
            transition_rows = [[0.9, 0.1], [0.5, 0.5]]
        "#;
        let mdp2 = NetworkedMdp::from_toml_str(dense).unwrap();
        assert_eq!(mdp2.next_state_distribution(0, 0), &[0.9, 0.1]);
        let broken = sparse.replace("0.9]", "0.8]");
        assert!(matches!(NetworkedMdp::from_toml_str(&broken), Err(Error::InvalidMdp(_))));
        assert!(matches!(NetworkedMdp::from_toml_str("num_states = 2"), Err(Error::Parse { .. })));
    }
}
