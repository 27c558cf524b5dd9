//! Seeded random finite MDPs for exact verification.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::mdp::{check_primitive, JointPolicy, NetworkedMdp, Role, DEFAULT_REWARD_BOUND};
use crate::rng::{stream, Stream};

const MAX_ATTEMPTS: usize = 64;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallMdpSpec {
    pub num_states: usize,
    pub action_sizes: Vec<usize>,
    /// One `[low, high]` range per agent, or a single range shared by all.
    pub reward_ranges: Vec<[f64; 2]>,
    /// Dirichlet concentration of every transition row; small values give
    /// peaked rows.
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub seed: u64,
    #[serde(default)]
    pub adversary: Option<usize>,
}

fn default_concentration() -> f64 {
    1.0
}

fn default_gamma() -> f64 {
    0.9
}

impl SmallMdpSpec {
    fn range(&self, agent: usize) -> [f64; 2] {
        if self.reward_ranges.len() == 1 {
            self.reward_ranges[0]
        } else {
            self.reward_ranges[agent]
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.action_sizes.len();
        if self.num_states == 0 || n == 0 || self.action_sizes.contains(&0) {
            return Err(Error::Config("small mdp needs states, agents and actions".into()));
        }
        if self.reward_ranges.len() != 1 && self.reward_ranges.len() != n {
            return Err(Error::Config(format!(
                "reward_ranges has {} entries for {n} agents",
                self.reward_ranges.len()
            )));
        }
        if let Some([lo, hi]) = self.reward_ranges.iter().find(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
            return Err(Error::Config(format!("invalid reward range [{lo}, {hi}]")));
        }
        if !(self.concentration.is_finite() && self.concentration > 0.0) {
            return Err(Error::Config(format!("concentration {} must be positive", self.concentration)));
        }
        if self.adversary.is_some_and(|j| j >= n) {
            return Err(Error::Config(format!("adversary {:?} outside 0..{n}", self.adversary)));
        }
        Ok(())
    }
}

/// Draws transition rows from a symmetric Dirichlet and rewards uniformly in
/// each agent's range, redrawing until the chain is irreducible and
/// aperiodic under the uniform policy.
pub fn generate_small_mdp(spec: &SmallMdpSpec) -> Result<NetworkedMdp> {
    spec.validate()?;
    let ns = spec.num_states;
    let na: usize = spec.action_sizes.iter().product();
    let n = spec.action_sizes.len();
    let gamma = Gamma::new(spec.concentration, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut roles = vec![Role::Cooperative; n];
    if let Some(j) = spec.adversary {
        roles[j] = Role::Adversary;
    }
    let bound = spec
        .reward_ranges
        .iter()
        .flat_map(|r| r.iter().map(|x| x.abs()))
        .fold(DEFAULT_REWARD_BOUND, f64::max);
    let mut rng = stream(spec.seed, Stream::Environment);
    let uniform = JointPolicy::uniform(ns, &spec.action_sizes);
    for _ in 0..MAX_ATTEMPTS {
        let mut transitions = Vec::with_capacity(ns * na * ns);
        for _ in 0..ns * na {
            let mut row: Vec<f64> = (0..ns).map(|_| gamma.sample(&mut rng).max(f64::MIN_POSITIVE)).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= sum);
            transitions.extend(row);
        }
        let rewards = (0..n)
            .map(|i| {
                let [lo, hi] = spec.range(i);
                (0..ns * na * ns).map(|_| if lo == hi { lo } else { rng.random_range(lo..hi) }).collect()
            })
            .collect();
        let mdp = NetworkedMdp::new(ns, spec.action_sizes.clone(), transitions, rewards, spec.gamma, roles.clone(), bound)?;
        if check_primitive(&mdp.transition_matrix(&uniform)?).is_ok() {
            return Ok(mdp);
        }
    }
    Err(Error::Config(format!("no irreducible aperiodic chain found in {MAX_ATTEMPTS} draws")))
}
