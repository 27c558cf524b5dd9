use crate::approx::{StateActionFeatureMap, StateFeatureMap};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::mdp::NetworkedMdp;
use crate::rng::StreamRng;
use rand::Rng;

/// A [`NetworkedMdp`] with materialised linear features, run as a
/// continuing task.
#[derive(Clone, Debug)]
pub struct TabularEnv {
    mdp: NetworkedMdp,
    phi: StateFeatureMap,
    pair: StateActionFeatureMap,
}

impl TabularEnv {
    pub fn new(mdp: NetworkedMdp, phi: StateFeatureMap, pair: StateActionFeatureMap) -> Result<Self> {
        if phi.num_states() != mdp.num_states() {
            return Err(Error::Dimension(format!(
                "state features cover {} states, mdp has {}",
                phi.num_states(),
                mdp.num_states()
            )));
        }
        if pair.num_actions() != mdp.num_joint_actions()
            || pair.matrix().nrows() != mdp.num_states() * mdp.num_joint_actions()
        {
            return Err(Error::Dimension("state-action features do not match the mdp".into()));
        }
        Ok(Self { mdp, phi, pair })
    }

    pub fn tabular(mdp: NetworkedMdp) -> Result<Self> {
        let (phi, pair) = crate::approx::build_tabular_features(mdp.num_states(), mdp.num_joint_actions())?;
        Self::new(mdp, phi, pair)
    }

    pub fn mdp(&self) -> &NetworkedMdp {
        &self.mdp
    }

    pub fn state_feature_map(&self) -> &StateFeatureMap {
        &self.phi
    }

    pub fn pair_feature_map(&self) -> &StateActionFeatureMap {
        &self.pair
    }
}

impl Environment for TabularEnv {
    type State = usize;

    fn num_agents(&self) -> usize {
        self.mdp.num_agents()
    }

    fn action_sizes(&self) -> &[usize] {
        self.mdp.action_sizes()
    }

    fn gamma(&self) -> f64 {
        self.mdp.gamma()
    }

    fn state_dim(&self) -> usize {
        self.phi.dim()
    }

    fn pair_dim(&self) -> usize {
        self.pair.dim()
    }

    fn reset(&self, rng: &mut StreamRng) -> usize {
        rng.random_range(0..self.mdp.num_states())
    }

    fn step(&self, s: &usize, actions: &[usize], rng: &mut StreamRng) -> Result<(usize, Vec<f64>)> {
        let a = self.mdp.encode_joint_action(actions)?;
        self.mdp.sample_step(*s, a, rng)
    }

    fn state_features(&self, s: &usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(self.phi.features(*s));
    }

    fn pair_features(&self, s: &usize, actions: &[usize], _next: &usize, out: &mut Vec<f64>) {
        let a = self.mdp.encode_joint_action(actions).expect("actions validated by step");
        out.clear();
        out.extend_from_slice(self.pair.features(*s, a));
    }

    fn transition_index(&self, s: &usize, actions: &[usize], next: &usize) -> Option<usize> {
        let a = self.mdp.encode_joint_action(actions).ok()?;
        let (ns, na) = (self.mdp.num_states(), self.mdp.num_joint_actions());
        Some((s * na + a) * ns + next)
    }
}
