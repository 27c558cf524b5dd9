//! Environments the training loop can run against.

pub mod grid;
pub mod small_mdp;
pub mod tabular;

pub use grid::{GridScenario, GridWorld, GridWorldConfig, Positions};
pub use small_mdp::{generate_small_mdp, SmallMdpSpec};
pub use tabular::TabularEnv;

use crate::error::Result;
use crate::rng::StreamRng;

/// A multi-agent environment with a globally observed state.
///
/// The critic and actors read [`Environment::state_features`]; the reward
/// estimator reads [`Environment::pair_features`], which may depend on the
/// joint action.
pub trait Environment {
    type State: Clone;

    fn num_agents(&self) -> usize;
    fn action_sizes(&self) -> &[usize];
    fn gamma(&self) -> f64;
    fn state_dim(&self) -> usize;
    fn pair_dim(&self) -> usize;

    fn reset(&self, rng: &mut StreamRng) -> Self::State;

    /// Applies the joint action; returns the next state and every agent's
    /// true reward.
    fn step(&self, s: &Self::State, actions: &[usize], rng: &mut StreamRng) -> Result<(Self::State, Vec<f64>)>;

    fn is_terminal(&self, _s: &Self::State) -> bool {
        false
    }

    fn state_features(&self, s: &Self::State, out: &mut Vec<f64>);

    fn pair_features(&self, s: &Self::State, actions: &[usize], next: &Self::State, out: &mut Vec<f64>);

    /// Flat `(s, a, s')` index for environments with enumerable tables.
    fn transition_index(&self, _s: &Self::State, _actions: &[usize], _next: &Self::State) -> Option<usize> {
        None
    }
}
