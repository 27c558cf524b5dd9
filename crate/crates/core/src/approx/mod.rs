//! Function approximation: linear features, a small MLP, and softmax policies.

pub mod features;
pub mod network;
pub mod policy;
pub mod tensor;

pub use features::{build_tabular_features, check_full_column_rank, StateActionFeatureMap, StateFeatureMap};
pub use network::{mlp_forward, mlp_gradient, LinearMap, Mlp, Network, Tape};
pub use policy::{linear_action_features, policy_probs, score_function, softmax, ParamBox, SoftmaxPolicy};

use crate::error::Result;

/// Critic value `V(s; v)` for the state encoded by `state_input`.
pub fn value(critic: &Network, v: &[f64], state_input: &[f64]) -> Result<f64> {
    critic.eval_scalar(v, state_input)
}

/// Reward estimate `r(s, a; lambda)` for the pair encoded by `pair_input`.
pub fn reward_estimate(estimator: &Network, lambda: &[f64], pair_input: &[f64]) -> Result<f64> {
    estimator.eval_scalar(lambda, pair_input)
}
