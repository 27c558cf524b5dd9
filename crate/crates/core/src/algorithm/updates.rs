//! The per-agent local updates, one function per line of the update rule.

use crate::approx::network::axpy;
use crate::approx::{Network, ParamBox, Tape};
use crate::error::Result;

/// `delta = r + gamma V(s'; v) - V(s; v)`.
pub fn td_error(critic: &Network, v: &[f64], state: &[f64], next: &[f64], reward: f64, gamma: f64) -> Result<f64> {
    Ok(reward + gamma * critic.eval_scalar(v, next)? - critic.eval_scalar(v, state)?)
}

/// `Delta = r(s, a; lambda) + gamma V(s'; v) - V(s; v)`.
#[allow(clippy::too_many_arguments)]
pub fn estimated_td_error(
    critic: &Network,
    estimator: &Network,
    lambda: &[f64],
    v: &[f64],
    state: &[f64],
    pair: &[f64],
    next: &[f64],
    gamma: f64,
) -> Result<f64> {
    td_error(critic, v, state, next, estimator.eval_scalar(lambda, pair)?, gamma)
}

/// `lambda + alpha (r - r(s, a; lambda)) grad_lambda r(s, a; lambda)`.
pub fn reward_param_update(estimator: &Network, lambda: &[f64], pair: &[f64], reward: f64, alpha: f64) -> Result<Vec<f64>> {
    estimator.check(lambda, pair)?;
    let mut tape = Tape::default();
    let estimate = estimator.forward(lambda, pair, &mut tape)[0];
    let mut out = lambda.to_vec();
    gradient_step(estimator, lambda, &tape, alpha * (reward - estimate), &mut out);
    Ok(out)
}

/// `v + alpha delta grad_v V(s; v)`.
pub fn critic_update(critic: &Network, v: &[f64], state: &[f64], delta: f64, alpha: f64) -> Result<Vec<f64>> {
    critic.check(v, state)?;
    let mut tape = Tape::default();
    critic.forward(v, state, &mut tape);
    let mut out = v.to_vec();
    gradient_step(critic, v, &tape, alpha * delta, &mut out);
    Ok(out)
}

/// `clamp(theta + alpha Delta psi)` onto the parameter box.
pub fn actor_update(theta: &[f64], delta: f64, score: &[f64], alpha: f64, bounds: ParamBox) -> Vec<f64> {
    let mut out = theta.to_vec();
    axpy(alpha * delta, score, &mut out);
    bounds.project(&mut out);
    out
}

/// Adds `weight * grad f(params)` to `out`, using the forward pass in `tape`.
pub(crate) fn gradient_step(net: &Network, params: &[f64], tape: &Tape, weight: f64, out: &mut [f64]) {
    if weight != 0.0 {
        net.backward(params, tape, &[1.0], weight, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{value, reward_estimate, Mlp};
    use crate::rng::{stream, Stream};
    use rand::Rng;

    fn tabular(n: usize) -> Network {
        Network::linear(n, 1)
    }

    #[test]
    fn td_error_arithmetic() {
        let critic = tabular(2);
        let v = [1.0, 2.0];
        let d = td_error(&critic, &v, &[1.0, 0.0], &[0.0, 1.0], 1.0, 0.9).unwrap();
        assert!((d - 1.8).abs() < 1e-15);
        assert_eq!(td_error(&critic, &[0.0; 2], &[1.0, 0.0], &[0.0, 1.0], 0.7, 0.9).unwrap(), 0.7);
        assert_eq!(td_error(&critic, &v, &[1.0, 0.0], &[0.0, 1.0], 0.7, 0.0).unwrap(), 0.7 - 1.0);
    }

    #[test]
    fn estimated_td_error_composes() {
        let mut rng = stream(5, Stream::Init);
        let critic = Network::linear(3, 1);
        let est = Network::linear(4, 1);
        let z = |rng: &mut crate::rng::StreamRng, n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        assert_eq!(
            estimated_td_error(&critic, &est, &[0.0; 4], &[0.0; 3], &[1.0; 3], &[1.0; 4], &[1.0; 3], 0.9).unwrap(),
            0.0
        );
        let (v, lambda, s, f, n) = (z(&mut rng, 3), z(&mut rng, 4), z(&mut rng, 3), z(&mut rng, 4), z(&mut rng, 3));
        let got = estimated_td_error(&critic, &est, &lambda, &v, &s, &f, &n, 0.8).unwrap();
        let expect = reward_estimate(&est, &lambda, &f).unwrap() + 0.8 * value(&critic, &v, &n).unwrap()
            - value(&critic, &v, &s).unwrap();
        assert!((got - expect).abs() < 1e-14);
    }

    #[test]
    fn perfect_tabular_estimate_matches_expected_td_error() {
        // Two next states with probabilities p and 1 - p from (s, a).
        let critic = tabular(2);
        let est = tabular(1);
        let v = [0.3, -0.4];
        let (p, rewards) = (0.25, [1.0, 3.0]);
        let r_hat = p * rewards[0] + (1.0 - p) * rewards[1];
        let next = [[1.0, 0.0], [0.0, 1.0]];
        let delta: f64 = (0..2)
            .map(|k| [p, 1.0 - p][k] * td_error(&critic, &v, &[1.0, 0.0], &next[k], rewards[k], 0.9).unwrap())
            .sum();
        let big_delta: f64 = (0..2)
            .map(|k| {
                [p, 1.0 - p][k]
                    * estimated_td_error(&critic, &est, &[r_hat], &v, &[1.0, 0.0], &[1.0], &next[k], 0.9).unwrap()
            })
            .sum();
        assert!((delta - big_delta).abs() < 1e-14);
    }

    #[test]
    fn reward_update_one_step_and_fixed_point() {
        let est = tabular(2);
        assert_eq!(reward_param_update(&est, &[0.0, 0.0], &[1.0, 0.0], 1.0, 0.1).unwrap(), vec![0.1, 0.0]);
        let lambda = [0.5, 2.0];
        assert_eq!(reward_param_update(&est, &lambda, &[1.0, 1.0], 2.5, 0.3).unwrap(), lambda.to_vec());
    }

    #[test]
    fn repeated_reward_updates_contract_geometrically() {
        // With f = e_0 the residual obeys e_{k+1} = (1 - alpha) e_k.
        let est = tabular(2);
        let (alpha, r) = (0.2, 4.0);
        let mut lambda = vec![0.0, 0.0];
        for k in 1..=30 {
            lambda = reward_param_update(&est, &lambda, &[1.0, 0.0], r, alpha).unwrap();
            let expect = r * (1.0 - (1.0f64 - alpha).powi(k));
            assert!((lambda[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn critic_update_examples() {
        let critic = tabular(2);
        assert_eq!(critic_update(&critic, &[0.4, 0.1], &[1.0, 1.0], 0.0, 0.5).unwrap(), vec![0.4, 0.1]);
        assert_eq!(critic_update(&critic, &[0.0, 0.0], &[1.0, 1.0], 2.0, 0.5).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn critic_update_for_mlp_follows_gradient() {
        let mut rng = stream(8, Stream::Init);
        let net = Mlp::two_hidden(3, [5, 4], 1).unwrap();
        let critic = Network::Mlp(net.clone());
        let v = critic.init_params(&mut rng, 1.0);
        let x = [0.2, -0.1, 0.7];
        let out = critic_update(&critic, &v, &x, 0.5, 0.1).unwrap();
        let grad = crate::approx::mlp_gradient(&net, &v, &x, 0.05).unwrap();
        for k in 0..v.len() {
            assert!((out[k] - (v[k] + grad[k])).abs() < 1e-15);
        }
    }

    #[test]
    fn actor_update_examples() {
        let bounds = ParamBox { max_abs: 1.0 };
        let theta = [0.2, -0.3];
        assert_eq!(actor_update(&theta, 0.0, &[5.0, 5.0], 0.1, bounds), theta.to_vec());
        assert_eq!(actor_update(&theta, 10.0, &[1.0, -1.0], 1.0, bounds), vec![1.0, -1.0]);
        let got = actor_update(&theta, 0.5, &[0.4, 0.2], 0.1, bounds);
        assert_eq!(got, vec![0.2 + 0.1 * 0.5 * 0.4, -0.3 + 0.1 * 0.5 * 0.2]);
    }
}
