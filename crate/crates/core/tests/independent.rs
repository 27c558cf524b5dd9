//! With identity consensus weights the networked algorithm is N independent
//! single-agent actor-critics; check it step for step against a direct loop.

use consensus_marl::algorithm::{
    actor_update, critic_update, reward_param_update, sample_action, td_error, AttackModel, Learner, Session,
    StepSizeSchedule, TrainConfig,
};
use consensus_marl::approx::ParamBox;
use consensus_marl::consensus::{build_uniform_weights, CommGraph, ConsensusSchedule, ConsensusWeights};
use consensus_marl::envs::{generate_small_mdp, Environment, SmallMdpSpec, TabularEnv};
use consensus_marl::rng::{stream, Stream};
use nalgebra::DMatrix;

fn env(adversary: Option<usize>) -> TabularEnv {
    let mdp = generate_small_mdp(&SmallMdpSpec {
        num_states: 3,
        action_sizes: vec![2, 3],
        reward_ranges: vec![[-1.0, 1.0]],
        concentration: 1.0,
        gamma: 0.8,
        seed: 9,
        adversary,
    })
    .unwrap();
    TabularEnv::tabular(mdp).unwrap()
}

fn compare(adversary: Option<usize>, freeze_policy: bool) {
    let env = env(adversary);
    let bounds = ParamBox { max_abs: 3.0 };
    let learner = Learner::linear(&env, bounds).unwrap();
    let graph = CommGraph::fully_connected(2).unwrap();
    let schedule = ConsensusSchedule::Static(build_uniform_weights(&graph, adversary).unwrap());
    let mut config = TrainConfig { seed: 41, freeze_policy, ..TrainConfig::default() };
    config.step_sizes = StepSizeSchedule::default();
    config.init.actor_scale = 0.5;
    config.attack = adversary.map(AttackModel::new);
    let agents = learner.init_agents(&config, 2);
    let mut session = Session::new(&env, &learner, &schedule, config.clone(), agents.clone()).unwrap();
    let identity = ConsensusWeights::from_matrix(DMatrix::identity(2, 2), adversary).unwrap();

    let mut env_rng = stream(config.seed, Stream::Environment);
    let mut policy_rngs: Vec<_> = (0..2).map(|i| stream(config.seed, Stream::Policy(i))).collect();
    let mut reference: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> =
        agents.iter().map(|a| (a.theta.clone(), a.v.clone(), a.lambda.clone())).collect();
    let features = |s: &usize| {
        let mut x = Vec::new();
        env.state_features(s, &mut x);
        x
    };
    let draw = |s: &usize, reference: &[(Vec<f64>, Vec<f64>, Vec<f64>)], rngs: &mut [_]| -> Vec<usize> {
        (0..2)
            .map(|i| {
                let probs = learner.actors[i].probs(&reference[i].0, &features(s)).unwrap();
                sample_action(&probs, &mut rngs[i])
            })
            .collect()
    };

    session.reset_episode().unwrap();
    let mut s = env.reset(&mut env_rng);
    let mut actions = draw(&s, &reference, &mut policy_rngs);
    for t in 0..400u64 {
        assert_eq!(session.actions(), actions.as_slice(), "actions differ at step {t}");
        session.train_step_with(&identity).unwrap();

        let (next, rewards) = env.step(&s, &actions, &mut env_rng).unwrap();
        let (phi, phi_next) = (features(&s), features(&next));
        let mut pair = Vec::new();
        env.pair_features(&s, &actions, &next, &mut pair);
        let alpha_v = config.step_sizes.critic_rate(t);
        let alpha_theta = config.step_sizes.actor_rate(t);
        for (i, (theta, v, lambda)) in reference.iter_mut().enumerate() {
            let estimate = learner.estimator.eval_scalar(lambda, &pair).unwrap();
            let delta = td_error(&learner.critic, v, &phi, &phi_next, rewards[i], env.gamma()).unwrap();
            let big_delta = td_error(&learner.critic, v, &phi, &phi_next, estimate, env.gamma()).unwrap();
            let new_lambda = reward_param_update(&learner.estimator, lambda, &pair, rewards[i], alpha_v).unwrap();
            let new_v = critic_update(&learner.critic, v, &phi, delta, alpha_v).unwrap();
            if !freeze_policy {
                let psi = learner.actors[i].score(theta, &phi, actions[i]).unwrap();
                *theta = actor_update(theta, big_delta, &psi, alpha_theta, bounds);
            }
            *v = new_v;
            *lambda = new_lambda;
        }
        s = next;
        actions = draw(&s, &reference, &mut policy_rngs);

        for (i, (a, r)) in session.agents().iter().zip(&reference).enumerate() {
            for (x, y) in [(&a.theta, &r.0), (&a.v, &r.1), (&a.lambda, &r.2)] {
                let err = x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                assert!(err < 1e-12, "agent {i} diverged from the reference at step {t}: {err:e}");
            }
        }
    }
}

#[test]
fn identity_mixing_matches_independent_learners() {
    compare(None, false);
}

#[test]
fn identity_mixing_matches_with_frozen_policy() {
    compare(None, true);
}

#[test]
fn identity_mixing_matches_under_attack() {
    compare(Some(1), false);
}

#[test]
fn uniform_mixing_departs_from_independent_learners() {
    let env = env(None);
    let learner = Learner::linear(&env, ParamBox::default()).unwrap();
    let graph = CommGraph::fully_connected(2).unwrap();
    let schedule = ConsensusSchedule::Static(build_uniform_weights(&graph, None).unwrap());
    let config = TrainConfig { seed: 41, max_steps: 50, ..TrainConfig::default() };
    let agents = learner.init_agents(&config, 2);
    let mut a = Session::new(&env, &learner, &schedule, config.clone(), agents.clone()).unwrap();
    let mut b = Session::new(&env, &learner, &schedule, config, agents).unwrap();
    let identity = ConsensusWeights::from_matrix(DMatrix::identity(2, 2), None).unwrap();
    a.reset_episode().unwrap();
    b.reset_episode().unwrap();
    for _ in 0..50 {
        a.train_step().unwrap();
        b.train_step_with(&identity).unwrap();
    }
    assert!(a.norms().disagreement < b.norms().disagreement);
}
