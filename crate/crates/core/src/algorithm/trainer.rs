use rand::Rng;

use crate::algorithm::config::{AttackModel, TrainConfig};
use crate::algorithm::updates::gradient_step;
use crate::approx::network::axpy;
use crate::approx::{Mlp, Network, ParamBox, SoftmaxPolicy, Tape};
use crate::consensus::{apply_consensus_into, ConsensusSchedule, ConsensusWeights};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::mdp::{sample_categorical, Role};
use crate::rng::{stream, Stream, StreamRng};

/// One agent's learnable state. `z = [lambda; v]` is what crosses the
/// network; `lambda_tilde` and `v_tilde` are the values it transmits.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentRuntime {
    pub role: Role,
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
    pub lambda: Vec<f64>,
    pub v_tilde: Vec<f64>,
    pub lambda_tilde: Vec<f64>,
}

impl AgentRuntime {
    pub fn new(role: Role, theta: Vec<f64>, v: Vec<f64>, lambda: Vec<f64>) -> Self {
        Self { role, v_tilde: v.clone(), lambda_tilde: lambda.clone(), theta, v, lambda }
    }
}

/// The approximator architectures. Critic and reward estimator are shared
/// descriptions so every agent's `z^i` has the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Learner {
    pub critic: Network,
    pub estimator: Network,
    pub actors: Vec<SoftmaxPolicy>,
}

impl Learner {
    /// Linear critic, estimator and softmax heads over the environment
    /// features.
    pub fn linear<E: Environment>(env: &E, bounds: ParamBox) -> Result<Self> {
        let actors = env
            .action_sizes()
            .iter()
            .map(|&k| SoftmaxPolicy::new(Network::linear(env.state_dim(), k), bounds))
            .collect::<Result<_>>()?;
        Ok(Self {
            critic: Network::linear(env.state_dim(), 1),
            estimator: Network::linear(env.pair_dim(), 1),
            actors,
        })
    }

    /// Two-hidden-layer networks of the given widths for all three roles.
    pub fn mlp<E: Environment>(env: &E, hidden: [usize; 2], bounds: ParamBox) -> Result<Self> {
        let actors = env
            .action_sizes()
            .iter()
            .map(|&k| SoftmaxPolicy::new(Network::Mlp(Mlp::two_hidden(env.state_dim(), hidden, k)?), bounds))
            .collect::<Result<_>>()?;
        Ok(Self {
            critic: Network::Mlp(Mlp::two_hidden(env.state_dim(), hidden, 1)?),
            estimator: Network::Mlp(Mlp::two_hidden(env.pair_dim(), hidden, 1)?),
            actors,
        })
    }

    pub fn check<E: Environment>(&self, env: &E) -> Result<()> {
        let bad = |what: &str| Err(Error::Dimension(format!("{what} does not fit the environment")));
        if self.critic.num_inputs() != env.state_dim() || self.critic.num_outputs() != 1 {
            return bad("critic");
        }
        if self.estimator.num_inputs() != env.pair_dim() || self.estimator.num_outputs() != 1 {
            return bad("reward estimator");
        }
        if self.actors.len() != env.num_agents() {
            return bad("number of actors");
        }
        for (i, (actor, &k)) in self.actors.iter().zip(env.action_sizes()).enumerate() {
            if actor.head().num_inputs() != env.state_dim() || actor.num_actions() != k {
                return bad(&format!("actor {i}"));
            }
        }
        Ok(())
    }

    /// Draws initial parameters from the init stream: critic and estimator
    /// first (once when shared, otherwise per agent), then every actor.
    pub fn init_agents(&self, config: &TrainConfig, num_agents: usize) -> Vec<AgentRuntime> {
        let mut rng = stream(config.seed, Stream::Init);
        let init = config.init;
        let shared = init.shared.then(|| {
            (self.critic.init_params(&mut rng, init.critic_scale), self.estimator.init_params(&mut rng, init.reward_scale))
        });
        let mut z: Vec<(Vec<f64>, Vec<f64>)> = (0..num_agents)
            .map(|_| match &shared {
                Some(pair) => pair.clone(),
                None => (
                    self.critic.init_params(&mut rng, init.critic_scale),
                    self.estimator.init_params(&mut rng, init.reward_scale),
                ),
            })
            .collect();
        let adversary = config.attack.as_ref().map(|a| a.adversary);
        self.actors
            .iter()
            .enumerate()
            .map(|(i, actor)| {
                let theta = actor.head().init_params(&mut rng, init.actor_scale);
                let (v, lambda) = std::mem::take(&mut z[i]);
                let role = if Some(i) == adversary { Role::Adversary } else { Role::Cooperative };
                AgentRuntime::new(role, theta, v, lambda)
            })
            .collect()
    }
}

/// What one step produced, as seen from outside the agents.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub t: u64,
    /// True rewards, before any attack transform.
    pub rewards: Vec<f64>,
    /// Each agent's reward estimate for the transition.
    pub estimates: Vec<f64>,
    pub terminal: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamNorms {
    /// `||z||` over all agents.
    pub z: f64,
    /// `||z - 1 (x) <z>||`.
    pub disagreement: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub t: u64,
    pub episode: usize,
    pub norms: ParamNorms,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub steps: usize,
    pub terminal: bool,
    pub returns: Vec<f64>,
    pub discounted_returns: Vec<f64>,
    /// Sum over the episode of the agent-averaged reward estimate.
    pub estimated_return: f64,
    pub norms: ParamNorms,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub agents: Vec<AgentRuntime>,
    pub episodes: Vec<EpisodeMetrics>,
    pub steps: Vec<StepMetrics>,
    pub total_steps: u64,
    pub initial: ParamNorms,
    pub last: ParamNorms,
    pub max_z_norm: f64,
}

struct PolicyCache {
    tape: Tape,
    probs: Vec<f64>,
}

/// A running instance of the algorithm: agents, environment state, the
/// actions about to be taken, and every random stream.
pub struct Session<'a, E: Environment> {
    env: &'a E,
    learner: &'a Learner,
    schedule: &'a ConsensusSchedule,
    config: TrainConfig,
    agents: Vec<AgentRuntime>,
    state: Option<E::State>,
    actions: Vec<usize>,
    policy: Vec<PolicyCache>,
    t: u64,
    env_rng: StreamRng,
    schedule_rng: StreamRng,
    policy_rngs: Vec<StreamRng>,
    scratch: Scratch,
}

#[derive(Default)]
struct Scratch {
    phi: Vec<f64>,
    phi_next: Vec<f64>,
    pair: Vec<f64>,
    tape: Tape,
    tape_next: Tape,
    theta: Vec<f64>,
    lambda_in: Vec<Vec<f64>>,
    v_in: Vec<Vec<f64>>,
    lambda_out: Vec<Vec<f64>>,
    v_out: Vec<Vec<f64>>,
}

impl<'a, E: Environment> Session<'a, E> {
    pub fn new(
        env: &'a E,
        learner: &'a Learner,
        schedule: &'a ConsensusSchedule,
        config: TrainConfig,
        agents: Vec<AgentRuntime>,
    ) -> Result<Self> {
        validate(env, learner, schedule, &config)?;
        let n = env.num_agents();
        if agents.len() != n {
            return Err(Error::Config(format!("{} agent runtimes for {n} agents", agents.len())));
        }
        for (i, a) in agents.iter().enumerate() {
            let expect_role = match &config.attack {
                Some(att) if att.adversary == i => Role::Adversary,
                _ => Role::Cooperative,
            };
            if a.role != expect_role {
                return Err(Error::Config(format!("agent {i} has role {:?}, attack model implies {expect_role:?}", a.role)));
            }
            if a.v.len() != learner.critic.num_params()
                || a.lambda.len() != learner.estimator.num_params()
                || a.theta.len() != learner.actors[i].num_params()
            {
                return Err(Error::Dimension(format!("agent {i} parameters do not fit the learner")));
            }
            if !learner.actors[i].bounds().contains(&a.theta) {
                return Err(Error::Parameter(format!("agent {i} policy parameters start outside the box")));
            }
        }
        let seed = config.seed;
        Ok(Self {
            env,
            learner,
            schedule,
            config,
            agents,
            state: None,
            actions: vec![0; n],
            policy: (0..n).map(|_| PolicyCache { tape: Tape::default(), probs: Vec::new() }).collect(),
            t: 0,
            env_rng: stream(seed, Stream::Environment),
            schedule_rng: stream(seed, Stream::Schedule),
            policy_rngs: (0..n).map(|i| stream(seed, Stream::Policy(i))).collect(),
            scratch: Scratch::default(),
        })
    }

    pub fn agents(&self) -> &[AgentRuntime] {
        &self.agents
    }

    pub fn into_agents(self) -> Vec<AgentRuntime> {
        self.agents
    }

    pub fn state(&self) -> Option<&E::State> {
        self.state.as_ref()
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    /// Global step counter; it keeps running across episodes.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Draws a fresh initial state and the first actions.
    pub fn reset_episode(&mut self) -> Result<()> {
        let s = self.env.reset(&mut self.env_rng);
        self.sample_actions(&s)?;
        self.state = Some(s);
        Ok(())
    }

    fn sample_actions(&mut self, s: &E::State) -> Result<()> {
        self.env.state_features(s, &mut self.scratch.phi);
        for i in 0..self.agents.len() {
            let cache = &mut self.policy[i];
            cache.probs = self.learner.actors[i].probs_with_tape(&self.agents[i].theta, &self.scratch.phi, &mut cache.tape)?;
            self.actions[i] = sample_categorical(&cache.probs, &mut self.policy_rngs[i]);
        }
        Ok(())
    }

    /// One iteration: observe the transition, run every agent's local
    /// updates, mix `(lambda_tilde, v_tilde)` synchronously with `C_t`, then
    /// draw the next actions from the updated policies.
    pub fn train_step(&mut self) -> Result<StepOutcome> {
        let schedule = self.schedule;
        let weights = schedule.weights_at(self.t, &mut self.schedule_rng)?;
        self.train_step_with(&weights)
    }

    pub fn train_step_with(&mut self, weights: &ConsensusWeights) -> Result<StepOutcome> {
        let s = self.state.take().ok_or_else(|| Error::Config("train_step before reset_episode".into()))?;
        let (next, rewards) = self.env.step(&s, &self.actions, &mut self.env_rng)?;
        let terminal = self.env.is_terminal(&next);
        let transition = self.env.transition_index(&s, &self.actions, &next);
        let sc = &mut self.scratch;
        self.env.state_features(&s, &mut sc.phi);
        self.env.state_features(&next, &mut sc.phi_next);
        self.env.pair_features(&s, &self.actions, &next, &mut sc.pair);
        let gamma = self.env.gamma();
        let alpha_v = self.config.step_sizes.critic_rate(self.t);
        let alpha_theta = if self.config.freeze_policy { 0.0 } else { self.config.step_sizes.actor_rate(self.t) };
        let (critic, estimator) = (&self.learner.critic, &self.learner.estimator);
        let mut estimates = Vec::with_capacity(self.agents.len());
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let reward = match &self.config.attack {
                Some(att) if att.adversary == i => att.transform.apply(rewards[i], transition)?,
                _ => rewards[i],
            };

            let estimate = estimator.forward(&agent.lambda, &sc.pair, &mut sc.tape)[0];
            agent.lambda_tilde.clone_from(&agent.lambda);
            gradient_step(estimator, &agent.lambda, &sc.tape, alpha_v * (reward - estimate), &mut agent.lambda_tilde);

            let v_next = if terminal { 0.0 } else { critic.forward(&agent.v, &sc.phi_next, &mut sc.tape_next)[0] };
            let v_s = critic.forward(&agent.v, &sc.phi, &mut sc.tape)[0];
            let td = reward + gamma * v_next - v_s;
            let estimated_td = estimate + gamma * v_next - v_s;

            agent.v_tilde.clone_from(&agent.v);
            gradient_step(critic, &agent.v, &sc.tape, alpha_v * td, &mut agent.v_tilde);

            if alpha_theta != 0.0 {
                let actor = &self.learner.actors[i];
                let cache = &self.policy[i];
                sc.theta.clone_from(&agent.theta);
                actor.accumulate_score(&agent.theta, &cache.tape, &cache.probs, self.actions[i], alpha_theta * estimated_td, &mut sc.theta)?;
                actor.bounds().project(&mut sc.theta);
                std::mem::swap(&mut agent.theta, &mut sc.theta);
            }
            estimates.push(estimate);
        }
        self.mix(weights)?;
        let outcome = StepOutcome { t: self.t, rewards, estimates, terminal };
        self.t += 1;
        if !terminal {
            self.sample_actions(&next)?;
        }
        self.state = Some(next);
        Ok(outcome)
    }

    fn mix(&mut self, weights: &ConsensusWeights) -> Result<()> {
        let sc = &mut self.scratch;
        let n = self.agents.len();
        sc.lambda_in.resize_with(n, Vec::new);
        sc.v_in.resize_with(n, Vec::new);
        sc.lambda_out.resize_with(n, Vec::new);
        sc.v_out.resize_with(n, Vec::new);
        for (i, a) in self.agents.iter_mut().enumerate() {
            std::mem::swap(&mut sc.lambda_in[i], &mut a.lambda_tilde);
            std::mem::swap(&mut sc.v_in[i], &mut a.v_tilde);
        }
        let result = apply_consensus_into(&sc.lambda_in, weights, &mut sc.lambda_out)
            .and_then(|_| apply_consensus_into(&sc.v_in, weights, &mut sc.v_out));
        for (i, a) in self.agents.iter_mut().enumerate() {
            std::mem::swap(&mut sc.lambda_in[i], &mut a.lambda_tilde);
            std::mem::swap(&mut sc.v_in[i], &mut a.v_tilde);
        }
        result?;
        for (i, a) in self.agents.iter_mut().enumerate() {
            std::mem::swap(&mut a.lambda, &mut sc.lambda_out[i]);
            std::mem::swap(&mut a.v, &mut sc.v_out[i]);
        }
        Ok(())
    }

    pub fn norms(&self) -> ParamNorms {
        param_norms(&self.agents)
    }
}

/// `||z||`, `||z_perp||` and `||theta||` for stacked agent parameters.
pub fn param_norms(agents: &[AgentRuntime]) -> ParamNorms {
    let n = agents.len() as f64;
    let dim_l = agents.first().map_or(0, |a| a.lambda.len());
    let dim_v = agents.first().map_or(0, |a| a.v.len());
    let mut mean = vec![0.0; dim_l + dim_v];
    let mut z = 0.0;
    let mut theta = 0.0;
    for a in agents {
        axpy(1.0 / n, &a.lambda, &mut mean[..dim_l]);
        axpy(1.0 / n, &a.v, &mut mean[dim_l..]);
        z += a.lambda.iter().chain(&a.v).map(|x| x * x).sum::<f64>();
        theta += a.theta.iter().map(|x| x * x).sum::<f64>();
    }
    let mut disagreement = 0.0;
    for a in agents {
        disagreement += a.lambda.iter().chain(&a.v).zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>();
    }
    ParamNorms { z: z.sqrt(), disagreement: disagreement.sqrt(), theta: theta.sqrt() }
}

fn validate<E: Environment>(env: &E, learner: &Learner, schedule: &ConsensusSchedule, config: &TrainConfig) -> Result<()> {
    learner.check(env)?;
    config.step_sizes.validate()?;
    if schedule.num_agents() != env.num_agents() {
        return Err(Error::Config(format!(
            "consensus schedule has {} agents, environment {}",
            schedule.num_agents(),
            env.num_agents()
        )));
    }
    if !(config.z_cap.is_finite() && config.z_cap > 0.0) {
        return Err(Error::Config(format!("z_cap {} must be positive", config.z_cap)));
    }
    let expected = match &config.attack {
        Some(AttackModel { adversary, omit_consensus, .. }) => {
            if *adversary >= env.num_agents() {
                return Err(Error::Config(format!("adversary {adversary} outside 0..{}", env.num_agents())));
            }
            omit_consensus.then_some(*adversary)
        }
        None => None,
    };
    if schedule.adversary() != expected {
        return Err(Error::Config(format!(
            "consensus schedule adversary {:?} does not match the attack model ({expected:?})",
            schedule.adversary()
        )));
    }
    Ok(())
}

/// Runs the episode loop around [`Session::train_step`].
pub struct Trainer<'a, E: Environment> {
    pub env: &'a E,
    pub learner: &'a Learner,
    pub schedule: &'a ConsensusSchedule,
    pub config: TrainConfig,
}

impl<'a, E: Environment> Trainer<'a, E> {
    pub fn new(env: &'a E, learner: &'a Learner, schedule: &'a ConsensusSchedule, config: TrainConfig) -> Result<Self> {
        validate(env, learner, schedule, &config)?;
        Ok(Self { env, learner, schedule, config })
    }

    pub fn initial_agents(&self) -> Vec<AgentRuntime> {
        self.learner.init_agents(&self.config, self.env.num_agents())
    }

    pub fn train(&self) -> Result<TrainOutcome> {
        self.train_from(self.initial_agents(), |_, _, _| {})
    }

    /// Trains from the given parameters; `observer` sees the episode index,
    /// the session after every step, and what the step produced.
    pub fn train_from(
        &self,
        agents: Vec<AgentRuntime>,
        mut observer: impl FnMut(usize, &Session<'a, E>, &StepOutcome),
    ) -> Result<TrainOutcome> {
        let mut session = Session::new(self.env, self.learner, self.schedule, self.config.clone(), agents)?;
        let initial = session.norms();
        check_norms(&initial, 0, self.config.z_cap)?;
        let n = self.env.num_agents();
        let gamma = self.env.gamma();
        let mut episodes = Vec::with_capacity(self.config.episodes);
        let mut steps = Vec::new();
        let mut max_z = initial.z;
        let mut last = initial;
        for episode in 0..self.config.episodes {
            session.reset_episode()?;
            let mut returns = vec![0.0; n];
            let mut discounted = vec![0.0; n];
            let mut estimated = 0.0;
            let mut discount = 1.0;
            let mut count = 0;
            let mut terminal = false;
            while count < self.config.max_steps {
                let out = session.train_step()?;
                count += 1;
                for i in 0..n {
                    returns[i] += out.rewards[i];
                    discounted[i] += discount * out.rewards[i];
                }
                discount *= gamma;
                estimated += out.estimates.iter().sum::<f64>() / n as f64;
                last = session.norms();
                check_norms(&last, out.t, self.config.z_cap)?;
                max_z = max_z.max(last.z);
                if self.config.per_step_metrics {
                    steps.push(StepMetrics { t: out.t, episode, norms: last });
                }
                observer(episode, &session, &out);
                if out.terminal {
                    terminal = true;
                    break;
                }
            }
            episodes.push(EpisodeMetrics {
                episode,
                steps: count,
                terminal,
                returns,
                discounted_returns: discounted,
                estimated_return: estimated,
                norms: last,
            });
        }
        let total_steps = session.t();
        Ok(TrainOutcome { agents: session.into_agents(), episodes, steps, total_steps, initial, last, max_z_norm: max_z })
    }
}

fn check_norms(norms: &ParamNorms, step: u64, cap: f64) -> Result<()> {
    if !norms.z.is_finite() || !norms.theta.is_finite() {
        return Err(Error::Divergence { step, reason: "non-finite parameters".into() });
    }
    if norms.z > cap {
        return Err(Error::Divergence { step, reason: format!("||z|| = {:e} exceeds cap {cap:e}", norms.z) });
    }
    Ok(())
}

/// Draws from `probs` with an explicit generator; exposed for reference
/// implementations that must consume randomness identically.
pub fn sample_action(probs: &[f64], rng: &mut impl Rng) -> usize {
    sample_categorical(probs, rng)
}
