use crate::error::{Error, Result};
use crate::mdp::NetworkedMdp;

/// `alpha_t = scale / (offset + t)^exponent`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSize {
    pub scale: f64,
    pub offset: f64,
    pub exponent: f64,
}

impl StepSize {
    pub fn new(scale: f64, offset: f64, exponent: f64) -> Self {
        Self { scale, offset, exponent }
    }

    pub fn at(&self, t: u64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        self.scale / (self.offset + t as f64).powf(self.exponent)
    }
}

/// Critic / reward-estimator rate and actor rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSizeSchedule {
    pub critic: StepSize,
    pub actor: StepSize,
}

impl Default for StepSizeSchedule {
    fn default() -> Self {
        Self { critic: StepSize::new(1.0, 1.0, 0.65), actor: StepSize::new(1.0, 1.0, 0.85) }
    }
}

impl StepSizeSchedule {
    /// Requires `0.5 < p_v < p_theta <= 1`, non-negative scales and a positive
    /// offset, which makes both sequences non-summable, square-summable, and
    /// the actor rate vanish relative to the critic rate.
    pub fn validate(&self) -> Result<()> {
        let (pv, pt) = (self.critic.exponent, self.actor.exponent);
        if !(0.5 < pv && pv < pt && pt <= 1.0) {
            return Err(Error::Config(format!(
                "step-size exponents must satisfy 0.5 < p_v < p_theta <= 1, got p_v = {pv}, p_theta = {pt}"
            )));
        }
        for (name, s) in [("critic", self.critic), ("actor", self.actor)] {
            if !(s.scale.is_finite() && s.scale >= 0.0) {
                return Err(Error::Config(format!("{name} step-size scale {} must be >= 0", s.scale)));
            }
            if !(s.offset.is_finite() && s.offset > 0.0) {
                return Err(Error::Config(format!("{name} step-size offset {} must be > 0", s.offset)));
            }
        }
        Ok(())
    }

    pub fn critic_rate(&self, t: u64) -> f64 {
        self.critic.at(t)
    }

    pub fn actor_rate(&self, t: u64) -> f64 {
        self.actor.at(t)
    }
}

/// How the adversary rewrites its own reward before learning from it.
#[derive(Clone, Debug, PartialEq)]
pub enum RewardTransform {
    Identity,
    Affine { scale: f64, shift: f64 },
    /// Replacement reward indexed by the environment's flat `(s, a, s')` index.
    Table { values: Vec<f64> },
}

impl RewardTransform {
    pub fn apply(&self, reward: f64, transition: Option<usize>) -> Result<f64> {
        match self {
            RewardTransform::Identity => Ok(reward),
            RewardTransform::Affine { scale, shift } => Ok(scale * reward + shift),
            RewardTransform::Table { values } => {
                let idx = transition
                    .ok_or_else(|| Error::Config("reward table needs an environment with enumerable transitions".into()))?;
                values
                    .get(idx)
                    .copied()
                    .ok_or_else(|| Error::Input(format!("transition index {idx} >= table length {}", values.len())))
            }
        }
    }
}

/// One adversary that runs the local updates on a possibly rewritten reward
/// and, if `omit_consensus`, keeps its own parameters during mixing.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackModel {
    pub adversary: usize,
    pub omit_consensus: bool,
    pub transform: RewardTransform,
}

impl AttackModel {
    pub fn new(adversary: usize) -> Self {
        Self { adversary, omit_consensus: true, transform: RewardTransform::Identity }
    }

    /// The MDP the adversary effectively optimises: its reward table passed
    /// through the transform.
    pub fn compromised_mdp(&self, mdp: &NetworkedMdp) -> Result<NetworkedMdp> {
        let table = mdp
            .reward_table(self.adversary)
            .iter()
            .enumerate()
            .map(|(idx, r)| self.transform.apply(*r, Some(idx)))
            .collect::<Result<Vec<_>>>()?;
        mdp.with_reward_table(self.adversary, table)
    }
}

/// Parameter initialisation. Linear parameters draw `U(-scale, scale)`;
/// network parameters use Glorot weights with the output layer scaled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitConfig {
    pub critic_scale: f64,
    pub reward_scale: f64,
    pub actor_scale: f64,
    /// Give every agent the same critic and reward-estimator draw.
    pub shared: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { critic_scale: 1.0, reward_scale: 1.0, actor_scale: 0.0, shared: false }
    }
}

pub const DEFAULT_Z_CAP: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub episodes: usize,
    pub max_steps: usize,
    pub step_sizes: StepSizeSchedule,
    pub freeze_policy: bool,
    pub init: InitConfig,
    pub attack: Option<AttackModel>,
    /// Divergence threshold on `||z_t||`.
    pub z_cap: f64,
    pub per_step_metrics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: 1,
            max_steps: 1000,
            step_sizes: StepSizeSchedule::default(),
            freeze_policy: false,
            init: InitConfig::default(),
            attack: None,
            z_cap: DEFAULT_Z_CAP,
            per_step_metrics: false,
        }
    }
}

/// Same configuration with actor updates switched off.
pub fn freeze_policy_mode(config: &TrainConfig) -> TrainConfig {
    TrainConfig { freeze_policy: true, ..config.clone() }
}
