//! Consensus actor-critic: local reward-estimator, critic and actor updates
//! on two timescales, followed by a synchronous consensus step over the
//! reward-estimator and critic parameters.

mod config;
mod trainer;
mod updates;

pub use config::{
    freeze_policy_mode, AttackModel, InitConfig, RewardTransform, StepSize, StepSizeSchedule, TrainConfig,
    DEFAULT_Z_CAP,
};
pub use trainer::{
    param_norms, sample_action, AgentRuntime, EpisodeMetrics, Learner, ParamNorms, Session, StepMetrics,
    StepOutcome, TrainOutcome, Trainer,
};
pub use updates::{actor_update, critic_update, estimated_td_error, reward_param_update, td_error};
