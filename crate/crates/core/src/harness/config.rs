use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::algorithm::{AttackModel, InitConfig, RewardTransform, StepSize, StepSizeSchedule, TrainConfig, DEFAULT_Z_CAP};
use crate::approx::policy::DEFAULT_THETA_MAX;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioTag {
    Clean,
    Attacked,
}

impl ScenarioTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioTag::Clean => "clean",
            ScenarioTag::Attacked => "attacked",
        }
    }
}

/// A complete run description.
///
/// ```toml
/// scenario = "attacked"
/// seed = 7
///
/// [env]
/// kind = "small_mdp"          # or "grid", "mdp_file"
/// num_states = 4
/// action_sizes = [2, 2, 2]
/// reward_ranges = [[-1, 0], [0, 1], [0, 1]]
///
/// [approximator]
/// kind = "linear"             # or "mlp"
///
/// [training]
/// episodes = 1
/// max_steps = 200000
///
/// [attack]
/// adversary = 0
/// ```
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioTag,
    #[serde(default)]
    pub seed: u64,
    pub env: EnvConfig,
    #[serde(default)]
    pub approximator: ApproxConfig,
    #[serde(default)]
    pub step_sizes: StepSizeConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub consensus: ConsensusConfig,
    pub attack: Option<AttackConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    /// Directory relative paths inside the file are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    SmallMdp {
        num_states: usize,
        action_sizes: Vec<usize>,
        reward_ranges: Vec<[f64; 2]>,
        #[serde(default = "one")]
        concentration: f64,
        #[serde(default = "default_tabular_gamma")]
        gamma: f64,
        /// Seed of the generated MDP, independent of the run seed.
        #[serde(default)]
        mdp_seed: u64,
    },
    MdpFile {
        path: PathBuf,
    },
    Grid {
        width: usize,
        height: usize,
        desired: Vec<(usize, usize)>,
        #[serde(default = "default_grid_gamma")]
        gamma: f64,
    },
    /// A grid scenario file (dimensions, agents, desired cells, adversary).
    GridFile {
        path: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Linear,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    #[default]
    Tabular,
    Radial,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApproxConfig {
    pub kind: Backend,
    /// Linear features for finite MDPs.
    pub features: FeatureKind,
    pub rbf_count: usize,
    pub rbf_width: f64,
    /// Reward estimates that ignore the joint action.
    pub action_independent: bool,
    pub hidden: [usize; 2],
    pub theta_max: f64,
    pub critic_init: f64,
    pub reward_init: f64,
    pub actor_init: f64,
    pub shared_init: bool,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            kind: Backend::Linear,
            features: FeatureKind::Tabular,
            rbf_count: 4,
            rbf_width: 1.0,
            action_independent: false,
            hidden: [64, 64],
            theta_max: DEFAULT_THETA_MAX,
            critic_init: 1.0,
            reward_init: 1.0,
            actor_init: 0.0,
            shared_init: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepSizeConfig {
    pub critic_scale: f64,
    pub critic_offset: f64,
    pub critic_exponent: f64,
    pub actor_scale: f64,
    pub actor_offset: f64,
    pub actor_exponent: f64,
}

impl Default for StepSizeConfig {
    fn default() -> Self {
        let d = StepSizeSchedule::default();
        Self {
            critic_scale: d.critic.scale,
            critic_offset: d.critic.offset,
            critic_exponent: d.critic.exponent,
            actor_scale: d.actor.scale,
            actor_offset: d.actor.offset,
            actor_exponent: d.actor.exponent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub episodes: usize,
    pub max_steps: usize,
    pub freeze_policy: bool,
    pub z_cap: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { episodes: 1, max_steps: 1000, freeze_policy: false, z_cap: DEFAULT_Z_CAP }
    }
}

/// Communication topology. Without `schedule` or `edges` the graph is
/// complete with uniform weights.
#[derive(Clone, Debug, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusConfig {
    /// Schedule file (see [`crate::consensus::ScheduleFile`]).
    pub schedule: Option<PathBuf>,
    /// Directed edges `(i, j)`: `i` hears `j`.
    pub edges: Option<Vec<(usize, usize)>>,
    pub drop_probability: Option<f64>,
    pub eta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub adversary: usize,
    #[serde(default = "yes")]
    pub omit_consensus: bool,
    #[serde(default)]
    pub transform: TransformConfig,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformConfig {
    #[default]
    Identity,
    Affine {
        scale: f64,
        shift: f64,
    },
    Table {
        values: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Also write per-step norms next to the episode metrics.
    pub per_step: bool,
    /// Per-step states of the final episode.
    pub trajectory: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_tabular_gamma() -> f64 {
    0.9
}

fn default_grid_gamma() -> f64 {
    0.95
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::parse("<config>", e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_relative() {
            self.base_dir.join(path)
        } else {
            path.to_path_buf()
        }
    }

    /// Checks that do not need the environment: scenario tag against the
    /// attack section and the step-size conditions.
    pub fn validate(&self) -> Result<()> {
        match (self.scenario, &self.attack) {
            (ScenarioTag::Attacked, None) => {
                return Err(Error::Config("scenario = \"attacked\" needs an [attack] section naming the adversary".into()))
            }
            (ScenarioTag::Clean, Some(_)) => {
                return Err(Error::Config("scenario = \"clean\" must not have an [attack] section".into()))
            }
            _ => {}
        }
        self.step_size_schedule().validate()?;
        if !(self.approximator.theta_max.is_finite() && self.approximator.theta_max > 0.0) {
            return Err(Error::Config(format!(
                "approximator.theta_max = {} must be positive",
                self.approximator.theta_max
            )));
        }
        Ok(())
    }

    pub fn step_size_schedule(&self) -> StepSizeSchedule {
        let s = &self.step_sizes;
        StepSizeSchedule {
            critic: StepSize::new(s.critic_scale, s.critic_offset, s.critic_exponent),
            actor: StepSize::new(s.actor_scale, s.actor_offset, s.actor_exponent),
        }
    }

    pub fn attack_model(&self) -> Option<AttackModel> {
        self.attack.as_ref().map(|a| AttackModel {
            adversary: a.adversary,
            omit_consensus: a.omit_consensus,
            transform: match &a.transform {
                TransformConfig::Identity => RewardTransform::Identity,
                TransformConfig::Affine { scale, shift } => RewardTransform::Affine { scale: *scale, shift: *shift },
                TransformConfig::Table { values } => RewardTransform::Table { values: values.clone() },
            },
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let a = &self.approximator;
        TrainConfig {
            seed: self.seed,
            episodes: self.training.episodes,
            max_steps: self.training.max_steps,
            step_sizes: self.step_size_schedule(),
            freeze_policy: self.training.freeze_policy,
            init: InitConfig {
                critic_scale: a.critic_init,
                reward_scale: a.reward_init,
                actor_scale: a.actor_init,
                shared: a.shared_init,
            },
            attack: self.attack_model(),
            z_cap: self.training.z_cap,
            per_step_metrics: self.metrics.per_step,
        }
    }
}
