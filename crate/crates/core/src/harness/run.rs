use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::algorithm::{EpisodeMetrics, Learner, StepMetrics, TrainOutcome, Trainer};
use crate::approx::{ParamBox, StateActionFeatureMap, StateFeatureMap};
use crate::consensus::{build_uniform_weights, CommGraph, ConsensusSchedule, ScheduleFile};
use crate::envs::{generate_small_mdp, Environment, GridScenario, GridWorld, GridWorldConfig, SmallMdpSpec, TabularEnv};
use crate::error::{Error, Result};
use crate::harness::config::{Backend, EnvConfig, FeatureKind, ScenarioConfig};
use crate::mdp::{NetworkedMdp, Role};

pub const METRICS_SCHEMA: &str = "cmarl-metrics-v1";
/// Relative output paths are placed under this directory when it is set.
pub const OUTPUT_DIR_ENV: &str = "CMARL_OUTPUT_DIR";

/// The environment a scenario runs against.
#[derive(Clone, Debug)]
pub enum ScenarioEnv {
    Tabular(TabularEnv),
    Grid(GridWorld),
}

impl ScenarioEnv {
    pub fn num_agents(&self) -> usize {
        match self {
            ScenarioEnv::Tabular(e) => e.num_agents(),
            ScenarioEnv::Grid(e) => e.num_agents(),
        }
    }
}

fn role_table(n: usize, adversary: Option<usize>) -> Vec<Role> {
    (0..n).map(|i| if Some(i) == adversary { Role::Adversary } else { Role::Cooperative }).collect()
}

/// Builds the environment described by `config.env`.
pub fn build_env(config: &ScenarioConfig) -> Result<ScenarioEnv> {
    let adversary = config.attack.as_ref().map(|a| a.adversary);
    let mdp = match &config.env {
        EnvConfig::SmallMdp { num_states, action_sizes, reward_ranges, concentration, gamma, mdp_seed } => {
            generate_small_mdp(&SmallMdpSpec {
                num_states: *num_states,
                action_sizes: action_sizes.clone(),
                reward_ranges: reward_ranges.clone(),
                concentration: *concentration,
                gamma: *gamma,
                seed: *mdp_seed,
                adversary,
            })?
        }
        EnvConfig::MdpFile { path } => {
            let mdp = NetworkedMdp::load(config.resolve(path))?;
            if adversary.is_some_and(|j| j >= mdp.num_agents()) {
                return Err(Error::Config(format!("adversary {adversary:?} outside 0..{}", mdp.num_agents())));
            }
            mdp.with_roles(role_table(mdp.num_agents(), adversary))?
        }
        EnvConfig::Grid { width, height, desired, gamma } => {
            let world = GridWorld::new(GridWorldConfig { width: *width, height: *height, desired: desired.clone(), gamma: *gamma })?;
            check_grid_adversary(&world, adversary)?;
            return Ok(ScenarioEnv::Grid(world));
        }
        EnvConfig::GridFile { path } => {
            let scenario = GridScenario::load(config.resolve(path))?;
            if let (Some(file), Some(cfg)) = (scenario.adversary, adversary) {
                if file != cfg {
                    return Err(Error::Config(format!("grid file names adversary {file}, [attack] names {cfg}")));
                }
            }
            let world = scenario.world()?;
            check_grid_adversary(&world, adversary)?;
            return Ok(ScenarioEnv::Grid(world));
        }
    };
    Ok(ScenarioEnv::Tabular(tabular_env(config, mdp)?))
}

fn check_grid_adversary(world: &GridWorld, adversary: Option<usize>) -> Result<()> {
    match adversary {
        Some(j) if j >= world.num_agents() => {
            Err(Error::Config(format!("adversary {j} outside 0..{}", world.num_agents())))
        }
        _ => Ok(()),
    }
}

fn tabular_env(config: &ScenarioConfig, mdp: NetworkedMdp) -> Result<TabularEnv> {
    let a = &config.approximator;
    let (ns, na) = (mdp.num_states(), mdp.num_joint_actions());
    let phi = match a.features {
        FeatureKind::Tabular => StateFeatureMap::tabular(ns),
        FeatureKind::Radial => StateFeatureMap::radial_basis(ns, a.rbf_count, a.rbf_width)?,
    };
    let pair = match (a.features, a.action_independent) {
        (_, true) => StateActionFeatureMap::action_independent(&phi, na)?,
        (FeatureKind::Tabular, false) => StateActionFeatureMap::tabular(ns, na),
        (FeatureKind::Radial, false) => StateActionFeatureMap::product(&phi, na)?,
    };
    TabularEnv::new(mdp, phi, pair)
}

fn build_learner<E: Environment>(config: &ScenarioConfig, env: &E) -> Result<Learner> {
    let bounds = ParamBox { max_abs: config.approximator.theta_max };
    match config.approximator.kind {
        Backend::Linear => Learner::linear(env, bounds),
        Backend::Mlp => Learner::mlp(env, config.approximator.hidden, bounds),
    }
}

/// The consensus schedule, with the adversary's row fixed when it omits
/// mixing.
pub fn build_schedule(config: &ScenarioConfig, num_agents: usize) -> Result<(ConsensusSchedule, Vec<CommGraph>)> {
    let adversary = config.attack.as_ref().filter(|a| a.omit_consensus).map(|a| a.adversary);
    let c = &config.consensus;
    if let Some(path) = &c.schedule {
        if c.edges.is_some() || c.drop_probability.is_some() {
            return Err(Error::Config("consensus.schedule cannot be combined with edges or drop_probability".into()));
        }
        let file = ScheduleFile::load(config.resolve(path))?;
        if file.num_agents != num_agents {
            return Err(Error::Config(format!("schedule has {} agents, environment {num_agents}", file.num_agents)));
        }
        if file.adversary != adversary {
            return Err(Error::Config(format!(
                "schedule adversary {:?} does not match the attack section ({adversary:?})",
                file.adversary
            )));
        }
        let spec = file.build()?;
        spec.schedule.validate(Some(&spec.graphs).filter(|g| !g.is_empty()).map(Vec::as_slice))?;
        return Ok((spec.schedule, spec.graphs));
    }
    let graph = match &c.edges {
        Some(edges) => CommGraph::new(num_agents, edges.iter().copied())?,
        None => CommGraph::fully_connected(num_agents)?,
    };
    let schedule = match c.drop_probability {
        Some(p) => ConsensusSchedule::RandomDrop { graph: graph.clone(), adversary, drop_probability: p },
        None => {
            let mut w = build_uniform_weights(&graph, adversary)?;
            if let Some(eta) = c.eta {
                w = w.with_eta(eta);
            }
            ConsensusSchedule::Static(w)
        }
    };
    schedule.validate(Some(std::slice::from_ref(&graph)))?;
    Ok((schedule, vec![graph]))
}

/// Everything a run produced, already rendered.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub outcome: TrainOutcome,
    pub metrics_csv: String,
    pub steps_csv: Option<String>,
    pub trajectory_csv: Option<String>,
}

/// Runs a validated scenario in memory.
pub fn execute(config: &ScenarioConfig) -> Result<RunOutput> {
    let env = build_env(config)?;
    let want_trajectory = config.metrics.trajectory.is_some();
    let last = config.training.episodes.checked_sub(1);
    match &env {
        ScenarioEnv::Tabular(e) => {
            let mut rows = String::from("episode,step,state\n");
            let outcome = train(config, e, |episode, step, s: &usize| {
                if want_trajectory && Some(episode) == last {
                    let _ = writeln!(rows, "{episode},{step},{s}");
                }
            })?;
            Ok(render(config, outcome, want_trajectory.then_some(rows)))
        }
        ScenarioEnv::Grid(e) => {
            let mut rows = String::from("episode,step,agent,x,y\n");
            let outcome = train(config, e, |episode, step, s: &Vec<(usize, usize)>| {
                if want_trajectory && Some(episode) == last {
                    for (i, (x, y)) in s.iter().enumerate() {
                        let _ = writeln!(rows, "{episode},{step},{i},{x},{y}");
                    }
                }
            })?;
            Ok(render(config, outcome, want_trajectory.then_some(rows)))
        }
    }
}

fn train<E: Environment>(
    config: &ScenarioConfig,
    env: &E,
    mut record: impl FnMut(usize, usize, &E::State),
) -> Result<TrainOutcome> {
    let learner = build_learner(config, env)?;
    let (schedule, _) = build_schedule(config, env.num_agents())?;
    let trainer = Trainer::new(env, &learner, &schedule, config.train_config())?;
    let mut step_in_episode = 0;
    let mut current = usize::MAX;
    trainer.train_from(trainer.initial_agents(), |episode, session, _| {
        if episode != current {
            current = episode;
            step_in_episode = 0;
        }
        step_in_episode += 1;
        if let Some(s) = session.state() {
            record(episode, step_in_episode, s);
        }
    })
}

fn render(config: &ScenarioConfig, outcome: TrainOutcome, trajectory_csv: Option<String>) -> RunOutput {
    let n = outcome.agents.len();
    let cooperative: Vec<usize> = (0..n).filter(|&i| outcome.agents[i].role == Role::Cooperative).collect();
    let metrics_csv = metrics_csv(config, n, &cooperative, &outcome.episodes);
    let steps_csv = config.metrics.per_step.then(|| steps_csv(&outcome.steps));
    RunOutput { outcome, metrics_csv, steps_csv, trajectory_csv }
}

pub fn metrics_header(num_agents: usize) -> Vec<String> {
    let mut cols: Vec<String> = [
        "episode",
        "steps",
        "terminal",
        "team_return",
        "team_discounted_return",
        "coop_return",
        "estimated_team_return",
        "disagreement",
        "z_norm",
        "theta_norm",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((0..num_agents).map(|i| format!("return_{i}")));
    cols
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn metrics_csv(config: &ScenarioConfig, n: usize, cooperative: &[usize], episodes: &[EpisodeMetrics]) -> String {
    let mut out = format!(
        "# schema={METRICS_SCHEMA} scenario={} seed={} agents={n} adversary={}\n",
        config.scenario.as_str(),
        config.seed,
        config.attack.as_ref().map_or("none".to_string(), |a| a.adversary.to_string()),
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(metrics_header(n)).expect("in-memory write");
    for e in episodes {
        let mut row = vec![
            e.episode.to_string(),
            e.steps.to_string(),
            e.terminal.to_string(),
            mean(e.returns.iter().copied()).to_string(),
            mean(e.discounted_returns.iter().copied()).to_string(),
            mean(cooperative.iter().map(|&i| e.returns[i])).to_string(),
            e.estimated_return.to_string(),
            e.norms.disagreement.to_string(),
            e.norms.z.to_string(),
            e.norms.theta.to_string(),
        ];
        row.extend(e.returns.iter().map(f64::to_string));
        w.write_record(&row).expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8"));
    out
}

fn steps_csv(steps: &[StepMetrics]) -> String {
    let mut out = String::from("t,episode,z_norm,disagreement,theta_norm\n");
    for s in steps {
        let _ = writeln!(out, "{},{},{},{},{}", s.t, s.episode, s.norms.z, s.norms.disagreement, s.norms.theta);
    }
    out
}

/// Places relative paths under `$CMARL_OUTPUT_DIR` when it is set.
pub fn output_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if path.is_relative() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.csv"))
}

#[derive(Clone, Debug, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub freeze_policy: bool,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub metrics_path: PathBuf,
    pub episodes: usize,
    pub total_steps: u64,
    pub max_z_norm: f64,
    pub final_disagreement: f64,
}

pub fn apply_overrides(config: &mut ScenarioConfig, overrides: &RunOverrides) {
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(episodes) = overrides.episodes {
        config.training.episodes = episodes;
    }
    if overrides.freeze_policy {
        config.training.freeze_policy = true;
    }
}

/// Loads `config_path`, runs it and writes the metrics CSV to `out` (plus
/// the per-step and trajectory files when requested). A relative trajectory
/// path is taken relative to the metrics file.
pub fn run_scenario(config_path: &Path, out: &Path, overrides: &RunOverrides) -> Result<RunSummary> {
    let mut config = ScenarioConfig::load(config_path)?;
    apply_overrides(&mut config, overrides);
    let output = execute(&config)?;
    let metrics_path = output_path(out);
    write_file(&metrics_path, &output.metrics_csv)?;
    if let Some(steps) = &output.steps_csv {
        write_file(&sibling(&metrics_path, "_steps"), steps)?;
    }
    if let (Some(rows), Some(path)) = (&output.trajectory_csv, &config.metrics.trajectory) {
        let dir = metrics_path.parent().unwrap_or(Path::new(""));
        write_file(&dir.join(path), rows)?;
    }
    Ok(RunSummary {
        metrics_path,
        episodes: output.outcome.episodes.len(),
        total_steps: output.outcome.total_steps,
        max_z_norm: output.outcome.max_z_norm,
        final_disagreement: output.outcome.last.disagreement,
    })
}
