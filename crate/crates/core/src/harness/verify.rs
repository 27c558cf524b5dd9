use std::fmt::Write as _;
use std::path::Path;

use crate::algorithm::{Learner, ParamNorms, Trainer};
use crate::approx::ParamBox;
use crate::consensus::{ConsensusReport, ScheduleFile};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::harness::config::{Backend, ScenarioConfig};
use crate::harness::run::{build_env, build_schedule, ScenarioEnv};
use crate::oracle::{
    linear_softmax_policy, solve_fixed_point, verify_convergence, FixedPoint, FixedPointSystem, RewardTarget,
    VerificationReport,
};
use crate::rng::{stream, Stream};

pub const DEFAULT_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct FixedPointCheck {
    pub target: RewardTarget,
    pub report: VerificationReport,
    pub fixed_point: FixedPoint,
    /// `max Re(eig(Phi^T D (gamma P - I) Phi))`, negative when stable.
    pub critic_eigenvalue: f64,
    /// `||lambda_target - lambda_team||_inf / ||lambda_team||_inf`.
    pub team_gap: f64,
    pub initial: ParamNorms,
    pub last: ParamNorms,
    pub max_z_norm: f64,
}

impl FixedPointCheck {
    pub fn passed(&self) -> bool {
        self.report.passed
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let target = match self.target {
            RewardTarget::Agent(j) => format!("agent {j} rewards"),
            RewardTarget::TeamAverage => "team-average rewards".to_string(),
        };
        let _ = writeln!(out, "fixed point of {target}");
        let _ = writeln!(out, "critic block max real eigenvalue {:.6e}", self.critic_eigenvalue);
        let _ = writeln!(out, "relative lambda gap to the team fixed point {:.6e}", self.team_gap);
        out.push_str(&self.report.to_text());
        out
    }
}

/// Trains the scenario with the policy frozen at its initial parameters and
/// compares every agent's `(lambda, v)` with the analytic fixed point.
pub fn verify_fixed_point(config: &ScenarioConfig, tolerance: f64) -> Result<FixedPointCheck> {
    let mut config = config.clone();
    config.training.freeze_policy = true;
    if config.approximator.kind != Backend::Linear {
        return Err(Error::Config("fixed-point verification needs the linear backend".into()));
    }
    let ScenarioEnv::Tabular(env) = build_env(&config)? else {
        return Err(Error::Config("fixed-point verification needs a tabular environment".into()));
    };
    let bounds = ParamBox { max_abs: config.approximator.theta_max };
    let learner = Learner::linear(&env, bounds)?;
    let (schedule, _) = build_schedule(&config, env.num_agents())?;
    let trainer = Trainer::new(&env, &learner, &schedule, config.train_config())?;
    let initial = trainer.initial_agents();
    let thetas: Vec<Vec<f64>> = initial.iter().map(|a| a.theta.clone()).collect();
    let outcome = trainer.train_from(initial, |_, _, _| {})?;

    let phi = env.state_feature_map();
    let f = env.pair_feature_map();
    let policy = linear_softmax_policy(env.mdp(), phi, &thetas)?;
    let attack = config.attack_model();
    let (mdp, target) = match &attack {
        Some(a) => {
            let target = if a.omit_consensus { RewardTarget::Agent(a.adversary) } else { RewardTarget::TeamAverage };
            (a.compromised_mdp(env.mdp())?, target)
        }
        None => (env.mdp().clone(), RewardTarget::TeamAverage),
    };
    let system = FixedPointSystem::new(&mdp, &policy, phi, f, target)?;
    system.check_critic_stability()?;
    let fixed_point = solve_fixed_point(&system)?;
    let team = solve_fixed_point(&FixedPointSystem::new(&mdp, &policy, phi, f, RewardTarget::TeamAverage)?)?;
    let team_gap = (&fixed_point.lambda - &team.lambda).amax() / team.lambda.amax().max(crate::oracle::RELATIVE_FLOOR);
    let report = verify_convergence(&outcome.agents, &fixed_point, tolerance)?;
    Ok(FixedPointCheck {
        target,
        report,
        fixed_point,
        critic_eigenvalue: system.critic_max_real_eigenvalue(),
        team_gap,
        initial: outcome.initial,
        last: outcome.last,
        max_z_norm: outcome.max_z_norm,
    })
}

/// Samples used to estimate the spectral value of random schedules.
pub const SPECTRAL_SAMPLES: usize = 2000;

#[derive(Clone, Debug)]
pub struct ConsensusCheck {
    pub reports: Vec<ConsensusReport>,
    /// Spectral value of the whole schedule (averaged over its matrices).
    pub spectral: f64,
    pub text: String,
}

impl ConsensusCheck {
    pub fn passed(&self) -> bool {
        // a single matrix of a cycle may fail the spectral test on its own
        let structural = self.reports.iter().flat_map(|r| &r.checks).all(|c| c.passed || c.name == "spectral");
        structural && self.spectral < 1.0
    }
}

/// Structural and spectral checks on a schedule file.
pub fn consensus_check(path: &Path) -> Result<ConsensusCheck> {
    let file = ScheduleFile::load(path)?;
    let spec = file.build()?;
    let mut text = String::new();
    let mut reports = Vec::new();
    let matrices = spec.schedule.matrices()?;
    let graph_for = |k: usize| spec.graphs.get(k).or_else(|| spec.graphs.first());
    for (k, w) in matrices.iter().enumerate() {
        let report = w.check(graph_for(k));
        if matrices.len() > 1 {
            let _ = writeln!(text, "matrix {k}");
        }
        for c in &report.checks {
            let _ = writeln!(text, "{:<16} {} {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
        }
        text.push_str(&w.to_dense_text());
        reports.push(report);
    }
    let mut rng = stream(0, Stream::Schedule);
    let spectral = spec.schedule.spectral_condition(SPECTRAL_SAMPLES, &mut rng)?;
    let _ = writeln!(text, "spectral value {spectral:.6e}");
    let check = ConsensusCheck { reports, spectral, text };
    let verdict = if check.passed() { "PASS" } else { "FAIL" };
    let mut text = check.text.clone();
    let _ = writeln!(text, "{verdict}");
    Ok(ConsensusCheck { text, ..check })
}
