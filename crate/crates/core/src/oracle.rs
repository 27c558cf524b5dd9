//! Exact fixed points of the critic and reward-estimator recursions for a
//! fixed policy, and the exact actor drift, computed by dense linear algebra
//! without touching the training code.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::algorithm::AgentRuntime;
use crate::approx::{ParamBox, StateActionFeatureMap, StateFeatureMap};
use crate::error::{Error, Result};
use crate::mdp::{check_primitive, decode_joint_action, stationary_distribution, JointPolicy, NetworkedMdp};

pub const RELATIVE_FLOOR: f64 = 1e-12;
const RESIDUAL_TOL: f64 = 1e-10;
const MAX_ENUMERATION: usize = 100_000;

/// Which reward vector the fixed point is defined by.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardTarget {
    Agent(usize),
    TeamAverage,
}

#[derive(Clone, Debug)]
pub struct FixedPointSystem {
    pub gamma: f64,
    pub d_state: DVector<f64>,
    /// `d(s) pi(a|s)` at index `s * |A| + a`.
    pub d_pair: DVector<f64>,
    pub p_theta: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub f: DMatrix<f64>,
    /// `P(s'|s,a)` as a `|S||A| x |S|` matrix.
    pub kernel: DMatrix<f64>,
    pub reward_pairs: DVector<f64>,
    pub reward_states: DVector<f64>,
}

impl FixedPointSystem {
    pub fn new(
        mdp: &NetworkedMdp,
        policy: &JointPolicy,
        phi: &StateFeatureMap,
        f: &StateActionFeatureMap,
        target: RewardTarget,
    ) -> Result<Self> {
        let (ns, na) = (mdp.num_states(), mdp.num_joint_actions());
        if ns * na > MAX_ENUMERATION {
            return Err(Error::Scale(format!("|S||A| = {} exceeds {MAX_ENUMERATION}", ns * na)));
        }
        if phi.num_states() != ns || f.matrix().nrows() != ns * na {
            return Err(Error::Dimension("features do not match the mdp".into()));
        }
        let p_theta = mdp.transition_matrix(policy)?;
        check_primitive(&p_theta)?;
        let d_state = stationary_distribution(&p_theta)?;
        let mut d_pair = DVector::zeros(ns * na);
        for s in 0..ns {
            for (a, p) in policy.joint_distribution(s).iter().enumerate() {
                d_pair[s * na + a] = d_state[s] * p;
            }
        }
        let kernel = DMatrix::from_fn(ns * na, ns, |row, next| mdp.transition(row / na, row % na, next));
        let summary = mdp.reward_summaries(policy)?;
        let (reward_pairs, reward_states) = match target {
            RewardTarget::TeamAverage => (summary.team_sa, summary.team_state),
            RewardTarget::Agent(j) if j < mdp.num_agents() => {
                (summary.per_agent_sa[j].clone(), summary.per_agent_state[j].clone())
            }
            RewardTarget::Agent(j) => return Err(Error::Input(format!("agent {j} >= {}", mdp.num_agents()))),
        };
        Ok(Self {
            gamma: mdp.gamma(),
            d_state,
            d_pair,
            p_theta,
            phi: phi.matrix().clone(),
            f: f.matrix().clone(),
            kernel,
            reward_pairs,
            reward_states,
        })
    }

    fn weighted(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for (mut row, w) in out.row_iter_mut().zip(d.iter()) {
            row *= *w;
        }
        out
    }

    /// `F^T D F`.
    pub fn reward_normal_matrix(&self) -> DMatrix<f64> {
        self.f.transpose() * Self::weighted(&self.f, &self.d_pair)
    }

    /// `F^T D R`.
    pub fn reward_rhs(&self) -> DVector<f64> {
        self.f.transpose() * self.d_pair.component_mul(&self.reward_pairs)
    }

    /// `Phi^T D (gamma P - I) Phi`.
    pub fn critic_block(&self) -> DMatrix<f64> {
        let n = self.phi.nrows();
        let m = (&self.p_theta * self.gamma - DMatrix::identity(n, n)) * &self.phi;
        self.phi.transpose() * Self::weighted(&m, &self.d_state)
    }

    /// `Phi^T D R_theta`.
    pub fn critic_rhs(&self) -> DVector<f64> {
        self.phi.transpose() * self.d_state.component_mul(&self.reward_states)
    }

    /// `blockdiag(-F^T D F, Phi^T D (gamma P - I) Phi)`.
    pub fn a_prime(&self) -> DMatrix<f64> {
        let (m, l) = (self.f.ncols(), self.phi.ncols());
        let mut out = DMatrix::zeros(m + l, m + l);
        out.view_mut((0, 0), (m, m)).copy_from(&(-self.reward_normal_matrix()));
        out.view_mut((m, m), (l, l)).copy_from(&self.critic_block());
        out
    }

    pub fn b_bar(&self) -> DVector<f64> {
        let (r, c) = (self.reward_rhs(), self.critic_rhs());
        DVector::from_iterator(r.len() + c.len(), r.iter().chain(c.iter()).copied())
    }

    /// Largest real part among the critic block's eigenvalues.
    pub fn critic_max_real_eigenvalue(&self) -> f64 {
        self.critic_block().complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn check_critic_stability(&self) -> Result<()> {
        let re = self.critic_max_real_eigenvalue();
        if re < 0.0 {
            Ok(())
        } else {
            Err(Error::Singular(format!("critic block has an eigenvalue with real part {re}")))
        }
    }
}

fn solve_checked(a: DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<(DVector<f64>, f64)> {
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Rank { what: what.to_string(), ratio: 0.0 })?;
    let residual = (&a * &x - b).amax();
    if residual.is_nan() || residual > RESIDUAL_TOL * b.amax().max(1.0) {
        return Err(Error::Singular(format!("{what}: residual {residual:e} after direct solve")));
    }
    Ok((x, residual))
}

/// `lambda_theta = (F^T D F)^{-1} F^T D R`.
pub fn solve_reward_fixed_point(system: &FixedPointSystem) -> Result<DVector<f64>> {
    solve_checked(system.reward_normal_matrix(), &system.reward_rhs(), "reward normal matrix").map(|(x, _)| x)
}

/// `v_theta = [Phi^T D (I - gamma P) Phi]^{-1} Phi^T D R_theta`.
pub fn solve_critic_fixed_point(system: &FixedPointSystem) -> Result<DVector<f64>> {
    solve_checked(-system.critic_block(), &system.critic_rhs(), "critic matrix").map(|(x, _)| x)
}

/// Integrates `x' = A x + b` with forward Euler from `start` until the
/// update falls below `tol`; `A` must be Hurwitz.
pub fn solve_by_iteration(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    start: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let eig = a.complex_eigenvalues();
    // |1 + h z| < 1 for every eigenvalue z when h < 2 Re(-z) / |z|^2.
    let h = eig
        .iter()
        .map(|z| -2.0 * z.re / z.norm_sqr())
        .fold(f64::INFINITY, f64::min);
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Singular("iteration matrix is not Hurwitz".into()));
    }
    let h = 0.5 * h;
    let mut x = start;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let step = (a * &x + b) * h;
        residual = step.amax();
        x += step;
        if residual < tol {
            return Ok(x);
        }
    }
    Err(Error::Convergence { iterations: max_iter, residual })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPoint {
    pub lambda: DVector<f64>,
    pub v: DVector<f64>,
}

pub fn solve_fixed_point(system: &FixedPointSystem) -> Result<FixedPoint> {
    Ok(FixedPoint { lambda: solve_reward_fixed_point(system)?, v: solve_critic_fixed_point(system)? })
}

/// Fixed point for the team-average rewards.
pub fn baseline_fixed_point(
    mdp: &NetworkedMdp,
    policy: &JointPolicy,
    phi: &StateFeatureMap,
    f: &StateActionFeatureMap,
) -> Result<FixedPoint> {
    solve_fixed_point(&FixedPointSystem::new(mdp, policy, phi, f, RewardTarget::TeamAverage)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentError {
    pub agent: usize,
    pub lambda: f64,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub tolerance: f64,
    pub agents: Vec<AgentError>,
    pub passed: bool,
}

fn relative_error(x: &[f64], target: &DVector<f64>) -> f64 {
    let diff: f64 = x.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    diff / target.norm().max(RELATIVE_FLOOR)
}

/// Compares each agent's `(lambda, v)` with the fixed point in relative
/// Euclidean error; passes iff every error is within `tolerance`.
pub fn verify_convergence(agents: &[AgentRuntime], target: &FixedPoint, tolerance: f64) -> Result<VerificationReport> {
    let mut errors = Vec::with_capacity(agents.len());
    for (i, a) in agents.iter().enumerate() {
        if a.lambda.len() != target.lambda.len() || a.v.len() != target.v.len() {
            return Err(Error::Dimension(format!("agent {i} parameters do not match the fixed point")));
        }
        errors.push(AgentError { agent: i, lambda: relative_error(&a.lambda, &target.lambda), v: relative_error(&a.v, &target.v) });
    }
    let passed = errors.iter().all(|e| e.lambda <= tolerance && e.v <= tolerance);
    Ok(VerificationReport { tolerance, agents: errors, passed })
}

impl VerificationReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.agents {
            let ok = e.lambda <= self.tolerance && e.v <= self.tolerance;
            let _ = writeln!(
                out,
                "agent {}: lambda rel. error {:.3e}, v rel. error {:.3e} [{}]",
                e.agent,
                e.lambda,
                e.v,
                if ok { "ok" } else { "FAIL" }
            );
        }
        let _ = writeln!(out, "tolerance {:e}: {}", self.tolerance, if self.passed { "PASS" } else { "FAIL" });
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("agent,lambda_rel_error,v_rel_error,tolerance,passed\n");
        for e in &self.agents {
            let ok = e.lambda <= self.tolerance && e.v <= self.tolerance;
            let _ = writeln!(out, "{},{:e},{:e},{:e},{}", e.agent, e.lambda, e.v, self.tolerance, ok);
        }
        out
    }
}

/// Softmax-linear actors over state features: agent `i`'s logits are
/// `theta^i` viewed as an `|A^i| x L` row-major matrix applied to `phi(s)`.
fn local_policy(theta: &[f64], phi: &[f64], k: usize) -> Vec<f64> {
    let l = phi.len();
    let logits: Vec<f64> = (0..k).map(|b| (0..l).map(|c| theta[b * l + c] * phi[c]).sum()).collect();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|z| (z - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// The joint policy induced by softmax-linear actors.
pub fn linear_softmax_policy(mdp: &NetworkedMdp, phi: &StateFeatureMap, thetas: &[Vec<f64>]) -> Result<JointPolicy> {
    let sizes = mdp.action_sizes();
    let l = phi.dim();
    if thetas.len() != sizes.len() || thetas.iter().zip(sizes).any(|(t, &k)| t.len() != k * l) {
        return Err(Error::Dimension("actor parameters do not match |A^i| x L".into()));
    }
    let per_agent = thetas
        .iter()
        .zip(sizes)
        .map(|(t, &k)| (0..mdp.num_states()).flat_map(|s| local_policy(t, phi.features(s), k)).collect())
        .collect();
    JointPolicy::new(mdp.num_states(), sizes.to_vec(), per_agent)
}

/// `g^i = sum_{s,a} d(s) pi(a|s) (f(s,a) lambda + gamma E[phi(s')] v - phi(s) v) psi^i(s, a^i)`
/// for softmax-linear actors.
pub fn actor_drift(
    mdp: &NetworkedMdp,
    phi: &StateFeatureMap,
    f: &StateActionFeatureMap,
    thetas: &[Vec<f64>],
    lambda: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    let (ns, na) = (mdp.num_states(), mdp.num_joint_actions());
    if ns * na > MAX_ENUMERATION {
        return Err(Error::Scale(format!("|S||A| = {} exceeds {MAX_ENUMERATION}", ns * na)));
    }
    if lambda.len() != f.dim() || v.len() != phi.dim() {
        return Err(Error::Dimension("fixed point does not match the features".into()));
    }
    let policy = linear_softmax_policy(mdp, phi, thetas)?;
    let d = stationary_distribution(&mdp.transition_matrix(&policy)?)?;
    let sizes = mdp.action_sizes();
    let l = phi.dim();
    let values: Vec<f64> = (0..ns).map(|s| phi.features(s).iter().zip(v.iter()).map(|(a, b)| a * b).sum()).collect();
    let mut drift: Vec<DVector<f64>> = sizes.iter().map(|&k| DVector::zeros(k * l)).collect();
    for s in 0..ns {
        let x = phi.features(s);
        for a in 0..na {
            let weight = d[s] * policy.joint_prob(s, a);
            let estimate: f64 = f.features(s, a).iter().zip(lambda.iter()).map(|(p, q)| p * q).sum();
            let expected_next: f64 = mdp.next_state_distribution(s, a).iter().zip(&values).map(|(p, w)| p * w).sum();
            let advantage = estimate + mdp.gamma() * expected_next - values[s];
            let local = decode_joint_action(sizes, a);
            for (i, g) in drift.iter_mut().enumerate() {
                let probs = policy.agent_distribution(i, s);
                for b in 0..sizes[i] {
                    let coeff = if b == local[i] { 1.0 } else { 0.0 } - probs[b];
                    for c in 0..l {
                        g[b * l + c] += weight * advantage * coeff * x[c];
                    }
                }
            }
        }
    }
    Ok(drift)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationarityReport {
    /// `||g^i||_inf` per agent.
    pub residuals: Vec<f64>,
    /// Whether `theta^i` is strictly inside the box.
    pub interior: Vec<bool>,
}

impl StationarityReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }
}

/// Exact actor drift at the fixed point of `target` for the current policy.
pub fn actor_stationarity_residual(
    mdp: &NetworkedMdp,
    phi: &StateFeatureMap,
    f: &StateActionFeatureMap,
    thetas: &[Vec<f64>],
    target: RewardTarget,
    bounds: ParamBox,
) -> Result<StationarityReport> {
    let policy = linear_softmax_policy(mdp, phi, thetas)?;
    let fp = solve_fixed_point(&FixedPointSystem::new(mdp, &policy, phi, f, target)?)?;
    let drift = actor_drift(mdp, phi, f, thetas, &fp.lambda, &fp.v)?;
    Ok(StationarityReport {
        residuals: drift.iter().map(|g| g.amax()).collect(),
        interior: thetas.iter().map(|t| bounds.is_interior(t)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{generate_small_mdp, SmallMdpSpec};
    use crate::mdp::Role;
    use crate::rng::{stream, Stream};
    use rand::Rng;

    fn seeded_mdp(states: usize, seed: u64) -> NetworkedMdp {
        generate_small_mdp(&SmallMdpSpec {
            num_states: states,
            action_sizes: vec![2, 2],
            reward_ranges: vec![[-1.0, 0.0], [0.0, 1.0]],
            concentration: 1.0,
            gamma: 0.9,
            seed,
            adversary: Some(0),
        })
        .unwrap()
    }

    fn tabular(mdp: &NetworkedMdp) -> (StateFeatureMap, StateActionFeatureMap) {
        crate::approx::build_tabular_features(mdp.num_states(), mdp.num_joint_actions()).unwrap()
    }

    #[test]
    fn tabular_fixed_points_are_the_reward_vectors() {
        let mdp = seeded_mdp(3, 1);
        let (phi, f) = tabular(&mdp);
        let policy = JointPolicy::uniform(3, mdp.action_sizes());
        let summary = mdp.reward_summaries(&policy).unwrap();
        let sys = FixedPointSystem::new(&mdp, &policy, &phi, &f, RewardTarget::Agent(0)).unwrap();
        let lambda = solve_reward_fixed_point(&sys).unwrap();
        assert!((lambda - &summary.per_agent_sa[0]).amax() < 1e-12);
        let base = baseline_fixed_point(&mdp, &policy, &phi, &f).unwrap();
        assert!((base.lambda - &summary.team_sa).amax() < 1e-12);
        sys.check_critic_stability().unwrap();
        assert!((sys.d_pair.sum() - 1.0).abs() < 1e-12 && (sys.d_state.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rewards_give_zero_fixed_points() {
        let mdp = seeded_mdp(3, 2);
        let zero = vec![0.0; mdp.reward_table(0).len()];
        let mdp = mdp.with_reward_table(0, zero.clone()).unwrap().with_reward_table(1, zero).unwrap();
        let (phi, f) = tabular(&mdp);
        let fp = baseline_fixed_point(&mdp, &JointPolicy::uniform(3, mdp.action_sizes()), &phi, &f).unwrap();
        assert_eq!(fp.lambda.amax(), 0.0);
        assert_eq!(fp.v.amax(), 0.0);
    }

    #[test]
    fn myopic_critic_is_expected_reward() {
        let mdp = seeded_mdp(3, 3);
        let zero_gamma = NetworkedMdp::new(
            3,
            mdp.action_sizes().to_vec(),
            (0..3 * 4 * 3).map(|k| mdp.transition(k / 12, (k / 3) % 4, k % 3)).collect(),
            vec![mdp.reward_table(0).to_vec(), mdp.reward_table(1).to_vec()],
            0.0,
            vec![Role::Adversary, Role::Cooperative],
            100.0,
        )
        .unwrap();
        let (phi, f) = tabular(&zero_gamma);
        let policy = JointPolicy::uniform(3, zero_gamma.action_sizes());
        let sys = FixedPointSystem::new(&zero_gamma, &policy, &phi, &f, RewardTarget::Agent(1)).unwrap();
        let v = solve_critic_fixed_point(&sys).unwrap();
        assert!((v - &sys.reward_states).amax() < 1e-12);
    }

    #[test]
    fn tabular_critic_matches_policy_evaluation() {
        let mdp = seeded_mdp(4, 4);
        let (phi, f) = tabular(&mdp);
        let policy = JointPolicy::uniform(4, mdp.action_sizes());
        let sys = FixedPointSystem::new(&mdp, &policy, &phi, &f, RewardTarget::Agent(0)).unwrap();
        let v = solve_critic_fixed_point(&sys).unwrap();
        // Iterative policy evaluation V <- R + gamma P V.
        let mut w = DVector::zeros(4);
        for _ in 0..1000 {
            w = &sys.reward_states + &sys.p_theta * &w * mdp.gamma();
        }
        assert!((v - w).amax() < 1e-10);
    }

    /// Minimises `sum d(s,a) (R(s,a) - f(s,a) lambda)^2` by exact line-search
    /// gradient descent, independent of the normal-equation solve.
    fn weighted_least_squares(f: &DMatrix<f64>, d: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        let mut lambda = DVector::zeros(f.ncols());
        for _ in 0..20_000 {
            let resid = r - f * &lambda;
            let grad = f.transpose() * d.component_mul(&resid);
            if grad.amax() < 1e-15 {
                break;
            }
            let fg = f * &grad;
            let step = grad.norm_squared() / fg.component_mul(&fg).dot(d);
            lambda += grad * step;
        }
        lambda
    }

    #[test]
    fn reward_fixed_point_minimises_weighted_error() {
        let mdp = seeded_mdp(2, 5);
        let mut rng = stream(5, Stream::Init);
        let phi = StateFeatureMap::tabular(2);
        let f = StateActionFeatureMap::new(DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0)), 4, 10.0).unwrap();
        let policy = JointPolicy::uniform(2, mdp.action_sizes());
        for target in [RewardTarget::Agent(0), RewardTarget::TeamAverage] {
            let sys = FixedPointSystem::new(&mdp, &policy, &phi, &f, target).unwrap();
            let direct = solve_reward_fixed_point(&sys).unwrap();
            let descent = weighted_least_squares(&sys.f, &sys.d_pair, &sys.reward_pairs);
            assert!((direct - descent).amax() < 1e-9);
        }
    }

    #[test]
    fn direct_and_iterative_solves_agree() {
        let mdp = seeded_mdp(4, 6);
        let phi = StateFeatureMap::radial_basis(4, 2, 1.0).unwrap();
        let f = StateActionFeatureMap::product(&phi, 4).unwrap();
        let policy = JointPolicy::uniform(4, mdp.action_sizes());
        let sys = FixedPointSystem::new(&mdp, &policy, &phi, &f, RewardTarget::Agent(0)).unwrap();
        let direct = solve_fixed_point(&sys).unwrap();
        for start in [0.0, 5.0, -3.0] {
            let l = solve_by_iteration(&-sys.reward_normal_matrix(), &sys.reward_rhs(), DVector::from_element(8, start), 1e-13, 5_000_000).unwrap();
            let v = solve_by_iteration(&sys.critic_block(), &sys.critic_rhs(), DVector::from_element(2, start), 1e-13, 5_000_000).unwrap();
            assert!((l - &direct.lambda).amax() < 1e-8);
            assert!((v - &direct.v).amax() < 1e-8);
        }
        let a = sys.a_prime();
        let z = DVector::from_iterator(10, direct.lambda.iter().chain(direct.v.iter()).copied());
        assert!((a * z + sys.b_bar()).amax() < 1e-10);
    }

    #[test]
    fn injected_fixed_point_verifies_exactly() {
        let mdp = seeded_mdp(3, 7);
        let (phi, f) = tabular(&mdp);
        let fp = baseline_fixed_point(&mdp, &JointPolicy::uniform(3, mdp.action_sizes()), &phi, &f).unwrap();
        let agent = AgentRuntime::new(Role::Cooperative, vec![], fp.v.as_slice().to_vec(), fp.lambda.as_slice().to_vec());
        let report = verify_convergence(&[agent.clone(), agent], &fp, 0.0).unwrap();
        assert!(report.passed);
        assert!(report.agents.iter().all(|e| e.lambda == 0.0 && e.v == 0.0));
        assert!(report.to_csv().lines().count() == 3);
    }

    #[test]
    fn perturbed_parameters_fail_at_zero_tolerance() {
        let mdp = seeded_mdp(3, 7);
        let (phi, f) = tabular(&mdp);
        let fp = baseline_fixed_point(&mdp, &JointPolicy::uniform(3, mdp.action_sizes()), &phi, &f).unwrap();
        let mut v = fp.v.as_slice().to_vec();
        v[0] += 1e-9;
        let agent = AgentRuntime::new(Role::Cooperative, vec![], v, fp.lambda.as_slice().to_vec());
        assert!(!verify_convergence(std::slice::from_ref(&agent), &fp, 0.0).unwrap().passed);
        assert!(verify_convergence(&[agent], &fp, 1e-6).unwrap().passed);
    }

    #[test]
    fn action_blind_mdp_has_zero_drift() {
        // Transitions and rewards ignore the joint action, so every advantage vanishes.
        let (ns, na) = (3, 4);
        let base = [[0.2, 0.5, 0.3], [0.6, 0.1, 0.3], [0.3, 0.3, 0.4]];
        let transitions = (0..ns * na * ns).map(|k| base[k / (na * ns)][k % ns]).collect();
        let reward: Vec<f64> = (0..ns * na * ns).map(|k| (k / (na * ns)) as f64 - 1.0).collect();
        let mdp = NetworkedMdp::new(ns, vec![2, 2], transitions, vec![reward.clone(), reward], 0.8, vec![Role::Cooperative; 2], 100.0).unwrap();
        let (phi, f) = tabular(&mdp);
        let thetas = vec![vec![0.3, -0.2, 0.1, 0.5, 0.0, -0.4], vec![-0.1, 0.2, 0.7, 0.0, 0.3, 0.1]];
        let report = actor_stationarity_residual(&mdp, &phi, &f, &thetas, RewardTarget::TeamAverage, ParamBox::default()).unwrap();
        assert!(report.max_residual() < 1e-12, "{report:?}");
        assert!(report.interior.iter().all(|b| *b));
    }

    /// `sum_s d(s) V_theta'(s)` with `d` frozen at the reference policy; for
    /// tabular features the drift equals `(1 - gamma)` times its gradient.
    fn discounted_objective(mdp: &NetworkedMdp, phi: &StateFeatureMap, thetas: &[Vec<f64>], d: &DVector<f64>, agent: usize) -> f64 {
        let n = mdp.num_states();
        let policy = linear_softmax_policy(mdp, phi, thetas).unwrap();
        let p = mdp.transition_matrix(&policy).unwrap();
        let r = &mdp.reward_summaries(&policy).unwrap().per_agent_state[agent];
        let v = (DMatrix::identity(n, n) - p * mdp.gamma()).lu().solve(r).unwrap();
        d.dot(&v)
    }

    #[test]
    fn drift_matches_finite_difference_of_objective() {
        let mdp = seeded_mdp(3, 8);
        let (phi, f) = tabular(&mdp);
        let mut rng = stream(8, Stream::Init);
        let thetas: Vec<Vec<f64>> = (0..2).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let policy = linear_softmax_policy(&mdp, &phi, &thetas).unwrap();
        let sys = FixedPointSystem::new(&mdp, &policy, &phi, &f, RewardTarget::Agent(0)).unwrap();
        let fp = solve_fixed_point(&sys).unwrap();
        let drift = actor_drift(&mdp, &phi, &f, &thetas, &fp.lambda, &fp.v).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for k in 0..6 {
                let mut up = thetas.clone();
                up[i][k] += h;
                let mut down = thetas.clone();
                down[i][k] -= h;
                let fd = (discounted_objective(&mdp, &phi, &up, &sys.d_state, 0)
                    - discounted_objective(&mdp, &phi, &down, &sys.d_state, 0))
                    / (2.0 * h);
                let expect = (1.0 - mdp.gamma()) * fd;
                assert!((drift[i][k] - expect).abs() < 1e-7 * expect.abs().max(1e-3), "agent {i} coord {k}: {} vs {expect}", drift[i][k]);
            }
        }
    }

    #[test]
    fn attacked_and_team_fixed_points_differ() {
        let mdp = seeded_mdp(4, 9);
        let (phi, f) = tabular(&mdp);
        let policy = JointPolicy::uniform(4, mdp.action_sizes());
        let adv = solve_fixed_point(&FixedPointSystem::new(&mdp, &policy, &phi, &f, RewardTarget::Agent(0)).unwrap()).unwrap();
        let team = baseline_fixed_point(&mdp, &policy, &phi, &f).unwrap();
        assert!((adv.lambda - team.lambda).amax() > 0.1);
    }
}
