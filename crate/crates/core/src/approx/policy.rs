use crate::approx::network::{dot, Network, Tape};
use crate::error::{Error, Result};

pub const DEFAULT_THETA_MAX: f64 = 50.0;

/// Coordinate box `[-max_abs, max_abs]^m`; projection is clamping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamBox {
    pub max_abs: f64,
}

impl Default for ParamBox {
    fn default() -> Self {
        Self { max_abs: DEFAULT_THETA_MAX }
    }
}

impl ParamBox {
    pub fn project(&self, params: &mut [f64]) {
        for p in params {
            *p = p.clamp(-self.max_abs, self.max_abs);
        }
    }

    pub fn contains(&self, params: &[f64]) -> bool {
        params.iter().all(|p| p.abs() <= self.max_abs)
    }

    /// Strictly inside the box (no coordinate on a face).
    pub fn is_interior(&self, params: &[f64]) -> bool {
        params.iter().all(|p| p.abs() < self.max_abs)
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.into_iter().map(|e| e / sum).collect();
    debug_assert!(probs.iter().all(|p| *p > 0.0), "softmax underflow: {logits:?}");
    probs
}

fn check_finite(theta: &[f64]) -> Result<()> {
    if let Some(i) = theta.iter().position(|x| !x.is_finite()) {
        return Err(Error::Parameter(format!("policy parameter {i} is {}", theta[i])));
    }
    Ok(())
}

/// `pi(b|s) ∝ exp(theta^T x(s,b))` for explicit action features
/// `action_features[b] = x(s,b)`.
pub fn policy_probs(theta: &[f64], action_features: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_finite(theta)?;
    if let Some(x) = action_features.iter().find(|x| x.len() != theta.len()) {
        return Err(Error::Dimension(format!("action feature of length {} for {} parameters", x.len(), theta.len())));
    }
    let logits: Vec<f64> = action_features.iter().map(|x| dot(theta, x)).collect();
    Ok(softmax(&logits))
}

/// Score `x(s,a) - sum_b pi(b|s) x(s,b)` for explicit action features.
pub fn score_function(theta: &[f64], action_features: &[Vec<f64>], action: usize) -> Result<Vec<f64>> {
    if action >= action_features.len() {
        return Err(Error::Input(format!("action {action} >= {}", action_features.len())));
    }
    let probs = policy_probs(theta, action_features)?;
    let mut psi = action_features[action].clone();
    for (p, x) in probs.iter().zip(action_features) {
        for (out, xi) in psi.iter_mut().zip(x) {
            *out -= p * xi;
        }
    }
    Ok(psi)
}

/// `x(s,b) = e_b (x) phi(s)`, the action features realised by a linear
/// softmax head over state features.
pub fn linear_action_features(state_features: &[f64], action: usize, num_actions: usize) -> Vec<f64> {
    let l = state_features.len();
    let mut x = vec![0.0; l * num_actions];
    x[action * l..(action + 1) * l].copy_from_slice(state_features);
    x
}

/// Softmax policy over the logits produced by a [`Network`] head.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxPolicy {
    head: Network,
    bounds: ParamBox,
}

impl SoftmaxPolicy {
    pub fn new(head: Network, bounds: ParamBox) -> Result<Self> {
        if head.num_outputs() == 0 {
            return Err(Error::Config("policy head needs at least one output".into()));
        }
        Ok(Self { head, bounds })
    }

    pub fn head(&self) -> &Network {
        &self.head
    }

    pub fn bounds(&self) -> ParamBox {
        self.bounds
    }

    pub fn num_actions(&self) -> usize {
        self.head.num_outputs()
    }

    pub fn num_params(&self) -> usize {
        self.head.num_params()
    }

    pub fn probs(&self, theta: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::default();
        self.probs_with_tape(theta, input, &mut tape)
    }

    pub fn probs_with_tape(&self, theta: &[f64], input: &[f64], tape: &mut Tape) -> Result<Vec<f64>> {
        check_finite(theta)?;
        self.head.check(theta, input)?;
        Ok(softmax(self.head.forward(theta, input, tape)))
    }

    /// `grad_theta log pi(action|s; theta)`.
    pub fn score(&self, theta: &[f64], input: &[f64], action: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::default();
        let probs = self.probs_with_tape(theta, input, &mut tape)?;
        let mut psi = vec![0.0; self.num_params()];
        self.accumulate_score(theta, &tape, &probs, action, 1.0, &mut psi)?;
        Ok(psi)
    }

    /// Adds `scale * grad log pi(action|s)` to `out`, reusing the forward
    /// pass in `tape` and the probabilities it produced.
    pub fn accumulate_score(
        &self,
        theta: &[f64],
        tape: &Tape,
        probs: &[f64],
        action: usize,
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        if action >= probs.len() {
            return Err(Error::Input(format!("action {action} >= {}", probs.len())));
        }
        let upstream: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(b, p)| if b == action { 1.0 - p } else { -p })
            .collect();
        self.head.backward(theta, tape, &upstream, scale, out);
        Ok(())
    }
}
