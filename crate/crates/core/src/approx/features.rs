use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_FEATURE_BOUND: f64 = 1e3;
const RANK_RATIO: f64 = 1e-8;
const MAX_TABULAR_ENTRIES: usize = 10_000;

/// Rejects matrices whose smallest singular value is not above
/// `1e-8 * largest`, or which have more columns than rows.
pub fn check_full_column_rank(matrix: &DMatrix<f64>, what: &str) -> Result<()> {
    if matrix.ncols() == 0 || matrix.nrows() < matrix.ncols() {
        return Err(Error::Rank { what: what.to_string(), ratio: 0.0 });
    }
    let sv = matrix.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if ratio <= RANK_RATIO {
        return Err(Error::Rank { what: what.to_string(), ratio });
    }
    Ok(())
}

fn check_bound(matrix: &DMatrix<f64>, bound: f64, what: &str) -> Result<()> {
    if let Some(x) = matrix.iter().find(|x| !(x.is_finite() && x.abs() <= bound)) {
        return Err(Error::Parameter(format!("{what} entry {x} exceeds bound {bound}")));
    }
    Ok(())
}

fn row_major(matrix: &DMatrix<f64>) -> Vec<f64> {
    matrix.transpose().as_slice().to_vec()
}

/// State features `phi(s)`, materialised as the `|S| x L` matrix `Phi`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateFeatureMap {
    matrix: DMatrix<f64>,
    rows: Vec<f64>,
}

impl StateFeatureMap {
    pub fn new(matrix: DMatrix<f64>, bound: f64) -> Result<Self> {
        check_bound(&matrix, bound, "state feature")?;
        check_full_column_rank(&matrix, "state feature matrix")?;
        let rows = row_major(&matrix);
        Ok(Self { matrix, rows })
    }

    pub fn tabular(num_states: usize) -> Self {
        let matrix = DMatrix::identity(num_states, num_states);
        let rows = row_major(&matrix);
        Self { matrix, rows }
    }

    /// Gaussian bumps over the state index with `count` evenly spaced centres.
    pub fn radial_basis(num_states: usize, count: usize, width: f64) -> Result<Self> {
        if count == 0 || width <= 0.0 {
            return Err(Error::Config("radial basis needs count >= 1 and width > 0".into()));
        }
        let span = (num_states.max(2) - 1) as f64;
        let centre = |l: usize| if count == 1 { 0.0 } else { l as f64 * span / (count - 1) as f64 };
        let matrix = DMatrix::from_fn(num_states, count, |s, l| {
            let d = s as f64 - centre(l);
            (-d * d / (2.0 * width * width)).exp()
        });
        Self::new(matrix, DEFAULT_FEATURE_BOUND)
    }

    pub fn num_states(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn features(&self, s: usize) -> &[f64] {
        let l = self.dim();
        &self.rows[s * l..(s + 1) * l]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// State-action features `f(s,a)`, materialised as the `|S||A| x M` matrix
/// `F` with row index `s * |A| + a`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateActionFeatureMap {
    matrix: DMatrix<f64>,
    rows: Vec<f64>,
    num_actions: usize,
    action_independent: bool,
}

impl StateActionFeatureMap {
    pub fn new(matrix: DMatrix<f64>, num_actions: usize, bound: f64) -> Result<Self> {
        if num_actions == 0 || !matrix.nrows().is_multiple_of(num_actions) {
            return Err(Error::Dimension(format!(
                "{} rows is not a multiple of {num_actions} actions",
                matrix.nrows()
            )));
        }
        check_bound(&matrix, bound, "state-action feature")?;
        check_full_column_rank(&matrix, "state-action feature matrix")?;
        let ns = matrix.nrows() / num_actions;
        let action_independent = (0..ns).all(|s| {
            (1..num_actions).all(|a| matrix.row(s * num_actions + a) == matrix.row(s * num_actions))
        });
        let rows = row_major(&matrix);
        Ok(Self { matrix, rows, num_actions, action_independent })
    }

    pub fn tabular(num_states: usize, num_actions: usize) -> Self {
        let matrix = DMatrix::identity(num_states * num_actions, num_states * num_actions);
        let rows = row_major(&matrix);
        Self { matrix, rows, num_actions, action_independent: num_actions == 1 }
    }

    /// `f(s,a) = e_a (x) phi(s)`.
    pub fn product(phi: &StateFeatureMap, num_actions: usize) -> Result<Self> {
        let (ns, l) = (phi.num_states(), phi.dim());
        let matrix = DMatrix::from_fn(ns * num_actions, num_actions * l, |row, col| {
            let (s, a) = (row / num_actions, row % num_actions);
            if col / l == a {
                phi.matrix[(s, col % l)]
            } else {
                0.0
            }
        });
        Self::new(matrix, num_actions, f64::INFINITY)
    }

    /// `f(s,a) = phi(s)`: reward estimates that ignore the joint action.
    pub fn action_independent(phi: &StateFeatureMap, num_actions: usize) -> Result<Self> {
        let (ns, l) = (phi.num_states(), phi.dim());
        let matrix = DMatrix::from_fn(ns * num_actions, l, |row, col| phi.matrix[(row / num_actions, col)]);
        Self::new(matrix, num_actions, f64::INFINITY)
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_action_independent(&self) -> bool {
        self.action_independent
    }

    pub fn features(&self, s: usize, a: usize) -> &[f64] {
        let m = self.dim();
        let row = s * self.num_actions + a;
        &self.rows[row * m..(row + 1) * m]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Identity features for exact representation: `Phi = I_|S|`, `F = I_|S||A|`.
pub fn build_tabular_features(
    num_states: usize,
    num_actions: usize,
) -> Result<(StateFeatureMap, StateActionFeatureMap)> {
    let entries = num_states.checked_mul(num_actions).filter(|n| *n <= MAX_TABULAR_ENTRIES);
    if entries.is_none() || num_states == 0 || num_actions == 0 {
        return Err(Error::Config(format!(
            "tabular features need 1 <= |S|*|A| <= {MAX_TABULAR_ENTRIES}, got {num_states}*{num_actions}"
        )));
    }
    Ok((StateFeatureMap::tabular(num_states), StateActionFeatureMap::tabular(num_states, num_actions)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::network::Network;
    use crate::rng::{stream, Stream};
    use rand::Rng;

    #[test]
    fn tabular_features_are_identities() {
        let (phi, f) = build_tabular_features(2, 2).unwrap();
        assert_eq!(phi.matrix(), &DMatrix::<f64>::identity(2, 2));
        assert_eq!(f.matrix(), &DMatrix::<f64>::identity(4, 4));
        check_full_column_rank(phi.matrix(), "phi").unwrap();
        check_full_column_rank(f.matrix(), "f").unwrap();
        assert_eq!(f.features(1, 0), &[0.0, 0.0, 1.0, 0.0]);
        assert!(build_tabular_features(200, 100).is_err());
    }

    #[test]
    fn rank_deficient_features_are_rejected() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(StateFeatureMap::new(m, 10.0), Err(Error::Rank { .. })));
        let wide = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(StateFeatureMap::new(wide, 10.0).is_err());
    }

    #[test]
    fn unbounded_features_are_rejected() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 50.0]);
        assert!(matches!(StateFeatureMap::new(m, 10.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn identity_features_read_off_parameters() {
        let phi = StateFeatureMap::tabular(3);
        let net = Network::linear(3, 1);
        let v = [0.5, -1.0, 2.0];
        for s in 0..3 {
            assert_eq!(net.eval_scalar(&v, phi.features(s)).unwrap(), v[s]);
            assert_eq!(net.eval_scalar(&[0.0; 3], phi.features(s)).unwrap(), 0.0);
        }
    }

    #[test]
    fn value_and_reward_estimates_match_dot_products() {
        let mut rng = stream(31, Stream::Init);
        let phi = StateFeatureMap::new(DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0)), 10.0).unwrap();
        let f = StateActionFeatureMap::product(&phi, 2).unwrap();
        let v: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lambda: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        for s in 0..3 {
            let expect: f64 = (0..2).map(|l| v[l] * phi.matrix()[(s, l)]).sum();
            assert!((Network::linear(2, 1).eval_scalar(&v, phi.features(s)).unwrap() - expect).abs() < 1e-14);
            for a in 0..2 {
                let expect: f64 = (0..4).map(|m| lambda[m] * f.matrix()[(s * 2 + a, m)]).sum();
                let got = Network::linear(4, 1).eval_scalar(&lambda, f.features(s, a)).unwrap();
                assert!((got - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn action_independent_rows_coincide() {
        let phi = StateFeatureMap::radial_basis(6, 3, 1.5).unwrap();
        let f = StateActionFeatureMap::action_independent(&phi, 4).unwrap();
        assert!(f.is_action_independent());
        let net = Network::linear(3, 1);
        let lambda = [0.3, -0.7, 1.1];
        for s in 0..6 {
            let first = net.eval_scalar(&lambda, f.features(s, 0)).unwrap();
            for a in 1..4 {
                assert_eq!(net.eval_scalar(&lambda, f.features(s, a)).unwrap(), first);
            }
        }
        assert!(!StateActionFeatureMap::product(&phi, 4).unwrap().is_action_independent());
    }
}
