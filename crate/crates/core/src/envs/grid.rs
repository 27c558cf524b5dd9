//! Multi-agent grid-world with simultaneous moves and collision penalties.
//!
//! `(0, 0)` is the top-left cell; `x` grows to the right and `y` downwards.
//! Actions are `0: Left, 1: Right, 2: Up, 3: Down, 4: Stay`; a move that would
//! leave the grid keeps the agent in place.

use std::path::Path;

use rand::Rng;
use serde::Deserialize;

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const NUM_MOVES: usize = 5;

pub type Positions = Vec<(usize, usize)>;

#[derive(Clone, Debug, PartialEq)]
pub struct GridWorldConfig {
    pub width: usize,
    pub height: usize,
    pub desired: Positions,
    pub gamma: f64,
}

#[derive(Clone, Debug)]
pub struct GridWorld {
    config: GridWorldConfig,
    action_sizes: Vec<usize>,
}

impl GridWorld {
    pub fn new(config: GridWorldConfig) -> Result<Self> {
        if config.width == 0 || config.height == 0 {
            return Err(Error::Config("grid must have at least one cell".into()));
        }
        if config.desired.is_empty() {
            return Err(Error::Config("grid-world needs at least one agent".into()));
        }
        if let Some((i, p)) = config
            .desired
            .iter()
            .enumerate()
            .find(|(_, (x, y))| *x >= config.width || *y >= config.height)
        {
            return Err(Error::Config(format!(
                "desired position {p:?} of agent {i} outside the {}x{} grid",
                config.width, config.height
            )));
        }
        if !(0.0..1.0).contains(&config.gamma) {
            return Err(Error::Config(format!("discount {} outside [0, 1)", config.gamma)));
        }
        let action_sizes = vec![NUM_MOVES; config.desired.len()];
        Ok(Self { config, action_sizes })
    }

    pub fn config(&self) -> &GridWorldConfig {
        &self.config
    }

    fn clamp(&self, (x, y): (usize, usize)) -> (usize, usize) {
        (x.min(self.config.width - 1), y.min(self.config.height - 1))
    }

    fn apply_move(&self, pos: (usize, usize), action: usize) -> (usize, usize) {
        let (x, y) = self.clamp(pos);
        let (w, h) = (self.config.width, self.config.height);
        match action {
            0 => (x.saturating_sub(1), y),
            1 => ((x + 1).min(w - 1), y),
            2 => (x, y.saturating_sub(1)),
            3 => (x, (y + 1).min(h - 1)),
            _ => (x, y),
        }
    }

    /// Moves every agent simultaneously from the pre-step positions, then
    /// scores `-|x - x_des| - |y - y_des| - q` where `q` counts the other
    /// agents sharing the new cell. Agents swapping cells do not collide.
    pub fn grid_step(&self, positions: &[(usize, usize)], actions: &[usize]) -> (Positions, Vec<f64>) {
        let next: Positions = positions
            .iter()
            .zip(actions.iter().chain(std::iter::repeat(&4)))
            .map(|(p, a)| self.apply_move(*p, *a))
            .collect();
        let rewards = self.rewards(&next);
        (next, rewards)
    }

    pub fn rewards(&self, positions: &[(usize, usize)]) -> Vec<f64> {
        positions
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let (xd, yd) = self.config.desired[i];
                let collisions = positions
                    .iter()
                    .enumerate()
                    .filter(|&(j, p)| j != i && *p == (x, y))
                    .count();
                -((x.abs_diff(xd) + y.abs_diff(yd) + collisions) as f64)
            })
            .collect()
    }

    /// Normalised coordinates `[x_1, y_1, ..., x_N, y_N]` in `[0, 1]`.
    pub fn grid_features(&self, positions: &[(usize, usize)]) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * positions.len());
        self.write_features(positions, &mut out);
        out
    }

    fn write_features(&self, positions: &[(usize, usize)], out: &mut Vec<f64>) {
        let scale = |v: usize, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.0 };
        out.clear();
        for &(x, y) in positions {
            out.push(scale(x, self.config.width));
            out.push(scale(y, self.config.height));
        }
    }

    pub fn terminal_check(&self, positions: &[(usize, usize)]) -> bool {
        positions.len() == self.config.desired.len() && positions.iter().zip(&self.config.desired).all(|(p, d)| p == d)
    }

    /// Independent uniform cell per agent; co-location is allowed.
    pub fn random_positions(&self, rng: &mut StreamRng) -> Positions {
        (0..self.config.desired.len())
            .map(|_| (rng.random_range(0..self.config.width), rng.random_range(0..self.config.height)))
            .collect()
    }
}

impl Environment for GridWorld {
    type State = Positions;

    fn num_agents(&self) -> usize {
        self.config.desired.len()
    }

    fn action_sizes(&self) -> &[usize] {
        &self.action_sizes
    }

    fn gamma(&self) -> f64 {
        self.config.gamma
    }

    fn state_dim(&self) -> usize {
        2 * self.num_agents()
    }

    fn pair_dim(&self) -> usize {
        2 * self.num_agents()
    }

    fn reset(&self, rng: &mut StreamRng) -> Positions {
        self.random_positions(rng)
    }

    fn step(&self, s: &Positions, actions: &[usize], _rng: &mut StreamRng) -> Result<(Positions, Vec<f64>)> {
        if actions.len() != self.num_agents() {
            return Err(Error::Dimension(format!("{} actions for {} agents", actions.len(), self.num_agents())));
        }
        Ok(self.grid_step(s, actions))
    }

    fn is_terminal(&self, s: &Positions) -> bool {
        self.terminal_check(s)
    }

    fn state_features(&self, s: &Positions, out: &mut Vec<f64>) {
        self.write_features(s, out);
    }

    /// Dynamics are deterministic, so the successor positions are a function
    /// of `(s, a)` and encode the pair exactly as far as rewards are concerned.
    fn pair_features(&self, _s: &Positions, _actions: &[usize], next: &Positions, out: &mut Vec<f64>) {
        self.write_features(next, out);
    }
}

/// Grid scenario description.
///
/// ```toml
/// width = 4
/// height = 4
/// num_agents = 3
/// desired = [[3, 3], [0, 3], [3, 0]]
/// adversary = 0   # optional
/// gamma = 0.95    # optional
/// ```
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridScenario {
    pub width: usize,
    pub height: usize,
    pub num_agents: usize,
    pub desired: Vec<(usize, usize)>,
    pub adversary: Option<usize>,
    pub gamma: Option<f64>,
}

impl GridScenario {
    pub const DEFAULT_GAMMA: f64 = 0.95;

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn world(&self) -> Result<GridWorld> {
        if self.desired.len() != self.num_agents {
            return Err(Error::Config(format!(
                "num_agents = {} but {} desired positions",
                self.num_agents,
                self.desired.len()
            )));
        }
        if self.adversary.is_some_and(|j| j >= self.num_agents) {
            return Err(Error::Config(format!("adversary {:?} outside 0..{}", self.adversary, self.num_agents)));
        }
        GridWorld::new(GridWorldConfig {
            width: self.width,
            height: self.height,
            desired: self.desired.clone(),
            gamma: self.gamma.unwrap_or(Self::DEFAULT_GAMMA),
        })
    }
}
