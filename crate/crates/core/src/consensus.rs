//! Communication graphs, row-stochastic consensus weights and their analysis.
//!
//! `C[(i, j)]` is the weight agent `i` places on the parameters transmitted by
//! agent `j`; an edge `(i, j)` in a [`CommGraph`] means `i` hears `j`. The
//! adversary's row is the standard basis vector on itself: it transmits but
//! never mixes.

use std::borrow::Cow;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

const ROW_SUM_TOL: f64 = 1e-12;
const LIMIT_TOL: f64 = 1e-12;
const LIMIT_MAX_ITER: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommGraph {
    num_agents: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl CommGraph {
    /// Self-loops are implicit and dropped from `edges`.
    pub fn new(num_agents: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if num_agents == 0 {
            return Err(Error::Graph("graph has no agents".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= num_agents || j >= num_agents {
                return Err(Error::Graph(format!("edge ({i}, {j}) references an agent >= {num_agents}")));
            }
            if i != j {
                set.insert((i, j));
            }
        }
        Ok(Self { num_agents, edges: set })
    }

    pub fn fully_connected(num_agents: usize) -> Result<Self> {
        Self::new(num_agents, (0..num_agents).flat_map(|i| (0..num_agents).map(move |j| (i, j))))
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i == j || self.edges.contains(&(i, j))
    }

    /// Agents `i` hears from, itself included, in increasing order.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.num_agents).filter(|&j| self.has_edge(i, j)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusWeights {
    matrix: DMatrix<f64>,
    eta: f64,
    adversary: Option<usize>,
    /// `Some(j)` when row `i` is exactly `e_j`, so mixing is a copy.
    basis_rows: Vec<Option<usize>>,
}

impl ConsensusWeights {
    /// Wraps a square matrix without validating it; see [`Self::check`].
    /// The lower bound `eta` defaults to `1 / (2N)`.
    pub fn from_matrix(matrix: DMatrix<f64>, adversary: Option<usize>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(Error::Dimension(format!("consensus matrix is {}x{}", matrix.nrows(), matrix.ncols())));
        }
        if adversary.is_some_and(|j| j >= n) {
            return Err(Error::Config(format!("adversary {adversary:?} outside 0..{n}")));
        }
        let basis_rows = (0..n)
            .map(|i| {
                let row = matrix.row(i);
                let ones: Vec<usize> = (0..n).filter(|&j| row[j] == 1.0).collect();
                let zeros = (0..n).filter(|&j| row[j] == 0.0).count();
                (ones.len() == 1 && zeros == n - 1).then(|| ones[0])
            })
            .collect();
        Ok(Self { matrix, eta: 1.0 / (2.0 * n as f64), adversary, basis_rows })
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn adversary(&self) -> Option<usize> {
        self.adversary
    }

    pub fn num_agents(&self) -> usize {
        self.matrix.nrows()
    }

    /// Runs every structural check against `graph` (or the matrix support
    /// when no graph is given).
    pub fn check(&self, graph: Option<&CommGraph>) -> ConsensusReport {
        let n = self.num_agents();
        let m = &self.matrix;
        let mut checks = Vec::new();

        let mut problems = Vec::new();
        for i in 0..n {
            let row = m.row(i);
            if let Some(j) = (0..n).find(|&j| !(row[j].is_finite() && row[j] >= 0.0)) {
                problems.push(format!("c({i},{j}) = {}", row[j]));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                problems.push(format!("row {i} sums to {sum}"));
            }
        }
        checks.push(WeightCheck::new("row_stochastic", problems));

        let eta_ok = self.eta > 0.0 && self.eta < 1.0;
        let mut problems: Vec<String> =
            if eta_ok { Vec::new() } else { vec![format!("eta = {} outside (0, 1)", self.eta)] };
        for i in 0..n {
            for j in 0..n {
                let x = m[(i, j)];
                if x > 0.0 && x < self.eta {
                    problems.push(format!("c({i},{j}) = {x} below eta = {}", self.eta));
                }
            }
        }
        checks.push(WeightCheck::new("lower_bound", problems));

        let mut problems = Vec::new();
        if let Some(g) = graph {
            if g.num_agents() != n {
                problems.push(format!("graph has {} agents, matrix {n}", g.num_agents()));
            } else {
                for i in 0..n {
                    for j in 0..n {
                        if m[(i, j)] != 0.0 && !g.has_edge(i, j) {
                            problems.push(format!("c({i},{j}) = {} but ({i},{j}) is not an edge", m[(i, j)]));
                        }
                    }
                }
            }
        }
        checks.push(WeightCheck::new("respects_graph", problems));

        let problems = match self.adversary {
            Some(j) if self.basis_rows[j] != Some(j) => vec![format!("row {j} is not e_{j}")],
            _ => Vec::new(),
        };
        checks.push(WeightCheck::new("adversary_row", problems));

        let spectral = spectral_condition(m);
        let problems = if spectral < 1.0 {
            Vec::new()
        } else {
            vec![format!("spectral value {spectral} not below 1")]
        };
        checks.push(WeightCheck::new("spectral", problems));
        ConsensusReport { checks, spectral }
    }

    /// Fails with a configuration error listing every violated check.
    pub fn validate(&self, graph: Option<&CommGraph>) -> Result<()> {
        let report = self.check(graph);
        let failures: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect();
        if failures.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("consensus weights rejected: {}", failures.join("; "))))
        }
    }

    /// Dense text, one row per line.
    pub fn to_dense_text(&self) -> String {
        let mut out = String::new();
        for row in self.matrix.row_iter() {
            let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }
}

/// Uniform weights over each agent's in-neighbourhood (itself included);
/// the adversary's row becomes its own basis vector.
pub fn build_uniform_weights(graph: &CommGraph, adversary: Option<usize>) -> Result<ConsensusWeights> {
    let n = graph.num_agents();
    if adversary.is_some_and(|j| j >= n) {
        return Err(Error::Config(format!("adversary {adversary:?} outside 0..{n}")));
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        if Some(i) == adversary {
            m[(i, i)] = 1.0;
            continue;
        }
        let nbrs = graph.in_neighbors(i);
        if nbrs.is_empty() {
            return Err(Error::Graph(format!("agent {i} has an empty neighbourhood")));
        }
        let w = 1.0 / nbrs.len() as f64;
        for j in nbrs {
            m[(i, j)] = w;
        }
    }
    ConsensusWeights::from_matrix(m, adversary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl WeightCheck {
    fn new(name: &'static str, problems: Vec<String>) -> Self {
        let passed = problems.is_empty();
        let detail = if passed { "ok".to_string() } else { problems.join(", ") };
        Self { name, passed, detail }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusReport {
    pub checks: Vec<WeightCheck>,
    pub spectral: f64,
}

impl ConsensusReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&WeightCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// `C^T (I - 11^T/N) C`, symmetric positive semi-definite.
fn disagreement_gram(c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.nrows();
    let centring = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    c.transpose() * centring * c
}

/// Spectral norm of `C^T (I - 11^T/N) C`.
pub fn spectral_condition(c: &DMatrix<f64>) -> f64 {
    spectral_condition_mean(std::slice::from_ref(c))
}

/// Spectral norm of the average of `C_t^T (I - 11^T/N) C_t` over equally
/// likely matrices: exact for a deterministic cycle, an empirical mean for
/// sampled schedules.
pub fn spectral_condition_mean(matrices: &[DMatrix<f64>]) -> f64 {
    let Some(first) = matrices.first() else { return 0.0 };
    let n = first.nrows();
    let mut mean = DMatrix::zeros(n, n);
    for c in matrices {
        mean += disagreement_gram(c);
    }
    mean /= matrices.len() as f64;
    // symmetrise against rounding before the symmetric solver
    let sym = (&mean + mean.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.amax()
}

/// `out_i = sum_j C(i,j) in_j` for every agent.
pub fn apply_consensus(params: &[Vec<f64>], weights: &ConsensusWeights) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); params.len()];
    apply_consensus_into(params, weights, &mut out)?;
    Ok(out)
}

/// Synchronous mixing: reads every input before writing `out`. Basis rows
/// copy the selected input bit for bit.
pub fn apply_consensus_into(params: &[Vec<f64>], weights: &ConsensusWeights, out: &mut [Vec<f64>]) -> Result<()> {
    let n = weights.num_agents();
    if params.len() != n || out.len() != n {
        return Err(Error::Config(format!("{} parameter vectors for {n} agents", params.len())));
    }
    let len = params[0].len();
    if let Some(j) = params.iter().position(|p| p.len() != len) {
        return Err(Error::Dimension(format!(
            "agent {j} has {} parameters, agent 0 has {len}",
            params[j].len()
        )));
    }
    let m = &weights.matrix;
    for (i, dst) in out.iter_mut().enumerate() {
        dst.clear();
        if let Some(j) = weights.basis_rows[i] {
            dst.extend_from_slice(&params[j]);
            continue;
        }
        dst.resize(len, 0.0);
        for (j, src) in params.iter().enumerate() {
            let w = m[(i, j)];
            if w != 0.0 {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusLimit {
    pub values: Vec<f64>,
    pub iterations: usize,
}

/// Iterates `x <- C x` until successive iterates differ by less than `1e-12`.
pub fn linear_consensus_limit(weights: &ConsensusWeights, initial: &[f64]) -> Result<ConsensusLimit> {
    let n = weights.num_agents();
    if initial.len() != n {
        return Err(Error::Dimension(format!("{} initial values for {n} agents", initial.len())));
    }
    let mut x: Vec<Vec<f64>> = initial.iter().map(|v| vec![*v]).collect();
    let mut next = vec![Vec::new(); n];
    let mut residual = f64::INFINITY;
    for iterations in 1..=LIMIT_MAX_ITER {
        apply_consensus_into(&x, weights, &mut next)?;
        residual = x.iter().zip(&next).map(|(a, b)| (a[0] - b[0]).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut x, &mut next);
        if residual < LIMIT_TOL {
            return Ok(ConsensusLimit { values: x.into_iter().map(|v| v[0]).collect(), iterations });
        }
    }
    Err(Error::Convergence { iterations: LIMIT_MAX_ITER, residual })
}

/// Sequence of consensus matrices over training time.
#[derive(Clone, Debug, PartialEq)]
pub enum ConsensusSchedule {
    Static(ConsensusWeights),
    /// `C_t = cycle[t mod len]`.
    Cycle(Vec<ConsensusWeights>),
    /// Each non-self edge of `graph` is dropped independently with
    /// `drop_probability` at every step; weights are uniform over what remains.
    RandomDrop { graph: CommGraph, adversary: Option<usize>, drop_probability: f64 },
}

impl ConsensusSchedule {
    pub fn num_agents(&self) -> usize {
        match self {
            ConsensusSchedule::Static(w) => w.num_agents(),
            ConsensusSchedule::Cycle(ws) => ws[0].num_agents(),
            ConsensusSchedule::RandomDrop { graph, .. } => graph.num_agents(),
        }
    }

    pub fn adversary(&self) -> Option<usize> {
        match self {
            ConsensusSchedule::Static(w) => w.adversary(),
            ConsensusSchedule::Cycle(ws) => ws[0].adversary(),
            ConsensusSchedule::RandomDrop { adversary, .. } => *adversary,
        }
    }

    pub fn weights_at(&self, t: u64, rng: &mut StreamRng) -> Result<Cow<'_, ConsensusWeights>> {
        match self {
            ConsensusSchedule::Static(w) => Ok(Cow::Borrowed(w)),
            ConsensusSchedule::Cycle(ws) => Ok(Cow::Borrowed(&ws[(t % ws.len() as u64) as usize])),
            ConsensusSchedule::RandomDrop { graph, adversary, drop_probability } => {
                let kept: Vec<(usize, usize)> =
                    graph.edges().filter(|_| rng.random::<f64>() >= *drop_probability).collect();
                let g = CommGraph::new(graph.num_agents(), kept)?;
                Ok(Cow::Owned(build_uniform_weights(&g, *adversary)?))
            }
        }
    }

    /// The matrices the structural checks apply to: every matrix of a
    /// deterministic schedule, the full-graph weights of a random one.
    pub fn matrices(&self) -> Result<Vec<ConsensusWeights>> {
        match self {
            ConsensusSchedule::Static(w) => Ok(vec![w.clone()]),
            ConsensusSchedule::Cycle(ws) => Ok(ws.clone()),
            ConsensusSchedule::RandomDrop { graph, adversary, .. } => Ok(vec![build_uniform_weights(graph, *adversary)?]),
        }
    }

    /// Spectral value of the expected disagreement Gram matrix: exact over the
    /// period for deterministic schedules, an empirical mean over `samples`
    /// draws for random ones.
    pub fn spectral_condition(&self, samples: usize, rng: &mut StreamRng) -> Result<f64> {
        let matrices: Vec<DMatrix<f64>> = match self {
            ConsensusSchedule::Static(w) => vec![w.matrix.clone()],
            ConsensusSchedule::Cycle(ws) => ws.iter().map(|w| w.matrix.clone()).collect(),
            ConsensusSchedule::RandomDrop { .. } => (0..samples.max(1) as u64)
                .map(|t| self.weights_at(t, rng).map(|w| w.matrix.clone()))
                .collect::<Result<_>>()?,
        };
        Ok(spectral_condition_mean(&matrices))
    }

    /// Structural checks on every matrix the schedule can produce (static and
    /// cyclic schedules) or on the full graph (random dropping, whose
    /// sub-graphs inherit the structure).
    pub fn validate(&self, graphs: Option<&[CommGraph]>) -> Result<()> {
        match self {
            ConsensusSchedule::Static(w) => w.validate(graphs.and_then(|g| g.first())),
            ConsensusSchedule::Cycle(ws) => {
                if ws.is_empty() {
                    return Err(Error::Config("empty consensus cycle".into()));
                }
                for (k, w) in ws.iter().enumerate() {
                    let g = graphs.and_then(|g| g.get(k));
                    let report = w.check(g);
                    // individual matrices of a cycle may fail the spectral
                    // test; only the period average has to pass
                    if let Some(c) = report.checks.iter().find(|c| !c.passed && c.name != "spectral") {
                        return Err(Error::Config(format!("cycle matrix {k}: {}: {}", c.name, c.detail)));
                    }
                }
                let spectral = spectral_condition_mean(&ws.iter().map(|w| w.matrix.clone()).collect::<Vec<_>>());
                if spectral >= 1.0 {
                    return Err(Error::Config(format!("cycle spectral value {spectral} not below 1")));
                }
                Ok(())
            }
            ConsensusSchedule::RandomDrop { graph, adversary, drop_probability } => {
                if !(0.0..1.0).contains(drop_probability) {
                    return Err(Error::Config(format!("drop probability {drop_probability} outside [0, 1)")));
                }
                build_uniform_weights(graph, *adversary)?.validate(Some(graph))
            }
        }
    }
}

/// Schedule / matrix description file.
///
/// ```toml
/// num_agents = 3
/// adversary = 0          # optional
/// eta = 0.1              # optional lower bound
/// matrix = [[1, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5]]   # explicit weights, or
/// [[step]]               # a cycle of graphs with uniform weights
/// edges = [[1, 0], [2, 0]]
/// [[step]]
/// complete = true
/// drop_probability = 0.2 # with a single step: random edge dropping
/// ```
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub num_agents: usize,
    pub adversary: Option<usize>,
    pub eta: Option<f64>,
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub step: Vec<StepGraph>,
    pub drop_probability: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepGraph {
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
    #[serde(default)]
    pub complete: bool,
}

impl StepGraph {
    fn graph(&self, n: usize) -> Result<CommGraph> {
        if self.complete {
            CommGraph::fully_connected(n)
        } else {
            CommGraph::new(n, self.edges.iter().copied())
        }
    }
}

/// A parsed schedule file: the schedule plus the graphs it was built from.
#[derive(Clone, Debug)]
pub struct ScheduleSpec {
    pub schedule: ConsensusSchedule,
    pub graphs: Vec<CommGraph>,
}

impl ScheduleFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn build(&self) -> Result<ScheduleSpec> {
        let n = self.num_agents;
        let graphs: Vec<CommGraph> = self.step.iter().map(|s| s.graph(n)).collect::<Result<_>>()?;
        let eta = |w: ConsensusWeights| match self.eta {
            Some(e) => w.with_eta(e),
            None => w,
        };
        let schedule = match (&self.matrix, self.drop_probability) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("`drop_probability` cannot be combined with `matrix`".into()))
            }
            (Some(rows), None) => {
                if graphs.len() > 1 {
                    return Err(Error::Config("an explicit `matrix` takes at most one [[step]] graph".into()));
                }
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Dimension(format!("`matrix` must be {n}x{n}")));
                }
                let m = DMatrix::from_row_iterator(n, n, rows.iter().flatten().copied());
                ConsensusSchedule::Static(eta(ConsensusWeights::from_matrix(m, self.adversary)?))
            }
            (None, Some(p)) => {
                let [graph] = graphs.as_slice() else {
                    return Err(Error::Config("random dropping needs exactly one [[step]] graph".into()));
                };
                ConsensusSchedule::RandomDrop { graph: graph.clone(), adversary: self.adversary, drop_probability: p }
            }
            (None, None) => {
                if graphs.is_empty() {
                    return Err(Error::Config("schedule needs `matrix` or at least one [[step]]".into()));
                }
                let ws = graphs
                    .iter()
                    .map(|g| build_uniform_weights(g, self.adversary).map(eta))
                    .collect::<Result<Vec<_>>>()?;
                if ws.len() == 1 {
                    ConsensusSchedule::Static(ws.into_iter().next().unwrap())
                } else {
                    ConsensusSchedule::Cycle(ws)
                }
            }
        };
        Ok(ScheduleSpec { schedule, graphs })
    }
}
