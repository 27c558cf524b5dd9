use rand::Rng;

use crate::error::{Error, Result};

/// `y = W x` without bias; parameters are `W` row-major (`outputs x inputs`).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMap {
    inputs: usize,
    outputs: usize,
}

impl LinearMap {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs }
    }
}

/// Fully connected network with `tanh` hidden layers and a linear output
/// layer. Parameters are laid out layer by layer as `W_k` (row-major,
/// `sizes[k+1] x sizes[k]`) followed by `b_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self { sizes })
    }

    /// Two hidden layers of the given widths.
    pub fn two_hidden(inputs: usize, hidden: [usize; 2], outputs: usize) -> Result<Self> {
        Self::new(vec![inputs, hidden[0], hidden[1], outputs])
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// `(weight offset, bias offset)` of layer `k`.
    fn offsets(&self, k: usize) -> (usize, usize) {
        let mut off = 0;
        for l in 0..k {
            off += self.sizes[l + 1] * (self.sizes[l] + 1);
        }
        (off, off + self.sizes[k + 1] * self.sizes[k])
    }

    fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

/// A parameterised function `R^inputs -> R^outputs` whose parameters live
/// outside the object, so that agents can hold and mix their own copies.
#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    Linear(LinearMap),
    Mlp(Mlp),
}

/// Activations recorded by a forward pass for the matching backward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Network {
    pub fn linear(inputs: usize, outputs: usize) -> Self {
        Network::Linear(LinearMap::new(inputs, outputs))
    }

    pub fn num_inputs(&self) -> usize {
        match self {
            Network::Linear(l) => l.inputs,
            Network::Mlp(m) => m.sizes[0],
        }
    }

    pub fn num_outputs(&self) -> usize {
        match self {
            Network::Linear(l) => l.outputs,
            Network::Mlp(m) => *m.sizes.last().unwrap(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Network::Linear(l) => l.inputs * l.outputs,
            Network::Mlp(m) => m.num_params(),
        }
    }

    pub fn check(&self, params: &[f64], input: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "{} parameters for a network with {}",
                params.len(),
                self.num_params()
            )));
        }
        if input.len() != self.num_inputs() {
            return Err(Error::Dimension(format!(
                "input of length {} for a network with {} inputs",
                input.len(),
                self.num_inputs()
            )));
        }
        Ok(())
    }

    /// Initial parameters. Linear maps draw `U(-scale, scale)`; MLPs use
    /// Glorot-uniform weights (output layer shrunk by `scale`) and zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64) -> Vec<f64> {
        match self {
            Network::Linear(_) => (0..self.num_params())
                .map(|_| if scale > 0.0 { rng.random_range(-scale..scale) } else { 0.0 })
                .collect(),
            Network::Mlp(m) => {
                let mut params = vec![0.0; self.num_params()];
                for k in 0..m.num_layers() {
                    let (w, b) = m.offsets(k);
                    let (fan_in, fan_out) = (m.sizes[k], m.sizes[k + 1]);
                    let mut limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    if k + 1 == m.num_layers() {
                        limit *= scale;
                    }
                    for p in &mut params[w..b] {
                        *p = if limit > 0.0 { rng.random_range(-limit..limit) } else { 0.0 };
                    }
                }
                params
            }
        }
    }

    /// Forward pass recording activations in `tape`; returns the output.
    /// Shapes are the caller's responsibility (see [`Network::check`]).
    pub fn forward<'t>(&self, params: &[f64], input: &[f64], tape: &'t mut Tape) -> &'t [f64] {
        match self {
            Network::Linear(l) => {
                tape.acts.resize_with(2, Vec::new);
                tape.acts[0].clear();
                tape.acts[0].extend_from_slice(input);
                let out = &mut tape.acts[1];
                out.clear();
                out.extend(params.chunks(l.inputs).map(|row| dot(row, input)));
            }
            Network::Mlp(m) => {
                let layers = m.num_layers();
                tape.acts.resize_with(layers + 1, Vec::new);
                tape.acts[0].clear();
                tape.acts[0].extend_from_slice(input);
                for k in 0..layers {
                    let (w, b) = m.offsets(k);
                    let (fan_in, fan_out) = (m.sizes[k], m.sizes[k + 1]);
                    let (prev, rest) = tape.acts.split_at_mut(k + 1);
                    let x = &prev[k];
                    let y = &mut rest[0];
                    y.clear();
                    let weights = &params[w..b];
                    let biases = &params[b..b + fan_out];
                    y.extend(weights.chunks(fan_in).zip(biases).map(|(row, bias)| dot(row, x) + bias));
                    if k + 1 < layers {
                        y.iter_mut().for_each(|z| *z = z.tanh());
                    }
                }
            }
        }
        tape.output()
    }

    /// Accumulates `scale * J^T upstream` into `grad`, where `J` is the
    /// Jacobian of the output recorded in `tape` with respect to `params`.
    pub fn backward(&self, params: &[f64], tape: &Tape, upstream: &[f64], scale: f64, grad: &mut [f64]) {
        match self {
            Network::Linear(l) => {
                let x = &tape.acts[0];
                for (k, u) in upstream.iter().enumerate() {
                    let g = scale * u;
                    if g != 0.0 {
                        axpy(g, x, &mut grad[k * l.inputs..(k + 1) * l.inputs]);
                    }
                }
            }
            Network::Mlp(m) => {
                let mut delta: Vec<f64> = upstream.iter().map(|u| scale * u).collect();
                let mut next = Vec::new();
                for k in (0..m.num_layers()).rev() {
                    let (w, b) = m.offsets(k);
                    let fan_in = m.sizes[k];
                    let x = &tape.acts[k];
                    for (j, d) in delta.iter().enumerate() {
                        if *d != 0.0 {
                            axpy(*d, x, &mut grad[w + j * fan_in..w + (j + 1) * fan_in]);
                        }
                        grad[b + j] += d;
                    }
                    if k > 0 {
                        next.clear();
                        next.resize(fan_in, 0.0);
                        for (j, d) in delta.iter().enumerate() {
                            if *d != 0.0 {
                                axpy(*d, &params[w + j * fan_in..w + (j + 1) * fan_in], &mut next);
                            }
                        }
                        for (n, a) in next.iter_mut().zip(x) {
                            *n *= 1.0 - a * a;
                        }
                        std::mem::swap(&mut delta, &mut next);
                    }
                }
            }
        }
    }

    /// Single-output convenience: `f(params; input)`.
    pub fn eval_scalar(&self, params: &[f64], input: &[f64]) -> Result<f64> {
        self.check(params, input)?;
        if self.num_outputs() != 1 {
            return Err(Error::Dimension(format!("network has {} outputs, expected 1", self.num_outputs())));
        }
        let mut tape = Tape::default();
        Ok(self.forward(params, input, &mut tape)[0])
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Forward pass of an MLP.
pub fn mlp_forward(net: &Mlp, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    let net = Network::Mlp(net.clone());
    net.check(params, input)?;
    let mut tape = Tape::default();
    Ok(net.forward(params, input, &mut tape).to_vec())
}

/// Gradient of `weight * f(params; input)` with respect to `params` for a
/// single-output MLP.
pub fn mlp_gradient(net: &Mlp, params: &[f64], input: &[f64], weight: f64) -> Result<Vec<f64>> {
    let net = Network::Mlp(net.clone());
    net.check(params, input)?;
    if net.num_outputs() != 1 {
        return Err(Error::Dimension(format!("network has {} outputs, expected 1", net.num_outputs())));
    }
    let mut tape = Tape::default();
    net.forward(params, input, &mut tape);
    let mut grad = vec![0.0; net.num_params()];
    net.backward(params, &tape, &[weight], 1.0, &mut grad);
    Ok(grad)
}
