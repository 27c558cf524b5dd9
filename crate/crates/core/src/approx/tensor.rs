//! Flat text format for feature matrices and network weights.
//!
//! ```text
//! tensor phi 2 2
//! 1 0
//! 0 1
//! end
//! ```
//!
//! Values are written row-major, one row of the last dimension per line,
//! using the shortest representation that round-trips exactly.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::approx::features::StateFeatureMap;
use crate::approx::network::{Mlp, Network};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Config(format!("invalid tensor name {name:?}")));
        }
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::Dimension(format!(
                "tensor {name} has shape {shape:?} but {} values",
                values.len()
            )));
        }
        Ok(Self { name, shape, values })
    }

    pub fn from_matrix(name: impl Into<String>, m: &DMatrix<f64>) -> Result<Self> {
        Self::new(name, vec![m.nrows(), m.ncols()], m.transpose().as_slice().to_vec())
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self.shape[..] {
            [r, c] => Ok(DMatrix::from_row_slice(r, c, &self.values)),
            _ => Err(Error::Dimension(format!("tensor {} is not 2-d", self.name))),
        }
    }
}

pub fn write_tensors(tensors: &[NamedTensor]) -> String {
    let mut out = String::new();
    for t in tensors {
        let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "tensor {} {}", t.name, dims.join(" "));
        let width = t.shape.last().copied().unwrap_or(1).max(1);
        for row in t.values.chunks(width) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out.push_str("end\n");
    }
    out
}

pub fn read_tensors(text: &str) -> Result<Vec<NamedTensor>> {
    let bad = |line: usize, msg: &str| Error::parse("<tensors>", format!("line {}: {msg}", line + 1));
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    while let Some((n, line)) = lines.next() {
        let mut words = line.split_whitespace();
        if words.next() != Some("tensor") {
            return Err(bad(n, "expected `tensor <name> <dims...>`"));
        }
        let name = words.next().ok_or_else(|| bad(n, "missing tensor name"))?.to_string();
        let shape = words
            .map(|w| w.parse::<usize>().map_err(|_| bad(n, "bad dimension")))
            .collect::<Result<Vec<_>>>()?;
        let expected: usize = shape.iter().product();
        let mut values = Vec::with_capacity(expected);
        loop {
            let (m, line) = lines.next().ok_or_else(|| bad(n, "unterminated tensor"))?;
            if line.trim() == "end" {
                break;
            }
            for w in line.split_whitespace() {
                values.push(w.parse::<f64>().map_err(|_| bad(m, "bad value"))?);
            }
        }
        out.push(NamedTensor::new(name, shape, values)?);
    }
    Ok(out)
}

impl StateFeatureMap {
    pub fn to_tensor(&self, name: &str) -> Result<NamedTensor> {
        NamedTensor::from_matrix(name, self.matrix())
    }

    pub fn from_tensor(t: &NamedTensor, bound: f64) -> Result<Self> {
        Self::new(t.to_matrix()?, bound)
    }
}

/// One `W` and one `b` tensor per layer, named `<prefix>.w<k>` / `<prefix>.b<k>`.
pub fn mlp_to_tensors(net: &Mlp, params: &[f64], prefix: &str) -> Result<Vec<NamedTensor>> {
    Network::Mlp(net.clone()).check(params, &vec![0.0; net.sizes()[0]])?;
    let mut out = Vec::new();
    let mut off = 0;
    for (k, pair) in net.sizes().windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let w = params[off..off + fan_in * fan_out].to_vec();
        off += fan_in * fan_out;
        let b = params[off..off + fan_out].to_vec();
        off += fan_out;
        out.push(NamedTensor::new(format!("{prefix}.w{k}"), vec![fan_out, fan_in], w)?);
        out.push(NamedTensor::new(format!("{prefix}.b{k}"), vec![fan_out], b)?);
    }
    Ok(out)
}

pub fn mlp_from_tensors(tensors: &[NamedTensor], prefix: &str) -> Result<(Mlp, Vec<f64>)> {
    let find = |name: String| {
        tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::parse("<tensors>", format!("missing tensor {name}")))
    };
    let mut sizes = Vec::new();
    let mut params = Vec::new();
    let mut k = 0;
    while let Ok(w) = find(format!("{prefix}.w{k}")) {
        let b = find(format!("{prefix}.b{k}"))?;
        let [fan_out, fan_in] = w.shape[..] else {
            return Err(Error::Dimension(format!("{} is not 2-d", w.name)));
        };
        if b.shape != [fan_out] || sizes.last().is_some_and(|s| *s != fan_in) {
            return Err(Error::Dimension(format!("layer {k} of {prefix} has inconsistent shapes")));
        }
        if sizes.is_empty() {
            sizes.push(fan_in);
        }
        sizes.push(fan_out);
        params.extend_from_slice(&w.values);
        params.extend_from_slice(&b.values);
        k += 1;
    }
    Ok((Mlp::new(sizes)?, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    #[test]
    fn features_and_weights_round_trip() {
        let phi = StateFeatureMap::radial_basis(5, 3, 1.0).unwrap();
        let mlp = Mlp::two_hidden(3, [4, 4], 2).unwrap();
        let params = Network::Mlp(mlp.clone()).init_params(&mut stream(1, Stream::Init), 1.0);
        let mut tensors = vec![phi.to_tensor("phi").unwrap()];
        tensors.extend(mlp_to_tensors(&mlp, &params, "critic").unwrap());
        let text = write_tensors(&tensors);
        let back = read_tensors(&text).unwrap();
        assert_eq!(back, tensors);
        assert_eq!(StateFeatureMap::from_tensor(&back[0], 10.0).unwrap(), phi);
        let (mlp2, params2) = mlp_from_tensors(&back, "critic").unwrap();
        assert_eq!((mlp2, params2), (mlp, params));
    }

    #[test]
    fn malformed_text_is_rejected() {
        assert!(read_tensors("tensor x 2\n1\nend\n").is_err());
        assert!(read_tensors("tensor x 2\n1 2\n").is_err());
        assert!(read_tensors("matrix x 1\n1\nend\n").is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_values_round_trip(values in proptest::collection::vec(proptest::num::f64::NORMAL, 1..20)) {
            let t = NamedTensor::new("v", vec![values.len()], values).unwrap();
            prop_assert_eq!(read_tensors(&write_tensors(std::slice::from_ref(&t))).unwrap(), vec![t]);
        }
    }
}
