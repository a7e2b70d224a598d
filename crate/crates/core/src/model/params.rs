use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const PARAMS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    /// Softmax regression.
    Linear,
    /// One hidden layer.
    Mlp {
        hidden: usize,
        #[serde(default)]
        activation: Activation,
    },
}

impl Architecture {
    pub fn mlp(hidden: usize) -> Self {
        Architecture::Mlp {
            hidden,
            activation: Activation::Tanh,
        }
    }

    /// `(rows, cols)` of each parameter group in flat order; biases are `(n, 1)`.
    pub fn shapes(&self, dim: usize, classes: usize) -> Vec<(usize, usize)> {
        match *self {
            Architecture::Linear => vec![(classes, dim), (classes, 1)],
            Architecture::Mlp { hidden, .. } => {
                vec![(hidden, dim), (hidden, 1), (classes, hidden), (classes, 1)]
            }
        }
    }

    pub fn param_count(&self, dim: usize, classes: usize) -> usize {
        self.shapes(dim, classes).iter().map(|(r, c)| r * c).sum()
    }

    /// Width of the embedding returned by `features`.
    pub fn feature_dim(&self, dim: usize) -> usize {
        match *self {
            Architecture::Linear => dim,
            Architecture::Mlp { hidden, .. } => hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Architecture::Mlp { hidden: 0, .. } => {
                Err(Error::Argument("hidden width must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Flat parameter vector.
///
/// Linear layout: `W[C x d] | b[C]`. MLP layout: `W1[h x d] | b1[h] | W2[C x h] | b2[C]`.
/// Matrices are row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub(crate) arch: Architecture,
    pub(crate) dim: usize,
    pub(crate) classes: usize,
    pub(crate) weights: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture, dim: usize, classes: usize) -> Result<Self> {
        check_shape(&arch, dim, classes)?;
        Ok(Self {
            arch,
            dim,
            classes,
            weights: vec![0.0; arch.param_count(dim, classes)],
        })
    }

    pub fn from_flat(
        arch: Architecture,
        dim: usize,
        classes: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        check_shape(&arch, dim, classes)?;
        let expected = arch.param_count(dim, classes);
        if weights.len() != expected {
            return Err(Error::Shape(format!(
                "{} weights given, architecture needs {expected}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Argument("parameters must be finite".into()));
        }
        Ok(Self {
            arch,
            dim,
            classes,
            weights,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Index ranges of the parameter groups (one per weight matrix or bias vector).
    pub fn groups(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.arch
            .shapes(self.dim, self.classes)
            .into_iter()
            .map(|(r, c)| {
                let g = start..start + r * c;
                start = g.end;
                g
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ParamsFile {
            version: PARAMS_FORMAT_VERSION,
            architecture: self.arch,
            dim: self.dim,
            classes: self.classes,
            shapes: self.arch.shapes(self.dim, self.classes),
            flat_weights: self.weights.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ParamsFile = serde_json::from_str(text)?;
        if file.version != PARAMS_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported parameter container version {}",
                file.version
            )));
        }
        if file.shapes != file.architecture.shapes(file.dim, file.classes) {
            return Err(Error::Shape("stored shapes disagree with architecture".into()));
        }
        Self::from_flat(file.architecture, file.dim, file.classes, file.flat_weights)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    version: u32,
    architecture: Architecture,
    dim: usize,
    classes: usize,
    shapes: Vec<(usize, usize)>,
    flat_weights: Vec<f64>,
}

fn check_shape(arch: &Architecture, dim: usize, classes: usize) -> Result<()> {
    if dim == 0 || classes == 0 {
        return Err(Error::Argument(format!(
            "dimension ({dim}) and class count ({classes}) must be at least 1"
        )));
    }
    arch.validate()
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases alike.
pub fn init_params(arch: Architecture, dim: usize, classes: usize, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(arch, dim, classes)?;
    let mut rng = seed::rng(seed);
    let shapes = arch.shapes(dim, classes);
    let groups = params.groups();
    // a bias shares the fan-in of the matrix before it
    let fan_ins: Vec<usize> = match arch {
        Architecture::Linear => vec![dim, dim],
        Architecture::Mlp { hidden, .. } => vec![dim, dim, hidden, hidden],
    };
    debug_assert_eq!(shapes.len(), fan_ins.len());
    for (range, fan_in) in groups.into_iter().zip(fan_ins) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for w in &mut params.weights[range] {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(Architecture::Linear.param_count(4, 3), 15);
        assert_eq!(Architecture::mlp(8).param_count(2, 2), 42);
        let p = init_params(Architecture::Linear, 4, 3, 0).unwrap();
        assert_eq!(p.len(), 15);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params(Architecture::mlp(8), 2, 2, 11).unwrap();
        let b = init_params(Architecture::mlp(8), 2, 2, 11).unwrap();
        assert_eq!(a, b);
        let g = a.groups();
        let bound_in = 1.0 / 2f64.sqrt();
        assert!(a.weights[g[0].clone()].iter().all(|w| w.abs() <= bound_in));
        let bound_hidden = 1.0 / 8f64.sqrt();
        assert!(a.weights[g[2].clone()].iter().all(|w| w.abs() <= bound_hidden));
        assert_ne!(a, init_params(Architecture::mlp(8), 2, 2, 12).unwrap());
    }

    #[test]
    fn groups_tile_the_vector() {
        let p = ModelParams::zeros(Architecture::mlp(3), 5, 4).unwrap();
        let g = p.groups();
        assert_eq!(g, vec![0..15, 15..18, 18..30, 30..34]);
        assert_eq!(g.last().unwrap().end, p.len());
    }

    #[test]
    fn json_container() {
        let p = init_params(Architecture::mlp(3), 2, 2, 5).unwrap();
        let text = p.to_json().unwrap();
        assert!(text.contains("\"flat_weights\""));
        assert!(text.contains("\"shapes\""));
        assert_eq!(ModelParams::from_json(&text).unwrap(), p);
    }

    #[test]
    fn invalid_shapes() {
        assert!(ModelParams::zeros(Architecture::mlp(0), 2, 2).is_err());
        assert!(ModelParams::zeros(Architecture::Linear, 0, 2).is_err());
        assert!(ModelParams::from_flat(Architecture::Linear, 2, 2, vec![0.0; 5]).is_err());
    }
}
