//! Fully connected tanh network with a flat parameter vector.

use std::fs;
use std::path::Path;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Scalar;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("layout counts must all be >= 1: {0:?}")]
    BadLayout(NetLayout),
    #[error("expected {expected} inputs, got {got}")]
    InputShape { expected: usize, got: usize },
    #[error("expected {expected} parameters for this layout, got {got}")]
    ParamShape { expected: usize, got: usize },
    #[error("parameter file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parameter file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Shape of the network: inputs, equal-width hidden layers, outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetLayout {
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub n_hidden_layers: usize,
    pub neurons_per_layer: usize,
}

impl NetLayout {
    pub fn new(n_inputs: usize, n_outputs: usize, n_hidden_layers: usize, neurons_per_layer: usize) -> Result<Self, NetError> {
        let layout = Self {
            n_inputs,
            n_outputs,
            n_hidden_layers,
            neurons_per_layer,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.n_inputs == 0 || self.n_outputs == 0 || self.n_hidden_layers == 0 || self.neurons_per_layer == 0 {
            return Err(NetError::BadLayout(*self));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine map, input side first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let w = self.neurons_per_layer;
        let mut shapes = Vec::with_capacity(self.n_hidden_layers + 1);
        shapes.push((self.n_inputs, w));
        for _ in 1..self.n_hidden_layers {
            shapes.push((w, w));
        }
        shapes.push((w, self.n_outputs));
        shapes
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Weights and biases stored as one flat vector.
///
/// Layer `k` occupies a contiguous block: its weight matrix row-major
/// (`fan_out` rows of `fan_in`), then its `fan_out` biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams<F> {
    pub layout: NetLayout,
    pub values: Vec<F>,
}

impl<F: Float> MlpParams<F> {
    pub fn from_flat(layout: NetLayout, values: Vec<F>) -> Result<Self, NetError> {
        layout.validate()?;
        if values.len() != layout.n_params() {
            return Err(NetError::ParamShape {
                expected: layout.n_params(),
                got: values.len(),
            });
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: NetLayout) -> Self {
        Self {
            layout,
            values: vec![F::zero(); layout.n_params()],
        }
    }

    pub fn flat(&self) -> &[F] {
        &self.values
    }

    pub fn into_flat(self) -> Vec<F> {
        self.values
    }

    /// Bias entries of every layer, in flat order.
    pub fn biases(&self) -> Vec<F> {
        let mut out = Vec::new();
        let mut off = 0;
        for (i, o) in self.layout.layer_shapes() {
            off += i * o;
            out.extend_from_slice(&self.values[off..off + o]);
            off += o;
        }
        out
    }

    pub fn forward<T: Scalar<Real = F>>(&self, inputs: &[T]) -> Result<Vec<T>, NetError>
    where
        F: Scalar<Real = F>,
    {
        forward(&self.layout, &self.values, inputs)
    }
}

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_params(layout: NetLayout, seed: u64) -> Result<MlpParams<f64>, NetError> {
    layout.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(layout.n_params());
    for (fan_in, fan_out) in layout.layer_shapes() {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        values.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    Ok(MlpParams { layout, values })
}

/// `affine ∘ tanh ∘ ... ∘ tanh ∘ affine` applied to `inputs`.
///
/// `params` is the flat parameter vector at the innermost scalar level of
/// `T`, so the same routine serves plain evaluation, input derivatives
/// (`T` a dual) and parameter gradients (`T::Real` a tape variable).
pub fn forward<T: Scalar>(layout: &NetLayout, params: &[T::Real], inputs: &[T]) -> Result<Vec<T>, NetError> {
    if inputs.len() != layout.n_inputs {
        return Err(NetError::InputShape {
            expected: layout.n_inputs,
            got: inputs.len(),
        });
    }
    if params.len() != layout.n_params() {
        return Err(NetError::ParamShape {
            expected: layout.n_params(),
            got: params.len(),
        });
    }
    let shapes = layout.layer_shapes();
    let last = shapes.len() - 1;
    let mut h: Vec<T> = inputs.to_vec();
    let mut off = 0;
    for (k, (fan_in, fan_out)) in shapes.into_iter().enumerate() {
        let weights = &params[off..off + fan_in * fan_out];
        let biases = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        h = weights
            .chunks_exact(fan_in)
            .zip(biases)
            .map(|(row, &b)| {
                let z = T::dot_real(row, &h).add_real(b);
                if k == last {
                    z
                } else {
                    z.tanh()
                }
            })
            .collect();
    }
    Ok(h)
}

/// Hidden-layer activations for one input, for inspection.
pub fn hidden_activations(params: &MlpParams<f64>, inputs: &[f64]) -> Result<Vec<Vec<f64>>, NetError> {
    let layout = params.layout;
    if inputs.len() != layout.n_inputs {
        return Err(NetError::InputShape {
            expected: layout.n_inputs,
            got: inputs.len(),
        });
    }
    let mut out = Vec::new();
    let mut h = inputs.to_vec();
    let mut off = 0;
    for (fan_in, fan_out) in layout.layer_shapes().into_iter().take(layout.n_hidden_layers) {
        let w = &params.values[off..off + fan_in * fan_out];
        let b = &params.values[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        h = w
            .chunks_exact(fan_in)
            .zip(b)
            .map(|(row, &bi)| (f64::dot_real(row, &h) + bi).tanh())
            .collect();
        out.push(h.clone());
    }
    Ok(out)
}

/// Evaluates the network at many points given as rows of `n_inputs` coordinates.
pub fn predict(params: &MlpParams<f64>, points: &[f64]) -> Result<Vec<f64>, NetError> {
    let n_in = params.layout.n_inputs;
    let mut out = Vec::with_capacity(points.len() / n_in * params.layout.n_outputs);
    for p in points.chunks_exact(n_in) {
        out.extend(forward(&params.layout, &params.values, p)?);
    }
    Ok(out)
}

pub fn save_params(params: &MlpParams<f64>, path: &Path) -> Result<(), NetError> {
    fs::write(path, serde_json::to_string_pretty(params)?)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<MlpParams<f64>, NetError> {
    let p: MlpParams<f64> = serde_json::from_str(&fs::read_to_string(path)?)?;
    MlpParams::from_flat(p.layout, p.values)
}
