//! Dense ReLU networks with hand-written backpropagation, and Adam.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// Fully connected network: hidden layers use `activation`, the last layer is linear.
///
/// Weight matrices are stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
}

/// Activations saved by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to every layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    /// He-uniform initialization: weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.random_range(-limit..limit)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Self {
            weights,
            biases,
            activation: Activation::Relu,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            activation: self.activation,
        }
    }

    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.weights[0].ncols()];
        dims.extend(self.weights.iter().map(|w| w.nrows()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map(|w| w.nrows()).unwrap_or(0)
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Row-wise forward pass over a batch `[n, in]`.
    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Trace {
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut h = input.to_owned();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.dot(&w.t());
            z += b;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = z;
        }
        Trace { inputs, output: h }
    }

    pub fn apply(&self, input: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward(input).output
    }

    /// Backpropagates `grad_output` (dL/d output, `[n, out]`), accumulating parameter
    /// gradients into `grads` and returning dL/d input.
    pub fn backward(&self, trace: &Trace, grad_output: Array2<f64>, grads: &mut Mlp) -> Array2<f64> {
        let mut delta = grad_output;
        for l in (0..self.weights.len()).rev() {
            let h = &trace.inputs[l];
            grads.weights[l] += &delta.t().dot(h);
            grads.biases[l] += &delta.sum_axis(Axis(0));
            let mut back = delta.dot(&self.weights[l]);
            if l > 0 {
                // inputs[l] is relu output of layer l-1; zero where the unit was inactive
                back.zip_mut_with(h, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            delta = back;
        }
        delta
    }

    /// Parameter tensors as flat slices, weights then bias per layer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| {
                [
                    w.as_slice().expect("standard layout"),
                    b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| {
                [
                    w.as_slice_mut().expect("standard layout"),
                    b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn to_record(&self) -> MlpRecord {
        MlpRecord {
            dims: self.dims(),
            activation: self.activation,
            weights: self.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: self.biases.iter().map(|b| b.to_vec()).collect(),
        }
    }

    pub fn from_record(rec: MlpRecord) -> Result<Self> {
        let layers = rec.dims.len().saturating_sub(1);
        if layers == 0 || rec.weights.len() != layers || rec.biases.len() != layers {
            return Err(Error::DimensionMismatch {
                what: "network layer count",
                expected: layers,
                got: rec.weights.len(),
            });
        }
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for (l, (w, b)) in rec.weights.into_iter().zip(rec.biases).enumerate() {
            let (fan_in, fan_out) = (rec.dims[l], rec.dims[l + 1]);
            let got = w.len();
            let w = Array2::from_shape_vec((fan_out, fan_in), w).map_err(|_| Error::DimensionMismatch {
                what: "weight matrix size",
                expected: fan_in * fan_out,
                got,
            })?;
            if b.len() != fan_out {
                return Err(Error::DimensionMismatch {
                    what: "bias vector size",
                    expected: fan_out,
                    got: b.len(),
                });
            }
            weights.push(w);
            biases.push(Array1::from(b));
        }
        let mlp = Self {
            weights,
            biases,
            activation: rec.activation,
        };
        if !mlp.is_finite() {
            return Err(Error::InvalidConfig("network parameters must be finite".into()));
        }
        Ok(mlp)
    }
}

/// Checkpoint form of an [`Mlp`]; weights flattened row-major `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction over an ordered list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[&[f64]]) -> Self {
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn set_learning_rate(&mut self, learning_rate: f64) {
        self.config.learning_rate = learning_rate;
    }

    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), self.m.len(), "parameter list changed shape");
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                // dead units decay their moments into subnormals, which are very slow
                if m[i].abs() < 1e-150 {
                    m[i] = 0.0;
                }
                if v[i] < 1e-300 {
                    v[i] = 0.0;
                }
                p[i] -= learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
            }
        }
    }
}
