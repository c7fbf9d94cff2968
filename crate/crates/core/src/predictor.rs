//! The public model: a windowed feedforward network with tanh hidden layers
//! and a linear output layer.
//!
//! Parameters live in one flat [`ParamVector`]. Each layer stores its weight
//! matrix row-major (`rows = fan_out`, `cols = fan_in`) followed by its bias.
//! Besides the deterministic forward pass the module provides exact
//! vector-Jacobian products, and an isotropic Gaussian head with fixed standard
//! deviation that turns the network into the stochastic policy sampled by the
//! policy-gradient trainer. Inference always uses the Gaussian mean.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Shape of one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
    pub bias_len: usize,
    /// Offset of the first weight inside the flat vector.
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.bias_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.weight_len()
    }
}

/// Layer sizes `[input, hidden.., output]` and the derived per-layer shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Layout {
    sizes: Vec<usize>,
    shapes: Vec<LayerShape>,
}

impl Layout {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config(format!(
                "architecture needs an input size and at least one layer, got {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::Config(format!(
                "every layer size must be at least 1, got {sizes:?}"
            )));
        }
        let mut shapes = Vec::with_capacity(sizes.len() - 1);
        let mut offset = 0;
        for (layer, pair) in sizes.windows(2).enumerate() {
            let shape = LayerShape {
                layer,
                rows: pair[1],
                cols: pair[0],
                bias_len: pair[1],
                offset,
            };
            offset += shape.len();
            shapes.push(shape);
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            shapes,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("layout has at least two sizes")
    }

    /// Total number of scalars: sum of `rows * cols + bias_len` over layers.
    pub fn num_params(&self) -> usize {
        self.shapes.iter().map(LayerShape::len).sum()
    }
}

impl TryFrom<Vec<usize>> for Layout {
    type Error = Error;

    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        Layout::new(&sizes)
    }
}

impl From<Layout> for Vec<usize> {
    fn from(layout: Layout) -> Self {
        layout.sizes
    }
}

/// Flat predictor parameters together with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.num_params() {
            return Err(Error::dim("parameter vector", layout.num_params(), values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "parameter {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.num_params()];
        Self { values, layout }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// A zero vector with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let s = &self.layout.shapes[layer];
        &self.values[s.offset..s.bias_offset()]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let s = &self.layout.shapes[layer];
        &self.values[s.bias_offset()..s.offset + s.len()]
    }
}

/// A flattened lookback window (`L` steps times `F` features) for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub values: Vec<f64>,
    pub agent: usize,
}

impl FeatureWindow {
    pub fn new(values: Vec<f64>, agent: usize) -> Self {
        Self { values, agent }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Model output: one value for a scalar forecast, `T` values for a window forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub values: Vec<f64>,
}

/// A draw from the Gaussian policy around the deterministic prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub sample: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: f64,
}

impl PolicySample {
    /// Log-density of `sample` under `N(mean, std^2 I)`.
    pub fn log_density(&self) -> f64 {
        let var = self.std * self.std;
        let n = self.sample.len() as f64;
        let sq: f64 = self
            .sample
            .iter()
            .zip(&self.mean)
            .map(|(s, m)| (s - m) * (s - m))
            .sum();
        -0.5 * sq / var - n * (self.std.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln())
    }
}

/// Fan-in uniform initialization with zero biases.
pub fn init_params(arch: &[usize], seed: u64) -> Result<ParamVector> {
    let layout = Layout::new(arch)?;
    let mut rng = seeded(seed);
    let mut params = ParamVector::zeros(layout.clone());
    for shape in layout.shapes() {
        let bound = 1.0 / (shape.cols as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite positive bound");
        let start = shape.offset;
        for w in &mut params.values[start..start + shape.weight_len()] {
            *w = dist.sample(&mut rng);
        }
    }
    Ok(params)
}

/// Pre- and post-activation values kept for the backward pass.
struct Trace {
    /// `activations[l]` is the input to layer `l`; the last entry is the output.
    activations: Vec<Vec<f64>>,
}

fn check_input(params: &ParamVector, x: &FeatureWindow) -> Result<()> {
    let expected = params.layout.input_dim();
    if x.values.len() != expected {
        return Err(Error::dim("forward input", expected, x.values.len()));
    }
    Ok(())
}

fn forward_trace(params: &ParamVector, input: &[f64]) -> Trace {
    let shapes = params.layout.shapes();
    let mut activations = Vec::with_capacity(shapes.len() + 1);
    activations.push(input.to_vec());
    for (l, shape) in shapes.iter().enumerate() {
        let h = &activations[l];
        let w = params.weights(l);
        let b = params.bias(l);
        let last = l + 1 == shapes.len();
        let mut out = Vec::with_capacity(shape.rows);
        for r in 0..shape.rows {
            let row = &w[r * shape.cols..(r + 1) * shape.cols];
            let z = b[r] + row.iter().zip(h).map(|(a, x)| a * x).sum::<f64>();
            out.push(if last { z } else { z.tanh() });
        }
        activations.push(out);
    }
    Trace { activations }
}

/// Deterministic forward pass.
pub fn forward(params: &ParamVector, x: &FeatureWindow) -> Result<Prediction> {
    check_input(params, x)?;
    let mut trace = forward_trace(params, &x.values);
    Ok(Prediction {
        values: trace.activations.pop().expect("output layer"),
    })
}

fn backward(params: &ParamVector, trace: &Trace, cotangent: &[f64], grad: &mut [f64]) {
    let shapes = params.layout.shapes();
    let mut delta = cotangent.to_vec();
    for l in (0..shapes.len()).rev() {
        let shape = &shapes[l];
        let input = &trace.activations[l];
        let w_off = shape.offset;
        let b_off = shape.bias_offset();
        for r in 0..shape.rows {
            let d = delta[r];
            if d == 0.0 {
                continue;
            }
            grad[b_off + r] += d;
            let row = &mut grad[w_off + r * shape.cols..w_off + (r + 1) * shape.cols];
            for (g, x) in row.iter_mut().zip(input) {
                *g += d * x;
            }
        }
        if l == 0 {
            break;
        }
        // Propagate through W^T and the tanh of the previous layer.
        let w = params.weights(l);
        let mut prev = vec![0.0; shape.cols];
        for r in 0..shape.rows {
            let d = delta[r];
            if d == 0.0 {
                continue;
            }
            let row = &w[r * shape.cols..(r + 1) * shape.cols];
            for (p, a) in prev.iter_mut().zip(row) {
                *p += d * a;
            }
        }
        for (p, a) in prev.iter_mut().zip(input) {
            *p *= 1.0 - a * a;
        }
        delta = prev;
    }
}

/// `cotangent^T * d forward / d params`, shaped like the parameters.
pub fn vjp(params: &ParamVector, x: &FeatureWindow, cotangent: &[f64]) -> Result<ParamVector> {
    let mut grad = params.zeros_like();
    vjp_accumulate(params, x, cotangent, 1.0, &mut grad)?;
    Ok(grad)
}

/// Adds `scale * vjp(params, x, cotangent)` into `grad` and returns the forward output.
pub fn vjp_accumulate(
    params: &ParamVector,
    x: &FeatureWindow,
    cotangent: &[f64],
    scale: f64,
    grad: &mut ParamVector,
) -> Result<Prediction> {
    check_input(params, x)?;
    let out_dim = params.layout.output_dim();
    if cotangent.len() != out_dim {
        return Err(Error::dim("vjp cotangent", out_dim, cotangent.len()));
    }
    if grad.len() != params.len() {
        return Err(Error::dim("vjp accumulator", params.len(), grad.len()));
    }
    let trace = forward_trace(params, &x.values);
    let scaled: Vec<f64> = cotangent.iter().map(|c| c * scale).collect();
    backward(params, &trace, &scaled, &mut grad.values);
    Ok(Prediction {
        values: trace.activations.last().expect("output layer").clone(),
    })
}

/// Draw `forward(params, x) + std * eps` with `eps ~ N(0, I)`.
pub fn sample_prediction<R: Rng + ?Sized>(
    params: &ParamVector,
    x: &FeatureWindow,
    std: f64,
    rng: &mut R,
) -> Result<PolicySample> {
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "policy std must be positive and finite, got {std}"
        )));
    }
    let mean = forward(params, x)?.values;
    let sample = mean
        .iter()
        .map(|m| {
            let eps: f64 = StandardNormal.sample(rng);
            m + std * eps
        })
        .collect();
    Ok(PolicySample { sample, mean, std })
}

/// Gradient of `log N(sample; forward(params, x), std^2 I)` with respect to the parameters.
pub fn score_grad(params: &ParamVector, x: &FeatureWindow, sample: &PolicySample) -> Result<ParamVector> {
    let out_dim = params.layout.output_dim();
    if sample.sample.len() != out_dim || sample.mean.len() != out_dim {
        return Err(Error::dim("policy sample", out_dim, sample.sample.len()));
    }
    let var = sample.std * sample.std;
    let cotangent: Vec<f64> = sample
        .sample
        .iter()
        .zip(&sample.mean)
        .map(|(s, m)| (s - m) / var)
        .collect();
    vjp(params, x, &cotangent)
}
