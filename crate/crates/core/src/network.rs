//! Fully-connected feed-forward regression networks.
//!
//! All intercepts and weights of a [`Network`] live in one flat parameter
//! vector. Layer `h` (1-based, `h = 1..=H+1`) owns a row-major
//! `L_h x L_{h-1}` weight block followed by its `L_h` intercepts. A
//! [`GradientSet`] uses exactly the same layout, so optimizers can treat
//! parameters and gradients as parallel slices.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::datagen::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub hidden_activation: ActivationKind,
    pub output_activation: ActivationKind,
}

impl Architecture {
    /// Regression architecture with identity output.
    pub fn regression(input_dim: usize, hidden_sizes: Vec<usize>, hidden: ActivationKind) -> Self {
        Architecture { input_dim, hidden_sizes, hidden_activation: hidden, output_activation: ActivationKind::Identity }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArchitecture("input dimension must be positive".into()));
        }
        if self.hidden_sizes.is_empty() {
            return Err(Error::InvalidArchitecture("at least one hidden layer is required".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidArchitecture("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }

    /// Layer widths `L_0 = p, L_1, .., L_H, L_{H+1} = 1`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_sizes.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_sizes);
        w.push(1);
        w
    }

    pub fn depth(&self) -> usize {
        self.hidden_sizes.len()
    }

    fn shapes(&self) -> Vec<LayerShape> {
        let widths = self.widths();
        let mut offset = 0;
        widths
            .windows(2)
            .map(|pair| {
                let shape = LayerShape { inputs: pair[0], outputs: pair[1], offset };
                offset += shape.len();
                shape
            })
            .collect()
    }
}

/// Parameter counts of an architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterCount {
    pub intercepts: usize,
    pub weights: usize,
    pub total: usize,
}

pub fn count_parameters(arch: &Architecture) -> ParameterCount {
    let widths = arch.widths();
    let intercepts: usize = widths[1..].iter().sum();
    let weights: usize = widths.windows(2).map(|w| w[0] * w[1]).sum();
    ParameterCount { intercepts, weights, total: intercepts + weights }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    offset: usize,
}

impl LayerShape {
    fn len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.outputs * self.inputs
    }

    fn intercept_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.outputs * self.inputs;
        start..start + self.outputs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    arch: Architecture,
    shapes: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Values recorded during one forward pass.
///
/// `pre_activations[h - 1]` holds `a^(h)` and `activations[h]` holds `z^(h)`
/// for `h = 1..=H+1`; `activations[0]` is the input itself.
/// `derivatives[h - 1]` caches the activation slope at `a^(h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
    pub derivatives: Vec<Vec<f64>>,
    pub prediction: f64,
}

impl ForwardTrace {
    pub fn for_network(net: &Network) -> Self {
        let pre_activations: Vec<Vec<f64>> = net.shapes.iter().map(|s| vec![0.0; s.outputs]).collect();
        let derivatives = pre_activations.clone();
        let mut activations = vec![vec![0.0; net.arch.input_dim]];
        activations.extend(net.shapes.iter().map(|s| vec![0.0; s.outputs]));
        ForwardTrace { pre_activations, activations, derivatives, prediction: 0.0 }
    }
}

/// Partial derivatives with the same layout as the owning network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    shapes: Vec<LayerShape>,
    values: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        GradientSet { shapes: net.shapes.clone(), values: vec![0.0; net.params.len()] }
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    /// Row-major `d_weights` of layer `h` (1-based).
    pub fn d_weights(&self, h: usize) -> &[f64] {
        &self.values[self.shapes[h - 1].weight_range()]
    }

    pub fn d_intercepts(&self, h: usize) -> &[f64] {
        &self.values[self.shapes[h - 1].intercept_range()]
    }

    /// Flat view in network parameter order.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn fill(&mut self, value: f64) {
        self.values.iter_mut().for_each(|v| *v = value);
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| if v.abs() > m || v.is_nan() { v.abs() } else { m })
    }
}

/// Reusable buffers for backpropagation.
#[derive(Debug, Clone)]
pub struct Workspace {
    trace: ForwardTrace,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    pub fn new(net: &Network) -> Self {
        let widest = net.arch.widths().into_iter().max().unwrap_or(1);
        Workspace {
            trace: ForwardTrace::for_network(net),
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
        }
    }

    pub fn trace(&self) -> &ForwardTrace {
        &self.trace
    }
}

impl Network {
    /// Network with all parameters set to zero.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.shapes();
        let total = shapes.iter().map(LayerShape::len).sum();
        Ok(Network { arch, shapes, params: vec![0.0; total] })
    }

    /// Every weight and intercept drawn i.i.d. standard normal.
    pub fn init_weights<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let mut net = Network::zeros(arch)?;
        for p in net.params.iter_mut() {
            *p = rng.sample(StandardNormal);
        }
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    /// Number of layers carrying parameters (`H + 1`).
    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    pub fn layer_shape(&self, h: usize) -> LayerShape {
        self.shapes[h - 1]
    }

    /// Row-major `L_h x L_{h-1}` weights of layer `h` (1-based).
    pub fn weights(&self, h: usize) -> &[f64] {
        &self.params[self.shapes[h - 1].weight_range()]
    }

    pub fn weights_mut(&mut self, h: usize) -> &mut [f64] {
        let r = self.shapes[h - 1].weight_range();
        &mut self.params[r]
    }

    pub fn intercepts(&self, h: usize) -> &[f64] {
        &self.params[self.shapes[h - 1].intercept_range()]
    }

    pub fn intercepts_mut(&mut self, h: usize) -> &mut [f64] {
        let r = self.shapes[h - 1].intercept_range();
        &mut self.params[r]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn activation_of(&self, layer_index: usize) -> ActivationKind {
        if layer_index + 1 == self.shapes.len() {
            self.arch.output_activation
        } else {
            self.arch.hidden_activation
        }
    }

    pub fn forward(&self, x: &[f64]) -> ForwardTrace {
        let mut trace = ForwardTrace::for_network(self);
        self.forward_into(x, &mut trace);
        trace
    }

    /// Forward pass reusing the buffers of `trace`.
    pub fn forward_into(&self, x: &[f64], trace: &mut ForwardTrace) {
        assert_eq!(x.len(), self.arch.input_dim, "input dimension mismatch");
        trace.activations[0].copy_from_slice(x);
        for (idx, shape) in self.shapes.iter().enumerate() {
            let act = self.activation_of(idx);
            let w = &self.params[shape.weight_range()];
            let b = &self.params[shape.intercept_range()];
            let (before, after) = trace.activations.split_at_mut(idx + 1);
            let input = &before[idx];
            let out = &mut after[0];
            let pre = &mut trace.pre_activations[idx];
            let slope = &mut trace.derivatives[idx];
            for l in 0..shape.outputs {
                let row = &w[l * shape.inputs..(l + 1) * shape.inputs];
                let a = b[l] + row.iter().zip(input.iter()).map(|(wi, zi)| wi * zi).sum::<f64>();
                pre[l] = a;
                (out[l], slope[l]) = act.apply_with_derivative(a);
            }
        }
        trace.prediction = trace.activations[self.shapes.len()][0];
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.forward(x).prediction
    }

    pub fn predict_all(&self, data: &Dataset) -> Vec<f64> {
        let mut trace = ForwardTrace::for_network(self);
        (0..data.len())
            .map(|i| {
                self.forward_into(data.row(i), &mut trace);
                trace.prediction
            })
            .collect()
    }

    /// Adds `scale * dL/dtheta` for one instance to `grad`, given the trace
    /// of its forward pass and `dL/dyhat`.
    ///
    /// Output layer: `delta = dL/dyhat * sigma'(a)`; moving down,
    /// `delta^(h) = (W^(h+1))^T delta^(h+1) * sigma'(a^(h))`, with
    /// `dL/db^(h) = delta^(h)` and `dL/dW^(h) = delta^(h) (z^(h-1))^T`.
    pub fn accumulate_gradient(
        &self,
        trace: &ForwardTrace,
        dloss_dpred: f64,
        scale: f64,
        grad: &mut GradientSet,
        delta: &mut Vec<f64>,
        delta_prev: &mut Vec<f64>,
    ) {
        let last = self.shapes.len() - 1;
        delta.clear();
        delta.push(dloss_dpred * trace.derivatives[last][0]);
        for idx in (0..=last).rev() {
            let shape = self.shapes[idx];
            let z_prev = &trace.activations[idx];
            let gw = &mut grad.values[shape.weight_range()];
            for l in 0..shape.outputs {
                let d = delta[l] * scale;
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[l * shape.inputs..(l + 1) * shape.inputs];
                for (g, z) in row.iter_mut().zip(z_prev.iter()) {
                    *g += d * z;
                }
            }
            let gb = &mut grad.values[shape.intercept_range()];
            for (g, d) in gb.iter_mut().zip(delta.iter()) {
                *g += d * scale;
            }
            if idx == 0 {
                break;
            }
            let w = &self.params[shape.weight_range()];
            let slope = &trace.derivatives[idx - 1];
            delta_prev.clear();
            delta_prev.resize(shape.inputs, 0.0);
            for l in 0..shape.outputs {
                let d = delta[l];
                if d == 0.0 {
                    continue;
                }
                let row = &w[l * shape.inputs..(l + 1) * shape.inputs];
                for (acc, wj) in delta_prev.iter_mut().zip(row.iter()) {
                    *acc += wj * d;
                }
            }
            for (acc, d) in delta_prev.iter_mut().zip(slope.iter()) {
                *acc *= d;
            }
            std::mem::swap(delta, delta_prev);
        }
    }

    /// Forward pass for `x` followed by accumulation of `scale * gradient`
    /// where `dloss` maps the prediction to `dL/dyhat`.
    pub fn accumulate_with<F: FnOnce(f64) -> f64>(
        &self,
        x: &[f64],
        dloss: F,
        scale: f64,
        grad: &mut GradientSet,
        ws: &mut Workspace,
    ) -> f64 {
        self.forward_into(x, &mut ws.trace);
        let pred = ws.trace.prediction;
        let g = dloss(pred);
        self.accumulate_gradient(&ws.trace, g, scale, grad, &mut ws.delta, &mut ws.delta_prev);
        pred
    }

    /// Per-instance gradients of the loss with respect to every parameter.
    ///
    /// `dloss_dpred(prediction, y)` supplies `dL/dyhat` for each instance.
    pub fn backprop<F: Fn(f64, f64) -> f64>(&self, data: &Dataset, dloss_dpred: F) -> Vec<GradientSet> {
        let mut ws = Workspace::new(self);
        (0..data.len())
            .map(|i| {
                let mut g = GradientSet::zeros_like(self);
                let y = data.y[i];
                self.accumulate_with(data.row(i), |pred| dloss_dpred(pred, y), 1.0, &mut g, &mut ws);
                g
            })
            .collect()
    }

    /// Euclidean norm of all intercepts and weights, `+inf` if any is non-finite.
    pub fn weight_vec_norm(&self) -> f64 {
        let mut sum = 0.0;
        for &p in &self.params {
            if !p.is_finite() {
                return f64::INFINITY;
            }
            sum += p * p;
        }
        sum.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}
