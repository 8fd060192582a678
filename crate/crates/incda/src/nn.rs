//! Minimal neural-network engine: fully-connected layers with analytic
//! backpropagation, a sinusoidal temperature embedding, and Adam.
//!
//! Gradients are hand-derived per operation; there is no autodiff and no
//! hidden randomness in the forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Layer nonlinearity. Hidden layers use a smooth GELU so that everything
/// downstream of the solve stays differentiable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Linear,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn apply_activation(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Gelu => gelu(x),
        Activation::Linear => x,
    }
}

fn activation_deriv(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Gelu => gelu_deriv(x),
        Activation::Linear => 1.0,
    }
}

/// One affine layer with row-major `out_dim × in_dim` weights.
#[derive(Debug, Clone)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

/// A fully-connected network.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Pre-activations and layer inputs recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

/// Gradients shaped like [`Mlp`] parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: mlp.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    /// `self += other * scale`.
    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in self.weights.iter_mut() {
            w.iter_mut().for_each(|v| *v *= factor);
        }
        for b in self.biases.iter_mut() {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

impl Mlp {
    /// Builds a network with the given layer sizes (`dims[0]` is the input
    /// dimension), GELU on hidden layers and a linear output layer. Weights
    /// are uniform in `±1/√fan_in`, biases zero.
    pub fn new(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights = (0..fan_in * fan_out)
                    .map(|_| bound * (2.0 * rng.gen::<f64>() - 1.0))
                    .collect();
                Layer {
                    in_dim: fan_in,
                    out_dim: fan_out,
                    weights,
                    biases: vec![0.0; fan_out],
                    activation: if i + 2 == dims.len() {
                        Activation::Linear
                    } else {
                        Activation::Gelu
                    },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    /// Layer sizes, input first.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    /// Zeroes the final layer so the network starts as the zero map; used
    /// for residual heads and identity-precision initialization.
    pub fn zero_final_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.weights.iter_mut().for_each(|v| *v = 0.0);
        last.biases.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Overwrites a final-layer bias entry.
    pub fn set_final_bias(&mut self, index: usize, value: f64) {
        self.layers.last_mut().unwrap().biases[index] = value;
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut pos = 0;
        for l in self.layers.iter_mut() {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
    }

    /// Forward pass; the cache feeds [`Mlp::backward`].
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp forward",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut pre = layer.biases.clone();
            for o in 0..layer.out_dim {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut s = 0.0;
                for (w, xi) in row.iter().zip(&x) {
                    s += w * xi;
                }
                pre[o] += s;
            }
            let out: Vec<f64> = pre
                .iter()
                .map(|&p| apply_activation(layer.activation, p))
                .collect();
            inputs.push(x);
            preacts.push(pre);
            x = out;
        }
        Ok((x, MlpCache { inputs, preacts }))
    }

    /// Backward pass: exact gradients of `⟨output, grad_output⟩` with
    /// respect to parameters and input.
    pub fn backward(&self, cache: &MlpCache, grad_output: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        if cache.inputs.len() != self.layers.len()
            || cache
                .inputs
                .iter()
                .zip(&self.layers)
                .any(|(i, l)| i.len() != l.in_dim)
        {
            return Err(Error::StaleCache {
                context: "mlp backward",
            });
        }
        if grad_output.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp backward",
                expected: self.output_dim(),
                got: grad_output.len(),
            });
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut grad = grad_output.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.preacts[l];
            let x = &cache.inputs[l];
            // Through the activation.
            let grad_pre: Vec<f64> = grad
                .iter()
                .zip(pre)
                .map(|(g, &p)| g * activation_deriv(layer.activation, p))
                .collect();
            // Parameter gradients.
            let dw = &mut grads.weights[l];
            for o in 0..layer.out_dim {
                let gp = grad_pre[o];
                let row = &mut dw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (d, xi) in row.iter_mut().zip(x) {
                    *d += gp * xi;
                }
            }
            grads.biases[l].copy_from_slice(&grad_pre);
            // Input gradient: Wᵀ grad_pre.
            let mut grad_in = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let gp = grad_pre[o];
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gi, w) in grad_in.iter_mut().zip(row) {
                    *gi += gp * w;
                }
            }
            grad = grad_in;
        }
        Ok((grads, grad))
    }
}

/// Sinusoidal embedding of a temperature `s ∈ [0, 1]`: interleaved
/// `(sin(s·ωⱼ), cos(s·ωⱼ))` with geometric frequencies spanning `[1, 10³]`.
pub fn embed_temperature(s: f64, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 || dim == 0 {
        return Err(Error::OddEmbeddingDim { dim });
    }
    let pairs = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for j in 0..pairs {
        let exponent = if pairs > 1 {
            3.0 * j as f64 / (pairs - 1) as f64
        } else {
            0.0
        };
        let omega = 10f64.powf(exponent);
        out.push((s * omega).sin());
        out.push((s * omega).cos());
    }
    Ok(out)
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update, in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter shape changed");
        assert_eq!(grads.len(), self.m.len(), "gradient shape mismatch");
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
