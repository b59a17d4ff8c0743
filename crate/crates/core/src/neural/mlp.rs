use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Matrix, NeuralError};

/// Slope of the leaky ReLU on the negative side.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    LeakyRelu,
    Sigmoid,
    Softmax,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    fn apply(&self, z: &mut Matrix) {
        match self {
            Activation::Linear => {}
            Activation::LeakyRelu => {
                for v in z.data_mut() {
                    if *v < 0.0 {
                        *v *= LEAKY_SLOPE;
                    }
                }
            }
            Activation::Sigmoid => {
                for v in z.data_mut() {
                    *v = sigmoid(*v);
                }
            }
            Activation::Softmax => {
                for r in 0..z.rows() {
                    let row = z.row_mut(r);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= sum;
                    }
                }
            }
        }
    }

    /// Maps d(loss)/d(output) to d(loss)/d(pre-activation), given the
    /// pre-activation `z` and output `a`.
    fn backprop(&self, z: &Matrix, a: &Matrix, grad_a: &Matrix) -> Matrix {
        let mut g = grad_a.clone();
        match self {
            Activation::Linear => {}
            Activation::LeakyRelu => {
                for (gv, zv) in g.data_mut().iter_mut().zip(z.data()) {
                    if *zv < 0.0 {
                        *gv *= LEAKY_SLOPE;
                    }
                }
            }
            Activation::Sigmoid => {
                for (gv, av) in g.data_mut().iter_mut().zip(a.data()) {
                    *gv *= av * (1.0 - av);
                }
            }
            Activation::Softmax => {
                for r in 0..g.rows() {
                    let y = a.row(r);
                    let dot: f64 = grad_a.row(r).iter().zip(y).map(|(g, y)| g * y).sum();
                    for (gv, yv) in g.row_mut(r).iter_mut().zip(y) {
                        *gv = yv * (*gv - dot);
                    }
                }
            }
        }
        g
    }
}

/// One dense layer: `out = in · Wᵀ + b`, with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let mut out = Matrix::zeros(x.rows(), n_out);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let orow = out.row_mut(r);
            for o in 0..n_out {
                let w = &self.weights.data()[o * n_in..(o + 1) * n_in];
                orow[o] = self.bias[o] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }
}

/// Multi-layer perceptron with a shared hidden activation and a separate
/// output activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

/// Intermediate values needed for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (the batch for layer 0).
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.post.last().expect("non-empty network")
    }
}

/// Parameter gradients, laid out exactly like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense { weights: Matrix::zeros(l.outputs(), l.inputs()), bias: vec![0.0; l.outputs()] })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_assign(&b.weights);
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.data().iter().chain(l.bias.iter()).copied())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}

impl Mlp {
    /// Uniform He-style initialization: weights ~ U(−√(6/fan_in), √(6/fan_in)),
    /// zero biases.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self, NeuralError> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(NeuralError::InvalidArchitecture(format!("{layer_sizes:?}")));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / n_in as f64).sqrt();
                let data = (0..n_in * n_out).map(|_| rng.gen_range(-limit..limit)).collect();
                Dense { weights: Matrix::from_vec(n_out, n_in, data), bias: vec![0.0; n_out] }
            })
            .collect();
        Ok(Self { layers, hidden_activation, output_activation })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs()];
        sizes.extend(self.layers.iter().map(Dense::outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.data().len() + l.bias.len()).sum()
    }

    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.data().iter().chain(l.bias.iter()).copied())
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers.iter_mut().flat_map(|l| l.weights.data_mut().iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().all(f64::is_finite)
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix, NeuralError> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x);
            self.activation_for(i).apply(&mut x);
        }
        Ok(x)
    }

    pub fn forward_cached(&self, batch: &Matrix) -> Result<ForwardCache, NeuralError> {
        self.check_input(batch)?;
        let mut cache = ForwardCache { inputs: Vec::new(), pre: Vec::new(), post: Vec::new() };
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&x);
            let mut a = z.clone();
            self.activation_for(i).apply(&mut a);
            cache.inputs.push(x);
            cache.pre.push(z);
            x = a.clone();
            cache.post.push(a);
        }
        Ok(cache)
    }

    /// Backpropagates `upstream` (d loss / d output, one row per sample)
    /// through the cached forward pass. Returns parameter gradients and the
    /// gradient with respect to the input batch.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<(Gradients, Matrix), NeuralError> {
        let out = cache.output();
        if (upstream.rows(), upstream.cols()) != (out.rows(), out.cols()) {
            return Err(NeuralError::ShapeMismatch {
                expected: (out.rows(), out.cols()),
                got: (upstream.rows(), upstream.cols()),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut grad_a = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let grad_z = self.activation_for(i).backprop(&cache.pre[i], &cache.post[i], &grad_a);
            let x = &cache.inputs[i];
            let (n_in, n_out) = (layer.inputs(), layer.outputs());
            let g = &mut grads.layers[i];
            for r in 0..x.rows() {
                let gz = grad_z.row(r);
                let xr = x.row(r);
                for o in 0..n_out {
                    let gzo = gz[o];
                    if gzo == 0.0 {
                        continue;
                    }
                    g.bias[o] += gzo;
                    let wrow = &mut g.weights.data_mut()[o * n_in..(o + 1) * n_in];
                    for (w, xv) in wrow.iter_mut().zip(xr) {
                        *w += gzo * xv;
                    }
                }
            }
            let mut grad_x = Matrix::zeros(x.rows(), n_in);
            for r in 0..x.rows() {
                let gz = grad_z.row(r);
                let gx = grad_x.row_mut(r);
                for o in 0..n_out {
                    let gzo = gz[o];
                    if gzo == 0.0 {
                        continue;
                    }
                    let w = &layer.weights.data()[o * n_in..(o + 1) * n_in];
                    for (gxv, wv) in gx.iter_mut().zip(w) {
                        *gxv += gzo * wv;
                    }
                }
            }
            grad_a = grad_x;
        }
        Ok((grads, grad_a))
    }

    fn check_input(&self, batch: &Matrix) -> Result<(), NeuralError> {
        if batch.cols() != self.input_dim() {
            return Err(NeuralError::ShapeMismatch {
                expected: (batch.rows(), self.input_dim()),
                got: (batch.rows(), batch.cols()),
            });
        }
        Ok(())
    }
}
