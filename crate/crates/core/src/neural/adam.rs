use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp, NeuralError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam moment accumulators for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, net: &Mlp) -> Self {
        let n = net.parameter_count();
        Self { config, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One bias-corrected Adam update of `net` in place.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<(), NeuralError> {
        let n = net.parameter_count();
        let n_grads: usize = grads.layers.iter().map(|l| l.weights.data().len() + l.bias.len()).sum();
        if n != self.m.len() || n_grads != n {
            return Err(NeuralError::ShapeMismatch { expected: (self.m.len(), 1), got: (n_grads, 1) });
        }
        if !grads.is_finite() {
            return Err(NeuralError::NonFinite("gradient"));
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in net.parameters_mut().zip(grads.iter()).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, Dense, Matrix};

    fn scalar_net(w: f64) -> Mlp {
        Mlp {
            layers: vec![Dense { weights: Matrix::from_vec(1, 1, vec![w]), bias: vec![0.0] }],
            hidden_activation: Activation::LeakyRelu,
            output_activation: Activation::Linear,
        }
    }

    fn grads_of(net: &Mlp, g: f64) -> Gradients {
        let mut grads = Gradients::zeros_like(net);
        grads.layers[0].weights.data_mut()[0] = g;
        grads
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut net = scalar_net(0.3);
        let mut adam = AdamState::new(AdamConfig::new(1e-2), &net);
        let before = net.clone();
        adam.step(&mut net, &Gradients::zeros_like(&before)).unwrap();
        assert_eq!(net, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_the_gradient() {
        // m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + ε).
        let lr = 1e-3;
        for g in [0.37, -12.0, 1e-3] {
            let mut net = scalar_net(1.0);
            let mut adam = AdamState::new(AdamConfig::new(lr), &net);
            let grads = grads_of(&net, g);
            adam.step(&mut net, &grads).unwrap();
            let delta = net.layers[0].weights.get(0, 0) - 1.0;
            let expected = -lr * g / (g.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-15, "g={g}: {delta} vs {expected}");
        }
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let lr = 1e-3;
        let mut net = scalar_net(0.0);
        let mut adam = AdamState::new(AdamConfig::new(lr), &net);
        let mut last = 0.0;
        for _ in 0..500 {
            let before = net.layers[0].weights.get(0, 0);
            let grads = grads_of(&net, 2.5);
            adam.step(&mut net, &grads).unwrap();
            last = net.layers[0].weights.get(0, 0) - before;
        }
        assert!(last < 0.0);
        assert!((last.abs() - lr).abs() < 1e-9 * lr.max(1.0) + 1e-11);
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut net = scalar_net(0.0);
        let mut adam = AdamState::new(AdamConfig::new(1e-3), &net);
        let other = Mlp {
            layers: vec![Dense { weights: Matrix::zeros(2, 1), bias: vec![0.0; 2] }],
            ..scalar_net(0.0)
        };
        assert!(adam.step(&mut net, &Gradients::zeros_like(&other)).is_err());
        let mut bad = grads_of(&net, f64::NAN);
        bad.layers[0].bias[0] = 0.0;
        assert_eq!(adam.step(&mut net, &bad), Err(NeuralError::NonFinite("gradient")));
    }
}
