use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::explorer::{Bounds, Config};
use crate::neural::{Activation, AdamConfig, AdamState, ForwardCache, Gradients, Matrix, Mlp, NeuralError};

/// Shared trunk with an origin head (softmax over real + generators) and a
/// state head (sigmoid probability of On).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub trunk: Mlp,
    pub origin_head: Mlp,
    pub state_head: Mlp,
}

pub(crate) struct DiscriminatorPass {
    trunk: ForwardCache,
    origin: ForwardCache,
    state: ForwardCache,
}

impl DiscriminatorPass {
    pub fn origin_probs(&self) -> &Matrix {
        self.origin.output()
    }

    pub fn p_on(&self) -> Vec<f64> {
        self.state.output().data().to_vec()
    }
}

pub(crate) struct DiscriminatorGrads {
    trunk: Gradients,
    origin: Gradients,
    state: Gradients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct DiscriminatorAdam {
    trunk: AdamState,
    origin: AdamState,
    state: AdamState,
}

impl DiscriminatorAdam {
    pub fn new(config: AdamConfig, d: &Discriminator) -> Self {
        Self {
            trunk: AdamState::new(config.clone(), &d.trunk),
            origin: AdamState::new(config.clone(), &d.origin_head),
            state: AdamState::new(config, &d.state_head),
        }
    }

    pub fn step(&mut self, d: &mut Discriminator, g: &DiscriminatorGrads) -> Result<(), NeuralError> {
        self.trunk.step(&mut d.trunk, &g.trunk)?;
        self.origin.step(&mut d.origin_head, &g.origin)?;
        self.state.step(&mut d.state_head, &g.state)
    }
}

/// Maps unit-cube coordinates to the discriminator's input range [−1, 1].
pub(crate) fn to_input(u: &[f64; 3]) -> [f64; 3] {
    u.map(|x| 2.0 * x - 1.0)
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(n_generators: usize, hidden: &[usize], rng: &mut R) -> Result<Self, NeuralError> {
        let mut sizes = vec![3];
        sizes.extend_from_slice(hidden);
        let width = *sizes.last().expect("non-empty");
        Ok(Self {
            trunk: Mlp::new(&sizes, Activation::LeakyRelu, Activation::LeakyRelu, rng)?,
            origin_head: Mlp::new(&[width, n_generators + 1], Activation::Linear, Activation::Softmax, rng)?,
            state_head: Mlp::new(&[width, 1], Activation::Linear, Activation::Sigmoid, rng)?,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.origin_head.output_dim()
    }

    pub(crate) fn forward_cached(&self, x: &Matrix) -> Result<DiscriminatorPass, NeuralError> {
        let trunk = self.trunk.forward_cached(x)?;
        let origin = self.origin_head.forward_cached(trunk.output())?;
        let state = self.state_head.forward_cached(trunk.output())?;
        Ok(DiscriminatorPass { trunk, origin, state })
    }

    /// Backprop of upstream gradients on both heads; returns parameter
    /// gradients and d(loss)/d(input).
    pub(crate) fn backward(
        &self,
        pass: &DiscriminatorPass,
        origin_grad: &Matrix,
        state_grad: &[f64],
    ) -> Result<(DiscriminatorGrads, Matrix), NeuralError> {
        let (origin, mut h_grad) = self.origin_head.backward(&pass.origin, origin_grad)?;
        let state_up = Matrix::from_vec(state_grad.len(), 1, state_grad.to_vec());
        let (state, h_grad_state) = self.state_head.backward(&pass.state, &state_up)?;
        h_grad.add_assign(&h_grad_state);
        let (trunk, x_grad) = self.trunk.backward(&pass.trunk, &h_grad)?;
        Ok((DiscriminatorGrads { trunk, origin, state }, x_grad))
    }

    /// Probability of On for each config (no bounds check).
    pub fn p_on(&self, bounds: &Bounds, configs: &[Config]) -> Vec<f64> {
        if configs.is_empty() {
            return Vec::new();
        }
        let mut x = Matrix::zeros(configs.len(), 3);
        for (r, c) in configs.iter().enumerate() {
            x.row_mut(r).copy_from_slice(&to_input(&bounds.normalize(c)));
        }
        let h = self.trunk.forward(&x).expect("trunk takes 3 inputs");
        self.state_head.forward(&h).expect("head matches trunk").data().to_vec()
    }

    pub fn is_finite(&self) -> bool {
        self.trunk.is_finite() && self.origin_head.is_finite() && self.state_head.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences_on_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Discriminator::new(2, &[6, 5], &mut rng).unwrap();
        let x = Matrix::from_rows(&[vec![0.2, -0.4, 0.7], vec![-0.9, 0.1, 0.3]]);
        let w_origin = Matrix::from_rows(&[vec![0.3, -1.0, 0.5], vec![1.2, 0.4, -0.7]]);
        let w_state = [0.8, -1.3];
        let objective = |x: &Matrix| {
            let pass = d.forward_cached(x).unwrap();
            let o: f64 = pass.origin_probs().data().iter().zip(w_origin.data()).map(|(a, b)| a * b).sum();
            let s: f64 = pass.p_on().iter().zip(w_state).map(|(a, b)| a * b).sum();
            o + s
        };
        let pass = d.forward_cached(&x).unwrap();
        let (_, gx) = d.backward(&pass, &w_origin, &w_state).unwrap();
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..3 {
                let mut hi = x.clone();
                let mut lo = x.clone();
                hi.set(r, c, x.get(r, c) + h);
                lo.set(r, c, x.get(r, c) - h);
                let fd = (objective(&hi) - objective(&lo)) / (2.0 * h);
                assert!((fd - gx.get(r, c)).abs() < 1e-7, "{fd} vs {}", gx.get(r, c));
            }
        }
    }
}
