mod common;

use common::{randomized_gradient_checks, random_matrix, relative_error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tipgan_core::neural::{Activation, AdamConfig, AdamState, Gradients, Matrix, Mlp};

#[test]
fn backprop_matches_finite_differences_on_random_nets() {
    for seed in [2024, 7] {
        let worst = randomized_gradient_checks(seed, 100);
        assert!(worst < 1e-4, "seed {seed}: worst relative error {worst:e}");
    }
}

#[test]
fn accumulated_gradients_equal_the_gradient_of_the_summed_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Mlp::new(&[3, 5, 2], Activation::LeakyRelu, Activation::Sigmoid, &mut rng).unwrap();
    let a = random_matrix(&mut rng, 4, 3);
    let b = random_matrix(&mut rng, 2, 3);
    let ca = random_matrix(&mut rng, 4, 2);
    let cb = random_matrix(&mut rng, 2, 2);
    let grad = |x: &Matrix, c: &Matrix| net.backward(&net.forward_cached(x).unwrap(), c).unwrap().0;
    let mut sum = Gradients::zeros_like(&net);
    sum.add_assign(&grad(&a, &ca));
    sum.add_assign(&grad(&b, &cb));
    let both = grad(&Matrix::vstack(&[&a, &b]), &Matrix::vstack(&[&ca, &cb]));
    let s: Vec<f64> = sum.iter().collect();
    let t: Vec<f64> = both.iter().collect();
    assert!(relative_error(&s, &t) < 1e-12);
}

#[test]
fn adam_first_step_follows_the_recurrences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = Mlp::new(&[2, 3], Activation::Linear, Activation::Linear, &mut rng).unwrap();
    let before: Vec<f64> = net.parameters().collect();
    let mut grads = Gradients::zeros_like(&net);
    for (i, l) in grads.layers.iter_mut().enumerate() {
        for (j, w) in l.weights.data_mut().iter_mut().enumerate() {
            *w = (j as f64 - 2.5) * 0.3 + i as f64;
        }
    }
    let config = AdamConfig::new(0.01);
    let mut adam = AdamState::new(config.clone(), &net);
    adam.step(&mut net, &grads).unwrap();
    let after: Vec<f64> = net.parameters().collect();
    for ((b, a), g) in before.iter().zip(&after).zip(grads.iter()) {
        let m = (1.0 - config.beta1) * g / (1.0 - config.beta1);
        let v = (1.0 - config.beta2) * g * g / (1.0 - config.beta2);
        let expected = b - config.learning_rate * m / (v.sqrt() + config.epsilon);
        assert!((a - expected).abs() < 1e-15, "{a} vs {expected}");
    }
}
