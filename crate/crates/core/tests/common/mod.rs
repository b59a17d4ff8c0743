#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tipgan_core::neural::{clamped_ln, clamped_ln_grad, Activation, Matrix, Mlp};

const H: f64 = 1e-5;

/// Scalar loss of a network output plus its gradient with respect to that output.
type Loss = fn(&Matrix, &Matrix) -> (f64, Matrix);

fn linear_loss(y: &Matrix, c: &Matrix) -> (f64, Matrix) {
    (y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum(), c.clone())
}

/// Cross-entropy against non-negative soft targets `c`.
fn cross_entropy(y: &Matrix, c: &Matrix) -> (f64, Matrix) {
    let loss = -y.data().iter().zip(c.data()).map(|(p, t)| t * clamped_ln(*p)).sum::<f64>();
    let grad = y.data().iter().zip(c.data()).map(|(p, t)| -t * clamped_ln_grad(*p)).collect();
    (loss, Matrix::from_vec(y.rows(), y.cols(), grad))
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

/// Compares backprop with central differences over every parameter and
/// every input entry; returns the worse of the two relative errors.
pub fn check(net: &Mlp, x: &Matrix, c: &Matrix, loss: Loss) -> f64 {
    let cache = net.forward_cached(x).unwrap();
    let (_, upstream) = loss(cache.output(), c);
    let (grads, input_grad) = net.backward(&cache, &upstream).unwrap();
    let analytic: Vec<f64> = grads.iter().collect();

    let eval = |n: &Mlp, x: &Matrix| loss(&n.forward(x).unwrap(), c).0;
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..net.parameter_count() {
        let mut plus = net.clone();
        *plus.parameters_mut().nth(i).unwrap() += H;
        let mut minus = net.clone();
        *minus.parameters_mut().nth(i).unwrap() -= H;
        numeric.push((eval(&plus, x) - eval(&minus, x)) / (2.0 * H));
    }
    let mut numeric_input = Vec::with_capacity(x.data().len());
    for i in 0..x.data().len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += H;
        let mut minus = x.clone();
        minus.data_mut()[i] -= H;
        numeric_input.push((eval(net, &plus) - eval(net, &minus)) / (2.0 * H));
    }
    relative_error(&analytic, &numeric).max(relative_error(input_grad.data(), &numeric_input))
}

/// Worst relative error over `trials` random nets, batches and losses.
pub fn randomized_gradient_checks(seed: u64, trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outputs = [Activation::Linear, Activation::Sigmoid, Activation::Softmax, Activation::LeakyRelu];
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let depth = rng.gen_range(1..=3);
        let mut sizes = vec![rng.gen_range(1..=4)];
        for _ in 0..depth {
            sizes.push(rng.gen_range(2..=6));
        }
        let output = outputs[trial % outputs.len()];
        let mut net = Mlp::new(&sizes, Activation::LeakyRelu, output, &mut rng).unwrap();
        for b in net.layers.iter_mut().flat_map(|l| l.bias.iter_mut()) {
            *b = rng.gen_range(-0.5..0.5);
        }
        let rows = rng.gen_range(1..=5);
        let x = random_matrix(&mut rng, rows, sizes[0]);
        let out_dim = *sizes.last().unwrap();
        let (c, loss): (Matrix, Loss) = if matches!(output, Activation::Sigmoid | Activation::Softmax) && trial % 2 == 0 {
            let mut c = random_matrix(&mut rng, rows, out_dim);
            for v in c.data_mut() {
                *v = v.abs();
            }
            (c, cross_entropy)
        } else {
            (random_matrix(&mut rng, rows, out_dim), linear_loss)
        };
        worst = worst.max(check(&net, &x, &c, loss));
    }
    worst
}
