//! Minimal dense-network substrate: forward pass, explicit backprop and
//! Adam. No autodiff; every layer knows its own derivative.

mod adam;
mod matrix;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use matrix::Matrix;
pub use mlp::{sigmoid, Activation, Dense, ForwardCache, Gradients, Mlp, LEAKY_SLOPE};

use thiserror::Error;

/// Probabilities are clamped to `[LOG_EPS, 1 - LOG_EPS]` before taking logs.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("invalid architecture {0}")]
    InvalidArchitecture(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

/// ln(clamp(p, ε, 1 − ε)).
#[inline]
pub fn clamped_ln(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS).ln()
}

/// d/dp of [`clamped_ln`]; zero where the clamp is active.
#[inline]
pub fn clamped_ln_grad(p: f64) -> f64 {
    if (LOG_EPS..=1.0 - LOG_EPS).contains(&p) {
        1.0 / p
    } else {
        0.0
    }
}
