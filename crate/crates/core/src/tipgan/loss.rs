use super::GanError;
use crate::neural::{clamped_ln, clamped_ln_grad, Matrix};

/// Origin-identification game over `n + 1` classes (class 0 = real,
/// class `i` = generator `i`).
#[derive(Debug, Clone, PartialEq)]
pub struct MadLoss {
    /// Mean cross-entropy of the true origin over all rows.
    pub discriminator: f64,
    /// d(discriminator) / d(probabilities).
    pub discriminator_grad: Matrix,
    /// Per generator: mean of −ln p(real) over its own rows.
    pub generators: Vec<f64>,
    /// d(Σ generator losses) / d(probabilities); zero on real rows.
    pub generator_grad: Matrix,
}

/// Stability-classification game on the sigmoid head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClfLoss {
    /// Mean binary cross-entropy over every labeled row.
    pub discriminator: f64,
    pub discriminator_grad: Vec<f64>,
    /// Per generator: −0.5 mean[ln D + ln(1 − D)] over its own rows.
    pub generators: Vec<f64>,
    pub generator_grad: Vec<f64>,
}

fn class_counts(origins: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &o in origins {
        counts[o] += 1;
    }
    counts
}

pub fn loss_mad(probs: &Matrix, origins: &[usize], n_generators: usize) -> Result<MadLoss, GanError> {
    let k = n_generators + 1;
    if probs.cols() != k {
        return Err(GanError::ClassCountMismatch { expected: k, got: probs.cols() });
    }
    if probs.rows() != origins.len() {
        return Err(GanError::LengthMismatch { expected: probs.rows(), got: origins.len() });
    }
    if let Some(&o) = origins.iter().find(|&&o| o >= k) {
        return Err(GanError::ClassCountMismatch { expected: k, got: o + 1 });
    }
    let rows = probs.rows();
    let counts = class_counts(origins, k);
    let mut d_loss = 0.0;
    let mut d_grad = Matrix::zeros(rows, k);
    let mut g_loss = vec![0.0; n_generators];
    let mut g_grad = Matrix::zeros(rows, k);
    for (r, &o) in origins.iter().enumerate() {
        let p_true = probs.get(r, o);
        d_loss -= clamped_ln(p_true) / rows as f64;
        d_grad.set(r, o, -clamped_ln_grad(p_true) / rows as f64);
        if o > 0 {
            let p_real = probs.get(r, 0);
            let n = counts[o] as f64;
            g_loss[o - 1] -= clamped_ln(p_real) / n;
            g_grad.set(r, 0, -clamped_ln_grad(p_real) / n);
        }
    }
    Ok(MadLoss { discriminator: d_loss, discriminator_grad: d_grad, generators: g_loss, generator_grad: g_grad })
}

/// `labels` are 1 for On and 0 for Off; every row contributes to the
/// discriminator term, generator rows also to their generator's term.
pub fn loss_clf(p_on: &[f64], labels: &[f64], origins: &[usize], n_generators: usize) -> Result<ClfLoss, GanError> {
    if p_on.len() != labels.len() {
        return Err(GanError::LengthMismatch { expected: p_on.len(), got: labels.len() });
    }
    if p_on.len() != origins.len() {
        return Err(GanError::LengthMismatch { expected: p_on.len(), got: origins.len() });
    }
    if let Some(&y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(GanError::LabelDomain(y));
    }
    if let Some(&o) = origins.iter().find(|&&o| o > n_generators) {
        return Err(GanError::ClassCountMismatch { expected: n_generators + 1, got: o + 1 });
    }
    let rows = p_on.len();
    let counts = class_counts(origins, n_generators + 1);
    let mut d_loss = 0.0;
    let mut d_grad = vec![0.0; rows];
    let mut g_loss = vec![0.0; n_generators];
    let mut g_grad = vec![0.0; rows];
    for r in 0..rows {
        let (p, y) = (p_on[r], labels[r]);
        let scale = 1.0 / rows as f64;
        if y == 1.0 {
            d_loss -= clamped_ln(p) * scale;
            d_grad[r] = -clamped_ln_grad(p) * scale;
        } else {
            d_loss -= clamped_ln(1.0 - p) * scale;
            d_grad[r] = clamped_ln_grad(1.0 - p) * scale;
        }
        let o = origins[r];
        if o > 0 {
            let n = counts[o] as f64;
            g_loss[o - 1] -= 0.5 * (clamped_ln(p) + clamped_ln(1.0 - p)) / n;
            g_grad[r] = -0.5 * (clamped_ln_grad(p) - clamped_ln_grad(1.0 - p)) / n;
        }
    }
    Ok(ClfLoss { discriminator: d_loss, discriminator_grad: d_grad, generators: g_loss, generator_grad: g_grad })
}
