use alloc::vec;
use alloc::vec::Vec;

use super::fcd::FcdLayer;
use crate::error::{Error, Result};
use crate::math;

/// Mean softmax cross-entropy over a batch of logit rows. Returns the loss
/// and `d loss / d logits`, already divided by the batch size.
pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("cross-entropy batch"));
    }
    if logits.len() != labels.len() {
        return Err(Error::shape("cross-entropy labels", logits.len(), labels.len()));
    }
    let batch = logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &label) in logits.iter().zip(labels) {
        if label >= row.len() {
            return Err(Error::LabelOutOfRange { label, n_class: row.len() });
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = math::ln(row.iter().map(|&z| math::exp(z - max)).sum::<f64>()) + max;
        total += log_sum - row[label];
        let mut g = math::softmax(row);
        g[label] -= 1.0;
        g.iter_mut().for_each(|v| *v /= batch);
        grads.push(g);
    }
    Ok((total / batch, grads))
}

/// Sum of squared off-diagonal Gram entries of the rows of a `rows x cols` matrix.
pub fn ortho_penalty(w: &[f64], rows: usize, cols: usize) -> f64 {
    let mut total = 0.0;
    for a in 0..rows {
        for b in (a + 1)..rows {
            let g = math::dot(&w[a * cols..(a + 1) * cols], &w[b * cols..(b + 1) * cols]);
            total += 2.0 * g * g;
        }
    }
    total
}

/// Orthogonality regulariser over the FC-D bases. Returns `L_R` and adds
/// `scale * dL_R/dW` into each basis gradient (skipped when `scale == 0`).
pub fn ortho_reg(layers: &mut [FcdLayer], scale: f64) -> f64 {
    let mut total = 0.0;
    for layer in layers.iter_mut() {
        let (d, cols) = (layer.d, layer.in_dim * layer.out_dim);
        let w = &layer.weight.value;
        let mut gram = vec![0.0; d * d];
        for a in 0..d {
            for b in (a + 1)..d {
                let g = math::dot(&w[a * cols..(a + 1) * cols], &w[b * cols..(b + 1) * cols]);
                gram[a * d + b] = g;
                gram[b * d + a] = g;
                total += 2.0 * g * g;
            }
        }
        if scale != 0.0 {
            for a in 0..d {
                for b in 0..d {
                    if a != b && gram[a * d + b] != 0.0 {
                        let coef = 4.0 * scale * gram[a * d + b];
                        let (src, dst) = (b * cols, a * cols);
                        for c in 0..cols {
                            layer.weight.grad[dst + c] += coef * w[src + c];
                        }
                    }
                }
            }
        }
    }
    total
}

pub fn total_loss(classification: f64, regulariser: f64, beta: f64) -> f64 {
    classification + beta * regulariser
}
