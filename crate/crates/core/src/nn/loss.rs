use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Probabilities are floored here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Cross-entropy of `q` against a one-hot target.
pub fn cross_entropy(true_onehot: &[f64], q: &[f64]) -> f64 {
    true_onehot
        .iter()
        .zip(q)
        .filter(|(p, _)| **p != 0.0)
        .map(|(p, q)| -p * floored_ln(*q))
        .sum()
}

/// `-ln q[label]` with the probability floor applied.
#[inline]
pub fn cross_entropy_index(label: usize, q: &[f64]) -> f64 {
    -floored_ln(q[label])
}

// `f64::max` would swallow a NaN here and hide a poisoned forward pass.
#[inline]
fn floored_ln(q: f64) -> f64 {
    if q < PROB_FLOOR {
        PROB_FLOOR.ln()
    } else {
        q.ln()
    }
}

/// Batch-mean cross-entropy of row-wise probabilities.
pub fn mean_cross_entropy(probs: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let total: f64 = probs
        .row_iter()
        .zip(labels)
        .map(|(q, &y)| cross_entropy_index(y, q))
        .sum();
    total / labels.len() as f64
}

/// Gradient of `cross_entropy(onehot(label), softmax(z))` with respect to `z`.
pub fn softmax_cross_entropy_grad(probs: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= probs.len() {
        return Err(Error::Index {
            what: "class label",
            index: label,
            len: probs.len(),
        });
    }
    let mut g = probs.to_vec();
    g[label] -= 1.0;
    Ok(g)
}

/// Logit gradient of `scale * mean_cross_entropy` for a whole batch.
pub(crate) fn batch_logit_grad(probs: &Matrix, labels: &[usize], scale: f64) -> Result<Matrix> {
    let n = labels.len().max(1) as f64;
    let mut g = probs.clone();
    for (r, &y) in labels.iter().enumerate() {
        let row = g.row_mut(r);
        if y >= row.len() {
            return Err(Error::Index {
                what: "class label",
                index: y,
                len: row.len(),
            });
        }
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v *= scale / n);
    }
    Ok(g)
}

/// `beta` times the summed squared entries of every matrix.
pub fn l2_penalty(weights: &[&Matrix], beta: f64) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    beta * weights.iter().map(|w| w.sum_squares()).sum::<f64>()
}
