//! Softmax and cross-entropy.

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Probabilities are floored at this value inside `ln` to avoid `-inf`.
pub const LOG_CLAMP: f64 = 1e-12;

/// Numerically stable softmax of a single logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Row-wise softmax of a `batch × classes` logit tensor.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let w = out.row_len();
    if w > 0 {
        out.data_mut().chunks_exact_mut(w).for_each(softmax_in_place);
    }
    out
}

/// Mean negative log-likelihood of the correct (local) class indices.
pub fn cross_entropy(probabilities: &Tensor, labels: &[usize]) -> Result<f64> {
    let classes = probabilities.row_len();
    if probabilities.rows() != labels.len() {
        return Err(Error::usage(format!(
            "{} probability rows for {} labels",
            probabilities.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::usage(format!(
                "label index {y} out of range for {classes} classifier rows"
            )));
        }
        total -= probabilities.row(i)[y].max(LOG_CLAMP).ln();
    }
    Ok(total / labels.len() as f64)
}
