//! Central-tuning objectives comparing the server's full-label prediction
//! `h(·|x)` with client predictions `h_k(·|x)` over each client's labels.
//!
//! * pairwise: `Σ_k w_k Σ_{y<y' ∈ Y_k} (h_k(y) h(y') − h_k(y') h(y))²`,
//!   each unordered pair counted once;
//! * mse: `Σ_k w_k Σ_{y ∈ Y_k} (h_k(y) − h(y))²`.
//!
//! Both are averaged over the batch.

use serde::{Deserialize, Serialize};

use crate::data::LabelSet;
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningLoss {
    Pairwise,
    Mse,
}

/// A client's predicted distribution over its own labels for a batch of
/// inputs (`batch × |labels|`, columns in label-set order).
#[derive(Debug, Clone, PartialEq)]
pub struct ClientPrediction {
    pub client: usize,
    pub labels: LabelSet,
    pub probs: Tensor,
}

impl ClientPrediction {
    pub fn new(client: usize, labels: LabelSet, probs: Tensor) -> Result<Self> {
        if probs.row_len() != labels.len() && probs.rows() > 0 {
            return Err(Error::usage(format!(
                "client {client} predicts {} classes for a label set of {}",
                probs.row_len(),
                labels.len()
            )));
        }
        Ok(ClientPrediction { client, labels, probs })
    }

    /// Prediction at a single input.
    pub fn single(client: usize, labels: LabelSet, probs: Vec<f64>) -> Result<Self> {
        let n = probs.len();
        Self::new(client, labels, Tensor::new(vec![1, n], probs)?)
    }

    /// Same prediction restricted to a subset of batch rows.
    pub fn select_rows(&self, rows: &[usize]) -> ClientPrediction {
        ClientPrediction {
            client: self.client,
            labels: self.labels.clone(),
            probs: self.probs.select_rows(rows),
        }
    }
}

fn check(central: &Tensor, preds: &[ClientPrediction], weights: &[f64]) -> Result<()> {
    if preds.len() != weights.len() {
        return Err(Error::usage(format!(
            "{} client predictions but {} weights",
            preds.len(),
            weights.len()
        )));
    }
    let c = central.row_len();
    for p in preds {
        if p.probs.rows() != central.rows() {
            return Err(Error::usage(format!(
                "client {} predicted {} inputs, central model {}",
                p.client,
                p.probs.rows(),
                central.rows()
            )));
        }
        if p.labels.global_labels().iter().any(|&g| g >= c) {
            return Err(Error::usage(format!("client {} holds a label outside the central set", p.client)));
        }
    }
    Ok(())
}

/// Loss value and its gradient with respect to the central probabilities.
pub fn loss_and_gradient(
    kind: TuningLoss,
    central: &Tensor,
    preds: &[ClientPrediction],
    weights: &[f64],
) -> Result<(f64, Tensor)> {
    check(central, preds, weights)?;
    let n = central.rows();
    let mut grad = Tensor::zeros(central.shape().to_vec());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    for b in 0..n {
        let h = central.row(b);
        let g = grad.row_mut(b);
        for (p, &w) in preds.iter().zip(weights) {
            let a = p.probs.row(b);
            let ys = p.labels.global_labels();
            match kind {
                TuningLoss::Pairwise => {
                    for i in 0..ys.len() {
                        for j in i + 1..ys.len() {
                            let (y, y2) = (ys[i], ys[j]);
                            let r = a[i] * h[y2] - a[j] * h[y];
                            total += w * r * r;
                            g[y2] += 2.0 * w * r * a[i] * inv;
                            g[y] -= 2.0 * w * r * a[j] * inv;
                        }
                    }
                }
                TuningLoss::Mse => {
                    for (i, &y) in ys.iter().enumerate() {
                        let r = a[i] - h[y];
                        total += w * r * r;
                        g[y] -= 2.0 * w * r * inv;
                    }
                }
            }
        }
    }
    Ok((total * inv, grad))
}

pub fn pairwise_loss(central: &Tensor, preds: &[ClientPrediction], weights: &[f64]) -> Result<f64> {
    Ok(loss_and_gradient(TuningLoss::Pairwise, central, preds, weights)?.0)
}

pub fn mse_loss(central: &Tensor, preds: &[ClientPrediction], weights: &[f64]) -> Result<f64> {
    Ok(loss_and_gradient(TuningLoss::Mse, central, preds, weights)?.0)
}

/// Client probabilities spread onto the central label set, zero for labels
/// the client does not hold.
fn zero_filled(p: &ClientPrediction, row: usize, num_labels: usize) -> Vec<f64> {
    let mut out = vec![0.0; num_labels];
    for (i, &g) in p.labels.global_labels().iter().enumerate() {
        out[g] = p.probs.row(row)[i];
    }
    out
}

/// Pairwise loss with pairs drawn from the whole central label set; client
/// probabilities of labels they do not hold count as zero. Returns the value
/// and the gradient with respect to the central probabilities.
pub fn pairwise_variant_loss_and_gradient(
    central: &Tensor,
    preds: &[ClientPrediction],
    weights: &[f64],
) -> Result<(f64, Tensor)> {
    check(central, preds, weights)?;
    let n = central.rows();
    let c = central.row_len();
    let mut grad = Tensor::zeros(central.shape().to_vec());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    for b in 0..n {
        let p = central.row(b);
        let g = grad.row_mut(b);
        for (pred, &w) in preds.iter().zip(weights) {
            let h = zero_filled(pred, b, c);
            for i in 0..c {
                for j in i + 1..c {
                    let r = h[j] * p[i] - h[i] * p[j];
                    total += w * r * r;
                    g[i] += 2.0 * w * r * h[j] * inv;
                    g[j] -= 2.0 * w * r * h[i] * inv;
                }
            }
        }
    }
    Ok((total * inv, grad))
}

/// `∂/∂p_ŷ` of the central-set pairwise variant at a single input, for a
/// label `ŷ` that no client holds.
pub fn missing_label_gradient(central: &[f64], preds: &[ClientPrediction], weights: &[f64], missing: usize) -> Result<f64> {
    if missing >= central.len() {
        return Err(Error::usage(format!("label {missing} outside the central set")));
    }
    if let Some(p) = preds.iter().find(|p| p.labels.contains(missing)) {
        return Err(Error::usage(format!("label {missing} is held by client {}", p.client)));
    }
    let t = Tensor::new(vec![1, central.len()], central.to_vec())?;
    let (_, grad) = pairwise_variant_loss_and_gradient(&t, preds, weights)?;
    Ok(grad.row(0)[missing])
}
