//! Tuning the server classifier against client predictions on an unlabeled
//! pool. The encoder is frozen: representations are computed once and only
//! the classifier rows move.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{loss_and_gradient, ClientPrediction, TuningLoss};
use crate::data::LabelSet;
use crate::error::{Error, Result};
use crate::nn::{Classifier, Model, OptimizerKind, OptimizerState, ParameterSet, Tensor};
use crate::rng::StreamRng;

/// Tuning is undone when it ends above this multiple of the starting loss.
pub const SANITY_FACTOR: f64 = 1.01;

const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions {
    pub loss: TuningLoss,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

impl TuneOptions {
    pub fn new(loss: TuningLoss) -> Self {
        TuneOptions {
            loss,
            epochs: 3,
            batch_size: 64,
            lr: OptimizerState::DEFAULT_LR,
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TuneReport {
    pub params: ParameterSet,
    pub initial_loss: f64,
    /// Pool loss after each completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Pool loss of the returned parameters.
    pub final_loss: f64,
    pub reverted: bool,
    pub aborted: Option<String>,
}

/// Each client's predicted distribution over its own labels on `inputs`.
/// A client model may carry either its own rows or the full label set; in
/// the latter case the full softmax is renormalized onto the client's labels.
pub fn client_predictions(
    model: &Model,
    clients: &[(LabelSet, &ParameterSet)],
    inputs: &Tensor,
) -> Result<Vec<ClientPrediction>> {
    clients
        .par_iter()
        .enumerate()
        .map(|(k, (labels, params))| {
            let probs = model.predict(params, inputs)?;
            let rows = params.num_labels();
            let probs = if rows == labels.len() {
                probs
            } else if labels.global_labels().iter().all(|&g| g < rows) {
                let mut out = Tensor::zeros(vec![inputs.rows(), labels.len()]);
                for i in 0..inputs.rows() {
                    let full = probs.row(i);
                    let dst = out.row_mut(i);
                    for (d, &g) in dst.iter_mut().zip(labels.global_labels()) {
                        *d = full[g];
                    }
                    let s: f64 = dst.iter().sum();
                    if s > 0.0 {
                        dst.iter_mut().for_each(|v| *v /= s);
                    } else {
                        dst.iter_mut().for_each(|v| *v = 1.0 / labels.len() as f64);
                    }
                }
                out
            } else {
                return Err(Error::usage(format!(
                    "client {k} model has {rows} rows but {} labels",
                    labels.len()
                )));
            };
            ClientPrediction::new(k, labels.clone(), probs)
        })
        .collect()
}

/// Gradient with respect to logits from a gradient with respect to softmax
/// probabilities.
fn softmax_backward(probs: &Tensor, dprobs: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(probs.shape().to_vec());
    for i in 0..probs.rows() {
        let p = probs.row(i);
        let g = dprobs.row(i);
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for (o, (pv, gv)) in out.row_mut(i).iter_mut().zip(p.iter().zip(g)) {
            *o = pv * (gv - dot);
        }
    }
    out
}

/// Tuning loss on a batch of frozen representations and its gradient with
/// respect to the classifier parameters.
pub fn tuning_loss_gradient(
    classifier: &Classifier,
    reps: &Tensor,
    preds: &[ClientPrediction],
    weights: &[f64],
    kind: TuningLoss,
) -> Result<(f64, Classifier)> {
    let probs = classifier.probabilities(reps);
    let (loss, dprobs) = loss_and_gradient(kind, &probs, preds, weights)?;
    let dlogits = softmax_backward(&probs, &dprobs);
    let mut grad = Classifier::zeros(classifier.rows(), classifier.dim());
    classifier.backward_into(reps, &dlogits, &mut grad);
    Ok((loss, grad))
}

fn pool_loss(
    classifier: &Classifier,
    reps: &Tensor,
    preds: &[ClientPrediction],
    weights: &[f64],
    kind: TuningLoss,
) -> Result<f64> {
    let n = reps.rows();
    let chunks: Vec<Vec<usize>> = (0..n)
        .collect::<Vec<_>>()
        .chunks(EVAL_CHUNK)
        .map(|c| c.to_vec())
        .collect();
    let partial: Vec<f64> = chunks
        .par_iter()
        .map(|idx| {
            let probs = classifier.probabilities(&reps.select_rows(idx));
            let sub: Vec<ClientPrediction> = preds.iter().map(|p| p.select_rows(idx)).collect();
            let (l, _) = loss_and_gradient(kind, &probs, &sub, weights)?;
            Ok(l * idx.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(partial.iter().sum::<f64>() / n as f64)
}

/// Tunes the classifier of `server` so that its predictions on `pool` agree
/// with the client predictions under the chosen loss. The encoder part of
/// the returned parameters is `server`'s, untouched.
///
/// A non-finite loss aborts tuning and returns `server` unchanged; so does a
/// final pool loss above `SANITY_FACTOR` times the initial one.
pub fn central_tune(
    model: &Model,
    server: &ParameterSet,
    pool: &Tensor,
    preds: &[ClientPrediction],
    weights: &[f64],
    opts: &TuneOptions,
    rng: &mut StreamRng,
) -> Result<TuneReport> {
    model.check_params(server)?;
    if pool.rows() == 0 {
        return Err(Error::usage("central tuning needs a non-empty unlabeled pool"));
    }
    if opts.batch_size == 0 {
        return Err(Error::config("tuning batch size must be positive"));
    }
    for p in preds {
        if p.probs.rows() != pool.rows() {
            return Err(Error::usage(format!(
                "client {} predicted {} pool inputs, pool has {}",
                p.client,
                p.probs.rows(),
                pool.rows()
            )));
        }
    }
    let reps = model.encode(server, pool)?;
    let kind = opts.loss;
    let initial_loss = pool_loss(&server.theta_psi, &reps, preds, weights, kind)?;
    let untouched = |initial_loss: f64, epoch_losses: Vec<f64>, reverted: bool, aborted: Option<String>| TuneReport {
        params: server.clone(),
        initial_loss,
        epoch_losses,
        final_loss: initial_loss,
        reverted,
        aborted,
    };
    if !initial_loss.is_finite() {
        let msg = "non-finite pool loss before tuning".to_string();
        log::warn!("central tuning aborted: {msg}");
        return Ok(untouched(initial_loss, Vec::new(), false, Some(msg)));
    }

    let mut tuned = ParameterSet { theta_phi: Vec::new(), theta_psi: server.theta_psi.clone() };
    let mut optimizer = OptimizerState::new(opts.optimizer, opts.lr);
    let mut order: Vec<usize> = (0..pool.rows()).collect();
    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(rng);
        for idx in order.chunks(opts.batch_size) {
            let r = reps.select_rows(idx);
            let sub: Vec<ClientPrediction> = preds.iter().map(|p| p.select_rows(idx)).collect();
            let (loss, grad) = tuning_loss_gradient(&tuned.theta_psi, &r, &sub, weights, kind)?;
            if !loss.is_finite() {
                let msg = format!("non-finite batch loss in epoch {epoch}");
                log::warn!("central tuning aborted: {msg}");
                return Ok(untouched(initial_loss, epoch_losses, false, Some(msg)));
            }
            let grad = ParameterSet { theta_phi: Vec::new(), theta_psi: grad };
            if let Err(e) = optimizer.step(&mut tuned, &grad) {
                log::warn!("central tuning aborted: {e}");
                return Ok(untouched(initial_loss, epoch_losses, false, Some(e.to_string())));
            }
        }
        let l = pool_loss(&tuned.theta_psi, &reps, preds, weights, kind)?;
        if !l.is_finite() {
            let msg = format!("non-finite pool loss after epoch {epoch}");
            log::warn!("central tuning aborted: {msg}");
            return Ok(untouched(initial_loss, epoch_losses, false, Some(msg)));
        }
        epoch_losses.push(l);
    }
    let final_loss = epoch_losses.last().copied().unwrap_or(initial_loss);
    if final_loss > SANITY_FACTOR * initial_loss {
        log::warn!("central tuning raised the pool loss from {initial_loss} to {final_loss}; keeping the aggregate");
        return Ok(untouched(initial_loss, epoch_losses, true, None));
    }
    let params = ParameterSet { theta_phi: server.theta_phi.clone(), theta_psi: tuned.theta_psi };
    Ok(TuneReport { params, initial_loss, epoch_losses, final_loss, reverted: false, aborted: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::EncoderSpec;
    use crate::rng::stream;

    fn setup() -> (Model, ParameterSet, Tensor, Vec<ClientPrediction>) {
        let model = Model::new(EncoderSpec::Mlp { input_dim: 4, hidden: vec![6] }).unwrap();
        let mut rng = stream(1, &[0]);
        let server = model.init_params(3, &mut rng);
        let pool = crate::nn::model::random_batch(&mut rng, 40, 4);
        let a = model.init_params(3, &mut rng);
        let b = model.init_params(3, &mut rng);
        let clients = [(LabelSet::new(vec![0, 1]).unwrap(), &a), (LabelSet::new(vec![1, 2]).unwrap(), &b)];
        let preds = client_predictions(&model, &clients, &pool).unwrap();
        (model, server, pool, preds)
    }

    #[test]
    fn zero_epochs_leaves_model() {
        let (model, server, pool, preds) = setup();
        let mut opts = TuneOptions::new(TuningLoss::Pairwise);
        opts.epochs = 0;
        let r = central_tune(&model, &server, &pool, &preds, &[0.5, 0.5], &opts, &mut stream(2, &[])).unwrap();
        assert_eq!(r.params, server);
        assert!(r.epoch_losses.is_empty());
    }

    #[test]
    fn zero_lr_leaves_model_and_logs_losses() {
        let (model, server, pool, preds) = setup();
        for optimizer in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut opts = TuneOptions::new(TuningLoss::Mse);
            opts.lr = 0.0;
            opts.optimizer = optimizer;
            let r = central_tune(&model, &server, &pool, &preds, &[0.5, 0.5], &opts, &mut stream(2, &[])).unwrap();
            assert_eq!(r.params, server);
            assert_eq!(r.epoch_losses.len(), 3);
            assert!(r.epoch_losses.iter().all(|&l| l == r.initial_loss));
        }
    }

    #[test]
    fn encoder_is_bitwise_frozen() {
        let (model, server, pool, preds) = setup();
        let mut opts = TuneOptions::new(TuningLoss::Pairwise);
        opts.lr = 0.05;
        let r = central_tune(&model, &server, &pool, &preds, &[0.5, 0.5], &opts, &mut stream(2, &[])).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&r.params.theta_phi), bits(&server.theta_phi));
        assert_ne!(r.params.theta_psi, server.theta_psi);
    }

    #[test]
    fn full_rows_are_renormalized_onto_client_labels() {
        let model = Model::new(EncoderSpec::Mlp { input_dim: 2, hidden: vec![] }).unwrap();
        let mut rng = stream(4, &[]);
        let p = model.init_params(4, &mut rng);
        let x = crate::nn::model::random_batch(&mut rng, 3, 2);
        let labels = LabelSet::new(vec![3, 1]).unwrap();
        let from_full = client_predictions(&model, &[(labels.clone(), &p)], &x).unwrap();
        let restricted = p.restrict(labels.global_labels());
        let direct = client_predictions(&model, &[(labels, &restricted)], &x).unwrap();
        for (a, b) in from_full[0].probs.data().iter().zip(direct[0].probs.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
