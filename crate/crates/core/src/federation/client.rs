//! Client state and local training.

use rand::seq::SliceRandom;

use crate::data::{Dataset, LabelSet};
use crate::error::{Error, Result};
use crate::federation::{FederationConfig, LabelMode, Method, RoundUpdate};
use crate::nn::{cross_entropy, softmax, Model, Network, OptimizerState, ParameterSet, Target};
use crate::rng::{stream, tag};

/// A simulated client. Its datasets store labels as local indices through
/// the label set's reverse index.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub labels: LabelSet,
    pub train: Dataset,
    pub val: Dataset,
    pub optimizer: OptimizerState,
}

fn localize(labels: &LabelSet, data: &Dataset) -> Result<Dataset> {
    let mut out = data.clone();
    out.labels = labels.to_local(&data.labels)?;
    out.num_classes = labels.len();
    Ok(out)
}

impl ClientState {
    /// Builds a client from datasets carrying global labels.
    pub fn new(id: usize, labels: LabelSet, train: &Dataset, val: &Dataset, optimizer: OptimizerState) -> Result<Self> {
        Ok(ClientState {
            id,
            train: localize(&labels, train)?,
            val: localize(&labels, val)?,
            labels,
            optimizer,
        })
    }

    pub fn samples(&self) -> usize {
        self.train.len()
    }

    /// Validation data with labels mapped back to global ids.
    pub fn val_global(&self, num_labels: usize) -> Dataset {
        let mut out = self.val.clone();
        out.labels = self.labels.to_global(&self.val.labels);
        out.num_classes = num_labels;
        out
    }
}

/// `(μ/2)‖θ − θᵗ‖²` over the encoder, plus the classifier in public mode.
/// With private labels the classifier comparison is omitted.
pub fn fedprox_penalty(local: &ParameterSet, global: &ParameterSet, mu: f64, mode: LabelMode) -> f64 {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut total = sq(&local.theta_phi, &global.theta_phi);
    if mode == LabelMode::Public {
        total += sq(local.theta_psi.weights(), global.theta_psi.weights());
        total += sq(local.theta_psi.bias(), global.theta_psi.bias());
    }
    0.5 * mu * total
}

/// Adds the gradient of [`fedprox_penalty`] to `grads`.
pub fn add_fedprox_gradient(
    grads: &mut ParameterSet,
    local: &ParameterSet,
    global: &ParameterSet,
    mu: f64,
    mode: LabelMode,
) {
    let parts = grads
        .slices_mut()
        .into_iter()
        .zip(local.slices())
        .zip(global.slices())
        .enumerate();
    for (i, ((g, l), a)) in parts {
        if i > 0 && mode == LabelMode::Private {
            break;
        }
        for ((gv, lv), av) in g.iter_mut().zip(l).zip(a) {
            *gv += mu * (lv - av);
        }
    }
}

/// Per-class logit multipliers: `alpha` for labels outside the client's
/// set, 1 for labels inside.
pub fn fedrs_logit_scale(labels: &LabelSet, num_labels: usize, alpha: f64) -> Vec<f64> {
    (0..num_labels)
        .map(|y| if labels.contains(y) { 1.0 } else { alpha })
        .collect()
}

/// Softmax over full-label logits after scaling the logits of the classes the
/// client does not hold by `alpha`.
pub fn fedrs_restricted_softmax(logits: &[f64], labels: &LabelSet, alpha: f64, mode: LabelMode) -> Result<Vec<f64>> {
    if mode == LabelMode::Private {
        return Err(Error::config(crate::federation::config::FEDRS_PRIVATE_MESSAGE));
    }
    let scale = fedrs_logit_scale(labels, logits.len(), alpha);
    let scaled: Vec<f64> = logits.iter().zip(&scale).map(|(z, a)| z * a).collect();
    Ok(softmax(&scaled))
}

/// Runs the configured number of local epochs starting from `params` (the
/// parameters the server distributed this round, also the FedProx anchor).
pub fn local_train(
    model: &Model,
    client: &mut ClientState,
    params: &ParameterSet,
    num_labels: usize,
    config: &FederationConfig,
    round: usize,
) -> Result<RoundUpdate> {
    let expected_rows = match config.label_mode {
        LabelMode::Private => client.labels.len(),
        LabelMode::Public => num_labels,
    };
    if params.num_labels() != expected_rows {
        return Err(Error::usage(format!(
            "client {} received {} classifier rows, expected {expected_rows}",
            client.id,
            params.num_labels()
        )));
    }
    let targets: Vec<usize> = match config.label_mode {
        LabelMode::Private => client.train.labels.clone(),
        LabelMode::Public => client.labels.to_global(&client.train.labels),
    };
    let scale = (config.method == Method::FedRs)
        .then(|| fedrs_logit_scale(&client.labels, num_labels, config.fedrs_alpha));
    let prox = config.method == Method::FedProx && config.fedprox_mu > 0.0;

    let mut rng = stream(config.seed, &[tag::CLIENT, client.id as u64, round as u64]);
    let mut theta = params.clone();
    let mut net = Network::new(model);
    let mut order: Vec<usize> = (0..client.train.len()).collect();
    let mut loss_sum = 0.0;
    let mut seen = 0usize;

    for epoch in 0..config.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch = client.train.images.select_rows(chunk);
            let ys: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let pass = net.forward(&theta, &batch, true, Some(&mut rng), scale.as_deref())?;
            let loss = cross_entropy(pass.probabilities(), &ys)?;
            if !loss.is_finite() {
                return Err(Error::numerical(
                    format!("client {} round {round} epoch {epoch}", client.id),
                    format!("non-finite loss {loss}"),
                ));
            }
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
            let mut grads = net.backward(&theta, Target::Labels(&ys))?;
            if prox {
                add_fedprox_gradient(&mut grads, &theta, params, config.fedprox_mu, config.label_mode);
            }
            client.optimizer.step(&mut theta, &grads)?;
        }
    }

    Ok(RoundUpdate {
        client: client.id,
        params: theta,
        samples: client.samples(),
        train_loss: if seen == 0 { 0.0 } else { loss_sum / seen as f64 },
    })
}
