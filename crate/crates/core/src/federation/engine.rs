//! Round orchestration: distribute, train locally, aggregate, optionally
//! tune on the unlabeled pool, evaluate.

use std::time::Instant;

use rayon::prelude::*;

use crate::combiner::{central_tune, client_predictions, TuneOptions, TuneReport, TuningLoss};
use crate::data::{Dataset, LabelSet, PartitionPlan};
use crate::error::{Error, Result};
use crate::federation::{
    aggregate_private, aggregate_public, local_train, ClientState, FederationConfig, LabelMode, Method, RoundUpdate,
    ServerState,
};
use crate::metrics::{accuracy, RoundRecord};
use crate::nn::{Model, OptimizerState, ParameterSet, Tensor};
use crate::rng::{stream, tag};

/// A complete simulated federation.
#[derive(Debug, Clone)]
pub struct Federation {
    pub model: Model,
    pub config: FederationConfig,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    /// Unlabeled inputs available to the server for central tuning.
    pub pool: Tensor,
    pub test: Dataset,
    /// All clients' validation samples with global labels.
    val: Dataset,
}

/// What a single round produced besides the new server state.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub record: RoundRecord,
    pub updates: Vec<RoundUpdate>,
    pub tuning: Option<TuneReport>,
}

impl Federation {
    /// Builds a federation with server parameters drawn from the
    /// `(seed, INIT)` stream. Client datasets carry global labels.
    pub fn new(
        model: Model,
        config: FederationConfig,
        clients: Vec<(LabelSet, Dataset, Dataset)>,
        pool: Tensor,
        test: Dataset,
    ) -> Result<Self> {
        let num_labels = test.num_classes;
        let params = model.init_params(num_labels, &mut stream(config.seed, &[tag::INIT]));
        Self::with_params(model, config, params, clients, pool, test)
    }

    pub fn with_params(
        model: Model,
        config: FederationConfig,
        params: ParameterSet,
        clients: Vec<(LabelSet, Dataset, Dataset)>,
        pool: Tensor,
        test: Dataset,
    ) -> Result<Self> {
        config.validate()?;
        model.check_params(&params)?;
        if clients.is_empty() {
            return Err(Error::config("a federation needs at least one client"));
        }
        if test.num_classes != params.num_labels() {
            return Err(Error::config(format!(
                "test set has {} classes, model {}",
                test.num_classes,
                params.num_labels()
            )));
        }
        if config.method.is_tuning() && pool.rows() == 0 {
            return Err(Error::config(format!("method {} needs a non-empty unlabeled pool", config.method)));
        }
        let label_sets: Vec<LabelSet> = clients.iter().map(|c| c.0.clone()).collect();
        let server = ServerState::new(params, label_sets)?;
        let mut val = Dataset::empty(test.sample_shape(), test.num_classes, test.provenance);
        let mut states = Vec::with_capacity(clients.len());
        for (k, (labels, train, v)) in clients.into_iter().enumerate() {
            val = val.concat(&v)?;
            states.push(ClientState::new(k, labels, &train, &v, OptimizerState::adam(config.lr))?);
        }
        if val.is_empty() {
            return Err(Error::config("clients hold no validation samples"));
        }
        Ok(Federation { model, config, server, clients: states, pool, test, val })
    }

    /// Federation over a partition of `data`.
    pub fn from_plan(model: Model, config: FederationConfig, data: &Dataset, plan: &PartitionPlan, test: Dataset) -> Result<Self> {
        let clients = plan
            .clients
            .iter()
            .map(|c| (c.labels.clone(), data.subset(&c.train), data.subset(&c.val)))
            .collect();
        let pool = data.subset(&plan.unlabeled_pool).images;
        Self::new(model, config, clients, pool, test)
    }

    pub fn num_labels(&self) -> usize {
        self.server.num_labels()
    }

    /// Sample-weighted accuracy of the global model on the clients'
    /// validation splits.
    pub fn val_accuracy(&self) -> Result<f64> {
        accuracy(&self.model, &self.server.params, &self.val)
    }

    pub fn test_accuracy(&self) -> Result<f64> {
        accuracy(&self.model, &self.server.params, &self.test)
    }

    pub fn run_round(&mut self) -> Result<RoundOutcome> {
        let start = Instant::now();
        let round = self.server.round;
        let mode = self.config.label_mode;
        let num_labels = self.num_labels();
        let distributed: Vec<ParameterSet> = (0..self.clients.len())
            .map(|k| self.server.distribute(k, mode))
            .collect::<Result<_>>()?;

        let (model, config) = (&self.model, &self.config);
        let updates: Vec<RoundUpdate> = self
            .clients
            .par_iter_mut()
            .zip(distributed.par_iter())
            .map(|(client, params)| local_train(model, client, params, num_labels, config, round))
            .collect::<Result<_>>()?;

        let aggregate = match mode {
            LabelMode::Public => aggregate_public(&updates)?,
            LabelMode::Private => aggregate_private(&self.server.params, &updates, &self.server.label_sets)?,
        };

        let tuning = match self.config.method {
            Method::TunePairwise => Some(self.tune(&aggregate, &updates, TuningLoss::Pairwise, round)?),
            Method::TuneMse => Some(self.tune(&aggregate, &updates, TuningLoss::Mse, round)?),
            _ => None,
        };
        self.server.params = match &tuning {
            Some(report) => report.params.clone(),
            None => aggregate,
        };
        self.server.round += 1;

        let n: usize = updates.iter().map(|u| u.samples).sum();
        let train_loss = if n == 0 {
            0.0
        } else {
            updates.iter().map(|u| u.train_loss * u.samples as f64).sum::<f64>() / n as f64
        };
        let (tuning_loss, tuning_trace) = match &tuning {
            Some(r) => {
                let mut trace = vec![r.initial_loss];
                trace.extend(&r.epoch_losses);
                (Some(r.final_loss), trace)
            }
            None => (None, Vec::new()),
        };
        let record = RoundRecord {
            round,
            train_loss,
            val_accuracy: self.val_accuracy()?,
            test_accuracy: self.test_accuracy()?,
            tuning_loss,
            tuning_trace,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        Ok(RoundOutcome { record, updates, tuning })
    }

    fn tune(&self, aggregate: &ParameterSet, updates: &[RoundUpdate], loss: TuningLoss, round: usize) -> Result<TuneReport> {
        let clients: Vec<(LabelSet, &ParameterSet)> = updates
            .iter()
            .map(|u| (self.server.label_sets[u.client].clone(), &u.params))
            .collect();
        let preds = client_predictions(&self.model, &clients, &self.pool)?;
        let n: usize = updates.iter().map(|u| u.samples).sum();
        let weights: Vec<f64> = updates.iter().map(|u| u.samples as f64 / n as f64).collect();
        let opts = TuneOptions {
            loss,
            epochs: self.config.tuning_epochs,
            batch_size: self.config.batch_size,
            lr: self.config.lr,
            optimizer: self.config.tuning_optimizer,
        };
        let mut rng = stream(self.config.seed, &[tag::TUNING, round as u64]);
        let report = central_tune(&self.model, aggregate, &self.pool, &preds, &weights, &opts, &mut rng)?;
        if let Some(reason) = &report.aborted {
            log::warn!("round {round}: tuning aborted ({reason}); keeping the aggregate");
        }
        Ok(report)
    }

    /// Runs all configured rounds and returns one record per round.
    pub fn run(&mut self) -> Result<Vec<RoundRecord>> {
        let mut history = Vec::with_capacity(self.config.rounds);
        for _ in 0..self.config.rounds {
            let out = self.run_round()?;
            log::debug!(
                "round {} loss {:.4} val {:.4} test {:.4}",
                out.record.round,
                out.record.train_loss,
                out.record.val_accuracy,
                out.record.test_accuracy
            );
            history.push(out.record);
        }
        Ok(history)
    }
}
