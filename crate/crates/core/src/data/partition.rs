//! Splits a labelled dataset into clients that each see a random subset of
//! the labels, plus an unlabeled pool for the server.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data::{covers, Dataset, LabelSet};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Label assignments are re-drawn until every label is held by some client,
/// at most this many times.
pub const MAX_LABEL_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub clients: usize,
    pub labels_per_client: usize,
    pub samples_per_client: usize,
    pub unlabeled_pool_size: usize,
    pub val_fraction: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            clients: 10,
            labels_per_client: 5,
            samples_per_client: 2000,
            unlabeled_pool_size: 5000,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientPartition {
    pub labels: LabelSet,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl ClientPartition {
    pub fn samples(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().chain(&self.val).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub clients: Vec<ClientPartition>,
    pub unlabeled_pool: Vec<usize>,
}

impl PartitionPlan {
    pub fn label_sets(&self) -> Vec<LabelSet> {
        self.clients.iter().map(|c| c.labels.clone()).collect()
    }
}

/// Per-label sample counts for one client: an equal share each, with the
/// remainder handed out one at a time in label order.
pub fn label_quotas(samples: usize, labels: usize) -> Vec<usize> {
    let base = samples / labels;
    let extra = samples % labels;
    (0..labels).map(|i| base + usize::from(i < extra)).collect()
}

fn draw_label_sets(
    num_labels: usize,
    cfg: &PartitionConfig,
    rng: &mut StreamRng,
) -> Result<Vec<LabelSet>> {
    for _ in 0..MAX_LABEL_DRAWS {
        let sets = (0..cfg.clients)
            .map(|_| {
                let mut picked = index::sample(rng, num_labels, cfg.labels_per_client).into_vec();
                picked.sort_unstable();
                LabelSet::new(picked)
            })
            .collect::<Result<Vec<_>>>()?;
        if covers(&sets, num_labels) {
            return Ok(sets);
        }
    }
    Err(Error::config(format!(
        "no label assignment covering all {num_labels} labels after {MAX_LABEL_DRAWS} draws \
         ({} clients x {} labels)",
        cfg.clients, cfg.labels_per_client
    )))
}

pub fn partition(dataset: &Dataset, cfg: &PartitionConfig, rng: &mut StreamRng) -> Result<PartitionPlan> {
    let num_labels = dataset.num_classes;
    if cfg.labels_per_client < 2 || cfg.labels_per_client > num_labels {
        return Err(Error::config(format!(
            "labels per client must lie in 2..={num_labels}, got {}",
            cfg.labels_per_client
        )));
    }
    if cfg.clients == 0 || cfg.samples_per_client == 0 {
        return Err(Error::config("need at least one client and one sample per client"));
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::config(format!("validation fraction {} outside [0, 1)", cfg.val_fraction)));
    }

    let label_sets = draw_label_sets(num_labels, cfg, rng)?;

    let mut pools = dataset.indices_by_label();
    for p in &mut pools {
        p.shuffle(rng);
    }
    let mut cursor = vec![0usize; num_labels];
    let mut used = vec![false; dataset.len()];
    let val_len = (cfg.samples_per_client as f64 * cfg.val_fraction).round() as usize;

    let mut clients = Vec::with_capacity(cfg.clients);
    for (k, labels) in label_sets.into_iter().enumerate() {
        let quotas = label_quotas(cfg.samples_per_client, labels.len());
        let mut samples = Vec::with_capacity(cfg.samples_per_client);
        for (&y, q) in labels.global_labels().iter().zip(quotas) {
            let available = pools[y].len() - cursor[y];
            if available < q {
                return Err(Error::config(format!(
                    "client {k} needs {q} samples of label {y} but only {available} remain"
                )));
            }
            let taken = &pools[y][cursor[y]..cursor[y] + q];
            for &i in taken {
                used[i] = true;
            }
            samples.extend_from_slice(taken);
            cursor[y] += q;
        }
        samples.shuffle(rng);
        let val = samples.split_off(samples.len() - val_len);
        clients.push(ClientPartition {
            labels,
            train: samples,
            val,
        });
    }

    let mut rest: Vec<usize> = (0..dataset.len()).filter(|&i| !used[i]).collect();
    if rest.len() < cfg.unlabeled_pool_size {
        return Err(Error::config(format!(
            "unlabeled pool of {} requested but only {} unused samples remain",
            cfg.unlabeled_pool_size,
            rest.len()
        )));
    }
    rest.shuffle(rng);
    rest.truncate(cfg.unlabeled_pool_size);

    Ok(PartitionPlan {
        clients,
        unlabeled_pool: rest,
    })
}
