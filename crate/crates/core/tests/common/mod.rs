#![allow(dead_code)]

use labelfed::data::{Dataset, LabelSet, SyntheticTask};
use labelfed::federation::{Federation, FederationConfig, LabelMode, Method};
use labelfed::nn::{EncoderSpec, Model};
use labelfed::rng::stream;

pub const DIM: usize = 6;

pub fn task(num_labels: usize) -> SyntheticTask {
    SyntheticTask::gaussian_mixture(DIM, num_labels, 1.2, 1.0, &mut stream(77, &[1])).unwrap()
}

/// Samples from the global task restricted to `labels`.
pub fn client_data(task: &SyntheticTask, labels: &LabelSet, n: usize, seed: u64) -> Dataset {
    let pool = task.generate(n * task.num_labels * 2, &mut stream(seed, &[2])).unwrap();
    let keep: Vec<usize> = (0..pool.len()).filter(|&i| labels.contains(pool.labels[i])).take(n).collect();
    assert_eq!(keep.len(), n, "not enough samples for {labels:?}");
    pool.subset(&keep)
}

pub fn config(method: Method, mode: LabelMode, rounds: usize, seed: u64) -> FederationConfig {
    FederationConfig { method, label_mode: mode, rounds, batch_size: 16, lr: 5e-3, seed, ..FederationConfig::default() }
}

pub fn mlp() -> Model {
    Model::new(EncoderSpec::Mlp { input_dim: DIM, hidden: vec![12] }).unwrap()
}

/// A small federation over the given label sets: 60 train and 15 validation
/// samples per client, a 40-sample pool and a 200-sample test set.
pub fn federation(num_labels: usize, sets: &[LabelSet], cfg: FederationConfig) -> Federation {
    let t = task(num_labels);
    let clients = sets
        .iter()
        .enumerate()
        .map(|(k, s)| {
            (
                s.clone(),
                client_data(&t, s, 60, 100 + k as u64),
                client_data(&t, s, 15, 200 + k as u64),
            )
        })
        .collect();
    let pool = t.generate(40, &mut stream(5, &[3])).unwrap().images;
    let test = t.generate(200, &mut stream(6, &[4])).unwrap();
    Federation::new(mlp(), cfg, clients, pool, test).unwrap()
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}
