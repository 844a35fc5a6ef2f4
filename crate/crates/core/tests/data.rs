use std::collections::HashSet;

use labelfed::data::idx::{encode_idx_images, encode_idx_labels};
use labelfed::data::{covers, partition, LabelSet, PartitionConfig, SyntheticTask};
use labelfed::experiment::{load_data, run, ExperimentConfig};
use labelfed::nn::Tensor;
use labelfed::rng::stream;
use labelfed::Error;
use proptest::prelude::*;
use rand::Rng;

fn images(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = stream(seed, &[0]);
    let data: Vec<f64> = (0..n * 28 * 28).map(|_| rng.random_range(0..=255u8) as f64 / 255.0).collect();
    let labels = (0..n).map(|i| i % 10).collect();
    (Tensor::new(vec![n, 1, 28, 28], data).unwrap(), labels)
}

fn write_split(dir: &std::path::Path, prefix: &str, n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let (x, y) = images(n, seed);
    std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), encode_idx_images(&x).unwrap()).unwrap();
    std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), encode_idx_labels(&y)).unwrap();
    (x, y)
}

#[test]
fn fashion_directory_loads_and_trains() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = write_split(dir.path(), "train", 300, 1);
    write_split(dir.path(), "t10k", 50, 2);
    let text = format!(
        "dataset = fashion-mnist\ndata_dir = {}\nencoder = mlp\nhidden = 8\nclients = 3\nlabels_per_client = 4\n\
         samples_per_client = 40\nunlabeled_pool_size = 20\nrounds = 2\nseeds = 0\n",
        dir.path().display()
    );
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let data = load_data(&cfg).unwrap();
    assert_eq!(data.train.images, x);
    assert_eq!(data.train.labels, y);
    assert_eq!(data.test.len(), 50);
    let out = run(&cfg, &data).unwrap();
    assert_eq!(out.failed(), 0);
    assert_eq!(out.cells[0].result.as_ref().unwrap().history.len(), 2);
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("dataset = fashion-mnist\ndata_dir = {}\n", dir.path().display());
    let cfg = ExperimentConfig::parse(&text).unwrap();
    assert!(matches!(load_data(&cfg), Err(Error::Io { .. })));
}

#[test]
fn real_dataset_needs_a_directory() {
    let cfg = ExperimentConfig::parse("dataset = cifar10\n").unwrap();
    let err = load_data(&cfg).unwrap_err();
    assert!(err.to_string().contains("data_dir"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn partitions_are_disjoint_covering_and_sized(
        seed in 0u64..10_000,
        classes in 2usize..8,
        clients in 1usize..6,
        l_offset in 0usize..6,
        samples in 5usize..40,
    ) {
        let labels_per_client = 2 + l_offset % (classes - 1);
        prop_assume!(clients * labels_per_client >= classes);
        let task = SyntheticTask::gaussian_mixture(3, classes, 1.0, 1.0, &mut stream(seed, &[1])).unwrap();
        let data = task.generate(clients * samples * classes + 200, &mut stream(seed, &[2])).unwrap();
        let cfg = PartitionConfig {
            clients,
            labels_per_client,
            samples_per_client: samples,
            unlabeled_pool_size: 30,
            val_fraction: 0.2,
        };
        let plan = partition(&data, &cfg, &mut stream(seed, &[3])).unwrap();
        prop_assert_eq!(&plan, &partition(&data, &cfg, &mut stream(seed, &[3])).unwrap());

        let sets: Vec<LabelSet> = plan.label_sets();
        prop_assert!(covers(&sets, classes));
        let mut seen = HashSet::new();
        for c in &plan.clients {
            prop_assert_eq!(c.labels.len(), labels_per_client);
            prop_assert_eq!(c.train.len() + c.val.len(), samples);
            for i in c.samples() {
                prop_assert!(c.labels.contains(data.labels[i]));
                prop_assert!(seen.insert(i));
            }
        }
        prop_assert_eq!(plan.unlabeled_pool.len(), 30);
        for &i in &plan.unlabeled_pool {
            prop_assert!(seen.insert(i));
        }
    }
}
