//! Runs every (sweep point, seed) cell of an experiment.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use super::config::{DatasetKind, ExperimentConfig, SweepPoint};
use super::table::{write_file, ResultRow, ResultsTable, RowKey};
use crate::data::cifar::load_cifar10;
use crate::data::idx::load_fashion_mnist;
use crate::data::{partition, Dataset, PartitionConfig, SyntheticTask};
use crate::error::{Error, Result};
use crate::federation::{Federation, FederationConfig};
use crate::metrics::RunResult;
use crate::nn::Model;
use crate::rng::{stream, tag};

#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Loads the dataset named by the config. Synthetic data depends only on
/// the task seed, so every run seed sees the same task.
pub fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    match cfg.dataset {
        DatasetKind::Synthetic => {
            let s = &cfg.synthetic;
            let task = SyntheticTask::gaussian_mixture(
                s.dim,
                s.classes,
                s.separation,
                s.noise,
                &mut stream(s.task_seed, &[tag::SYNTHETIC, 0]),
            )?;
            Ok(ExperimentData {
                train: task.generate(s.train_size, &mut stream(s.task_seed, &[tag::SYNTHETIC, 1]))?,
                test: task.generate(s.test_size, &mut stream(s.task_seed, &[tag::SYNTHETIC, 2]))?,
            })
        }
        kind => {
            let dir = cfg
                .data_dir
                .as_deref()
                .ok_or_else(|| Error::key("data_dir", format!("required for {kind}")))?;
            let load = match kind {
                DatasetKind::FashionMnist => load_fashion_mnist,
                _ => load_cifar10,
            };
            Ok(ExperimentData { train: load(dir, true)?, test: load(dir, false)? })
        }
    }
}

pub fn partition_config(cfg: &ExperimentConfig, point: &SweepPoint) -> PartitionConfig {
    PartitionConfig {
        clients: cfg.clients,
        labels_per_client: point.labels_per_client,
        samples_per_client: cfg.samples_per_client,
        unlabeled_pool_size: cfg.unlabeled_pool_size,
        val_fraction: cfg.val_fraction,
    }
}

pub fn federation_config(cfg: &ExperimentConfig, point: &SweepPoint, seed: u64) -> FederationConfig {
    FederationConfig {
        method: point.method,
        label_mode: point.label_mode,
        rounds: cfg.rounds,
        local_epochs: point.local_epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        fedprox_mu: cfg.fedprox_mu,
        fedrs_alpha: cfg.fedrs_alpha,
        tuning_epochs: cfg.tuning_epochs,
        tuning_optimizer: cfg.tuning_optimizer,
        seed,
    }
}

/// Partitions, federates and records a single cell.
pub fn run_cell(cfg: &ExperimentConfig, data: &ExperimentData, point: &SweepPoint, seed: u64) -> Result<RunResult> {
    let pcfg = partition_config(cfg, point);
    let fcfg = federation_config(cfg, point, seed);
    let plan = partition(&data.train, &pcfg, &mut stream(seed, &[tag::PARTITION]))?;
    let model = Model::new(cfg.encoder_spec(data.train.sample_shape())?)?;
    let echo = json!({
        "dataset": cfg.dataset,
        "encoder": model.spec(),
        "partition": pcfg,
        "federation": fcfg,
    });
    let mut fed = Federation::from_plan(model, fcfg, &data.train, &plan, data.test.clone())?;
    let history = fed.run()?;
    RunResult::new(echo, seed, history)
}

#[derive(Debug)]
pub struct CellOutcome {
    pub point: SweepPoint,
    pub seed: u64,
    pub result: Result<RunResult>,
}

impl CellOutcome {
    /// File stem shared by the cell's run files.
    pub fn stem(&self, dataset: DatasetKind) -> String {
        let p = &self.point;
        format!(
            "{}_{}_{}_L{}_E{}_seed{}",
            dataset, p.method, p.label_mode, p.labels_per_client, p.local_epochs, self.seed
        )
    }
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub table: ResultsTable,
    pub cells: Vec<CellOutcome>,
}

impl ExperimentOutput {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_err()).count()
    }
}

/// Runs every cell. Cells are independent and execute on a pool of
/// `cfg.workers` threads; results come back in (point, seed) order.
pub fn run(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let cells: Vec<(SweepPoint, u64)> = cfg
        .sweep()
        .into_iter()
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(point, seed)| {
                let result = run_cell(cfg, data, &point, seed);
                if let Err(e) = &result {
                    log::error!(
                        "cell {} {} L={} E={} seed {seed} failed: {e}",
                        point.method,
                        point.label_mode,
                        point.labels_per_client,
                        point.local_epochs
                    );
                }
                CellOutcome { point, seed, result }
            })
            .collect()
    });
    let rows = outcomes
        .iter()
        .map(|c| {
            let ok = c.result.as_ref().ok();
            ResultRow {
                key: RowKey {
                    dataset: cfg.dataset.to_string(),
                    method: c.point.method.to_string(),
                    label_mode: c.point.label_mode.to_string(),
                    labels_per_client: c.point.labels_per_client,
                    local_epochs: c.point.local_epochs,
                },
                seed: c.seed,
                best_test_acc: ok.map(|r| r.best_test_accuracy),
                best_round: ok.map(|r| r.best_round),
            }
        })
        .collect();
    let table = ResultsTable::from_rows(rows, cfg.confidence)?;
    Ok(ExperimentOutput { table, cells: outcomes })
}

/// Writes the tables into `dir`, and into `dir/runs` one `.json` run result
/// plus one `.jsonl` round history (one line per round) per successful cell.
pub fn emit(output: &ExperimentOutput, dataset: DatasetKind, dir: &Path) -> Result<()> {
    output.table.emit(dir)?;
    let runs: PathBuf = dir.join("runs");
    std::fs::create_dir_all(&runs).map_err(|e| Error::io(runs.display().to_string(), e))?;
    for cell in &output.cells {
        let Ok(result) = &cell.result else { continue };
        let stem = cell.stem(dataset);
        write_file(&runs.join(format!("{stem}.json")), &(serde_json::to_string_pretty(result)? + "\n"))?;
        let mut lines = String::new();
        for r in &result.history {
            lines.push_str(&serde_json::to_string(r)?);
            lines.push('\n');
        }
        write_file(&runs.join(format!("{stem}.jsonl")), &lines)?;
    }
    Ok(())
}
