//! Experiment driver: config files, sweeps over seeds and settings, and
//! result tables.

mod config;
mod runner;
mod table;

pub use config::{DatasetKind, EncoderKind, ExperimentConfig, SweepPoint, SyntheticConfig};
pub use runner::{
    emit, federation_config, load_data, partition_config, run, run_cell, CellOutcome, ExperimentData,
    ExperimentOutput,
};
pub use table::{round6, AggregateRow, ResultRow, ResultsTable, RowKey, AGGREGATE_HEADER, RESULTS_HEADER};
