//! Federated learning with heterogeneous and private client label sets.
//!
//! The crate is a deterministic single-process simulator:
//!
//! * [`nn`] holds the encoder/classifier models, losses and optimizers.
//! * [`data`] parses IDX and CIFAR-10 binaries, partitions datasets into
//!   clients with label subsets, and generates synthetic subset-consistent
//!   tasks.
//! * [`federation`] runs FedAvg, FedProx and FedRS rounds, with the
//!   per-label classifier averaging used when label sets are private.
//! * [`combiner`] combines client classifiers on the server, either exactly
//!   at a fixed input or by tuning the server classifier on unlabeled data.
//! * [`metrics`] and [`experiment`] cover evaluation, snapshot selection,
//!   bootstrap intervals, config files and result tables.

pub mod checks;
pub mod combiner;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
