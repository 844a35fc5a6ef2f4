//! Dataset parsing, client partitioning and synthetic tasks.

pub mod cifar;
mod dataset;
pub mod idx;
mod labelset;
pub mod partition;
pub mod synthetic;

pub use cifar::parse_cifar_bin;
pub use dataset::{Dataset, Provenance};
pub use idx::{parse_idx, IdxPart};
pub use labelset::{covers, LabelSet};
pub use partition::{partition, PartitionConfig, PartitionPlan};
pub use synthetic::{synth_generate, SyntheticTask};
