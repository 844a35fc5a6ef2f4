//! Federated training with heterogeneous client label sets.

mod aggregate;
mod client;
pub mod config;
mod engine;
mod server;

pub use aggregate::{aggregate_private, aggregate_public, private_weights, AggregationWeights, RoundUpdate, RowTerm};
pub use client::{
    add_fedprox_gradient, fedprox_penalty, fedrs_logit_scale, fedrs_restricted_softmax, local_train, ClientState,
};
pub use config::{FederationConfig, LabelMode, Method, FEDRS_PRIVATE_MESSAGE};
pub use engine::{Federation, RoundOutcome};
pub use server::ServerState;
