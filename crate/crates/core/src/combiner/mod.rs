//! Classifier combination: exact fixed-input combination, central-tuning
//! losses, and tuning of the server classifier on an unlabeled pool.

mod fixed_x;
mod losses;
pub mod oracle;
mod tune;

pub use fixed_x::{combine_fixed_x, fixed_x_objective, project_simplex, Combination, SolverOptions};
pub use losses::{
    loss_and_gradient, missing_label_gradient, mse_loss, pairwise_loss, pairwise_variant_loss_and_gradient,
    ClientPrediction, TuningLoss,
};
pub use tune::{central_tune, client_predictions, tuning_loss_gradient, TuneOptions, TuneReport, SANITY_FACTOR};
