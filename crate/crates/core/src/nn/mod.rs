//! Minimal differentiable model stack: tensors, the two encoder
//! architectures, softmax/cross-entropy, optimizers and gradient checking.

pub mod gradcheck;
mod layers;
pub mod loss;
pub mod model;
pub mod optim;
mod tensor;

pub use loss::{cross_entropy, softmax, softmax_rows};
pub use model::{argmax, random_batch, Classifier, EncoderSpec, ForwardPass, Model, Network, ParameterSet, Target};
pub use optim::{OptimizerKind, OptimizerState};
pub use tensor::Tensor;
