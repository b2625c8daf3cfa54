//! Node classifier: affine encoder, propagation dynamics, ReLU + softmax
//! decoder, and the full-batch training loop.

mod checkpoint;
mod config;
mod forward;
mod optim;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_BLOB, CHECKPOINT_MANIFEST};
pub use config::{AlphaMode, OptimizerKind, TrainConfig, Variant};
pub use forward::{
    accuracy, decode, dropout_mask, encode, forward, loss, loss_and_gradients, predict, LossAndGradients, Prepared,
};
pub use optim::Optimizer;
pub use params::{logistic, logit, ModelParams};
pub use train::{evaluate, train, EpochMetrics, TrainOutcome};

#[cfg(test)]
mod tests;
