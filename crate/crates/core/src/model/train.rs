use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::TrainConfig;
use super::forward::{accuracy, forward, loss_and_gradients, Prepared};
use super::optim::Optimizer;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::spectral::orthogonality_retraction;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the highest validation accuracy
    /// (earliest on ties).
    pub best: ModelParams,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test_acc_at_best_val: f64,
    pub last: ModelParams,
    pub history: Vec<EpochMetrics>,
}

/// Accuracy of `params` on `mask` without dropout.
pub fn evaluate(params: &ModelParams, data: &Prepared, cfg: &TrainConfig, mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    accuracy(&forward(params, data, cfg)?, &data.labels, mask)
}

/// Full-batch training. Each epoch: one dropout pass with adjoint (or
/// stored-trajectory) gradients, an optimizer step, clamping of `M`, one
/// orthogonality retraction of `U`, then evaluation without dropout.
///
/// Everything is drawn from a single ChaCha8 stream seeded by `cfg.seed`, so
/// a run is bitwise reproducible.
pub fn train(data: &Prepared, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let split = &data.split;
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(cfg, data.num_nodes(), data.features.ncols(), data.num_classes, &mut rng);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr, &params);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_val_acc = f64::NEG_INFINITY;
    let mut test_acc_at_best_val = 0.0;

    for epoch in 1..=cfg.epochs {
        let pass = loss_and_gradients(&params, data, cfg, &split.train, &mut rng)?;
        if !pass.loss.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
        optimizer.step(&mut params, &pass.grads);
        if let Some(w) = &mut params.weight {
            w.clamp_in_place();
            w.basis = orthogonality_retraction(&w.basis, cfg.beta);
        }

        let probs = forward(&params, data, cfg)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: pass.loss,
            train_acc: accuracy(&probs, &data.labels, &split.train)?,
            val_acc: accuracy(&probs, &data.labels, &split.val)?,
            test_acc: accuracy(&probs, &data.labels, &split.test)?,
        };
        if metrics.val_acc > best_val_acc {
            best_val_acc = metrics.val_acc;
            test_acc_at_best_val = metrics.test_acc;
            best_epoch = epoch;
            best = params.clone();
        }
        history.push(metrics);
    }

    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_acc,
        test_acc_at_best_val,
        last: params,
        history,
    })
}
