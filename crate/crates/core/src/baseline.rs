//! Multinomial logistic regression on raw node features, ignoring the graph.
//! Used to check that a graph model learns something the features alone do
//! not give.

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::model::{accuracy, ModelParams, Optimizer, OptimizerKind};
use crate::{Mat, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            weight_decay: 5e-4,
            epochs: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegOutcome {
    pub best_epoch: usize,
    pub val_acc: f64,
    /// Test accuracy at the epoch with the best validation accuracy.
    pub test_acc: f64,
}

fn softmax_rows(logits: &mut Mat) {
    for mut row in logits.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Full-batch Adam on the mean cross-entropy over the train split, starting
/// from zero weights. Deterministic.
pub fn logistic_regression(data: &Dataset, cfg: &LogRegConfig) -> Result<LogRegOutcome> {
    let split = &data.split;
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::EmptyMask);
    }
    if cfg.epochs == 0 {
        return Err(Error::OutOfRange("epochs must be positive".into()));
    }
    let (f, c) = (data.num_features(), data.num_classes);
    // Reuse the model's parameter container so the optimizer applies as is.
    let mut params = ModelParams {
        enc_weight: Mat::zeros(0, 0),
        enc_bias: Vector::zeros(0),
        dec_weight: Mat::zeros(f, c),
        dec_bias: Vector::zeros(c),
        alpha_raw: Vector::zeros(0),
        weight: None,
    };
    let mut grads = params.clone();
    let mut optimizer = Optimizer::new(OptimizerKind::Adam, cfg.lr, &params);
    let x = &data.features;
    let x_train = x.select_rows(&split.train);

    let mut best = LogRegOutcome {
        best_epoch: 0,
        val_acc: f64::NEG_INFINITY,
        test_acc: 0.0,
    };
    for epoch in 1..=cfg.epochs {
        let mut probs = &x_train * &params.dec_weight;
        for mut row in probs.row_iter_mut() {
            row += params.dec_bias.transpose();
        }
        softmax_rows(&mut probs);
        for (r, &node) in split.train.iter().enumerate() {
            probs[(r, data.labels[node])] -= 1.0;
        }
        probs /= split.train.len() as f64;
        grads.dec_weight = x_train.transpose() * &probs + &params.dec_weight * (2.0 * cfg.weight_decay);
        grads.dec_bias = probs.row_sum().transpose();
        optimizer.step(&mut params, &grads);

        let mut all = x * &params.dec_weight;
        for mut row in all.row_iter_mut() {
            row += params.dec_bias.transpose();
        }
        let val_acc = accuracy(&all, &data.labels, &split.val)?;
        if val_acc > best.val_acc {
            best = LogRegOutcome {
                best_epoch: epoch,
                val_acc,
                test_acc: accuracy(&all, &data.labels, &split.test)?,
            };
        }
    }
    Ok(best)
}
