use rand::Rng;

use super::config::{AlphaMode, TrainConfig};
use crate::error::{Error, Result};
use crate::spectral::WeightSpec;
use crate::{Mat, Vector};

/// Keeps materialized `alpha` strictly inside `(0, 1)` even where the
/// logistic saturates in floating point.
const ALPHA_MARGIN: f64 = 1e-9;

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// All trainable state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `|F| x d`.
    pub enc_weight: Mat,
    pub enc_bias: Vector,
    /// `d x c`.
    pub dec_weight: Mat,
    pub dec_bias: Vector,
    /// Length 1 (shared) or `|V|`; `alpha = logistic(alpha_raw)`.
    pub alpha_raw: Vector,
    pub weight: Option<WeightSpec>,
}

impl ModelParams {
    /// Glorot-uniform encoder and decoder weights, zero biases,
    /// `alpha = alpha_init`, and for the weighted variant an orthogonal `U`
    /// with every `M` entry at `eigen_init`.
    pub fn init(cfg: &TrainConfig, num_nodes: usize, num_features: usize, num_classes: usize, rng: &mut impl Rng) -> Self {
        let d = cfg.hidden;
        let alpha_len = match cfg.alpha_mode {
            AlphaMode::Scalar => 1,
            AlphaMode::PerNode => num_nodes,
        };
        let enc_weight = glorot(num_features, d, rng);
        let dec_weight = glorot(d, num_classes, rng);
        let weight = cfg
            .variant
            .has_weight()
            .then(|| WeightSpec::random(cfg.state_width(), cfg.eigen_init, rng));
        let mut params = Self {
            enc_weight,
            enc_bias: Vector::zeros(d),
            dec_weight,
            dec_bias: Vector::zeros(num_classes),
            alpha_raw: Vector::from_element(alpha_len, logit(cfg.alpha_init)),
            weight,
        };
        if let Some(w) = &mut params.weight {
            w.clamp_in_place();
        }
        params
    }

    pub fn hidden(&self) -> usize {
        self.enc_weight.ncols()
    }

    pub fn num_features(&self) -> usize {
        self.enc_weight.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.dec_weight.ncols()
    }

    /// Per-node `alpha`, broadcasting a shared value.
    pub fn alpha(&self, num_nodes: usize) -> Vec<f64> {
        let squash = |x: f64| logistic(x).clamp(ALPHA_MARGIN, 1.0 - ALPHA_MARGIN);
        if self.alpha_raw.len() == 1 {
            vec![squash(self.alpha_raw[0]); num_nodes]
        } else {
            self.alpha_raw.iter().map(|&x| squash(x)).collect()
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            enc_weight: Mat::zeros(self.enc_weight.nrows(), self.enc_weight.ncols()),
            enc_bias: Vector::zeros(self.enc_bias.len()),
            dec_weight: Mat::zeros(self.dec_weight.nrows(), self.dec_weight.ncols()),
            dec_bias: Vector::zeros(self.dec_bias.len()),
            alpha_raw: Vector::zeros(self.alpha_raw.len()),
            weight: self.weight.as_ref().map(|w| WeightSpec {
                basis: Mat::zeros(w.dim(), w.dim()),
                eigen_params: Vector::zeros(w.dim()),
            }),
        }
    }

    /// Named tensors in canonical order with their shapes. Data is in
    /// column-major order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let mut out = vec![
            ("enc_weight", vec![self.enc_weight.nrows(), self.enc_weight.ncols()], self.enc_weight.as_slice()),
            ("enc_bias", vec![self.enc_bias.len()], self.enc_bias.as_slice()),
            ("dec_weight", vec![self.dec_weight.nrows(), self.dec_weight.ncols()], self.dec_weight.as_slice()),
            ("dec_bias", vec![self.dec_bias.len()], self.dec_bias.as_slice()),
            ("alpha_raw", vec![self.alpha_raw.len()], self.alpha_raw.as_slice()),
        ];
        if let Some(w) = &self.weight {
            out.push(("weight_basis", vec![w.dim(), w.dim()], w.basis.as_slice()));
            out.push(("weight_eigen", vec![w.dim()], w.eigen_params.as_slice()));
        }
        out
    }

    /// Mutable views in the order of [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.enc_weight.as_mut_slice(),
            self.enc_bias.as_mut_slice(),
            self.dec_weight.as_mut_slice(),
            self.dec_bias.as_mut_slice(),
            self.alpha_raw.as_mut_slice(),
        ];
        if let Some(w) = &mut self.weight {
            out.push(w.basis.as_mut_slice());
            out.push(w.eigen_params.as_mut_slice());
        }
        out
    }

    /// Checks that the parameters fit a dataset.
    pub fn check_against(&self, num_nodes: usize, num_features: usize, num_classes: usize) -> Result<()> {
        let d = self.hidden();
        let ok = self.num_features() == num_features
            && self.num_classes() == num_classes
            && self.enc_bias.len() == d
            && self.dec_weight.nrows() == d
            && self.dec_bias.len() == num_classes
            && (self.alpha_raw.len() == 1 || self.alpha_raw.len() == num_nodes);
        if ok {
            Ok(())
        } else {
            Err(Error::dims(format!(
                "parameters ({} features, hidden {d}, {} classes, {} alphas) do not fit data with {num_nodes} nodes, {num_features} features, {num_classes} classes",
                self.num_features(),
                self.num_classes(),
                self.alpha_raw.len()
            )))
        }
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}
