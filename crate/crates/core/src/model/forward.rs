use rand::Rng;

use super::config::{TrainConfig, Variant};
use super::params::ModelParams;
use crate::datasets::{row_normalize, Dataset, Split};
use crate::dynamics::{
    accumulate_alpha_grad, adjoint_backward_from, augment_matrix, integrate, NodeStates, OdeSpec,
};
use crate::error::{Error, Result};
use crate::graph::{build_sym_norm, regularize, PropagationOperator, SymNormAdj};
use crate::mem::Tracked;
use crate::spectral::WeightSpec;
use crate::{Mat, Vector};

/// Dataset with the normalized adjacency built once and features
/// preprocessed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub base: SymNormAdj,
    pub features: Mat,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Prepared {
    pub fn new(dataset: &Dataset, normalize_rows: bool) -> Self {
        let mut features = dataset.features.clone();
        if normalize_rows {
            row_normalize(&mut features);
        }
        Self {
            base: build_sym_norm(&dataset.graph),
            features,
            labels: dataset.labels.clone(),
            num_classes: dataset.num_classes,
            split: dataset.split.clone(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.base.dim()
    }

    pub fn operator(&self, params: &ModelParams, gamma: f64) -> Result<PropagationOperator> {
        regularize(&self.base, &params.alpha(self.num_nodes()), gamma)
    }
}

/// Inverted-dropout multipliers: 0 with probability `p`, else `1 / (1 - p)`.
/// Returns `None` when `p == 0`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut impl Rng) -> Option<Mat> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Mat::from_fn(rows, cols, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep }))
}

fn relu(m: &Mat) -> Mat {
    m.map(|x| x.max(0.0))
}

fn add_row(m: &mut Mat, row: &Vector) {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col.add_scalar_mut(row[j]);
    }
}

fn column_sums(m: &Mat) -> Vector {
    Vector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

/// `E = (X * mask) W_enc + b_enc`, with an optional ReLU.
pub fn encode(params: &ModelParams, x: &Mat, mask: Option<&Mat>, relu_after: bool) -> Result<Mat> {
    if x.ncols() != params.num_features() {
        return Err(Error::dims(format!("X has {} columns, encoder expects {}", x.ncols(), params.num_features())));
    }
    let mut e = match mask {
        Some(mask) => x.component_mul(mask) * &params.enc_weight,
        None => x * &params.enc_weight,
    };
    add_row(&mut e, &params.enc_bias);
    Ok(if relu_after { relu(&e) } else { e })
}

/// Row-wise `log softmax(ReLU(H) W_dec + b_dec)`.
fn decode_log(params: &ModelParams, h: &Mat, mask: Option<&Mat>) -> Result<(Mat, Mat)> {
    if h.ncols() != params.hidden() {
        return Err(Error::dims(format!("H has {} columns, decoder expects {}", h.ncols(), params.hidden())));
    }
    let mut z = relu(h);
    if let Some(mask) = mask {
        z.component_mul_assign(mask);
    }
    let mut logits = &z * &params.dec_weight;
    add_row(&mut logits, &params.dec_bias);
    for mut row in logits.row_iter_mut() {
        let max = row.max();
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.add_scalar_mut(-lse);
    }
    Ok((logits, z))
}

/// Row-wise `softmax(ReLU(H) W_dec + b_dec)`.
pub fn decode(params: &ModelParams, h: &Mat) -> Result<Mat> {
    Ok(decode_log(params, h, None)?.0.map(f64::exp))
}

fn weight_penalty(params: &ModelParams) -> f64 {
    params.enc_weight.norm_squared() + params.dec_weight.norm_squared()
}

/// Mean negative log-likelihood over `mask` plus
/// `weight_decay * (|W_enc|^2 + |W_dec|^2)`.
pub fn loss(probs: &Mat, labels: &[usize], mask: &[usize], params: &ModelParams, weight_decay: f64) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let nll: f64 = mask.iter().map(|&i| -probs[(i, labels[i])].ln()).sum::<f64>() / mask.len() as f64;
    Ok(nll + weight_decay * weight_penalty(params))
}

/// Fraction of `mask` whose most probable class (lowest index on ties)
/// equals the label.
pub fn accuracy(probs: &Mat, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let correct = mask.iter().filter(|&&i| argmax_row(probs, i) == labels[i]).count();
    Ok(correct as f64 / mask.len() as f64)
}

fn argmax_row(m: &Mat, i: usize) -> usize {
    let mut best = 0;
    for j in 1..m.ncols() {
        if m[(i, j)] > m[(i, best)] {
            best = j;
        }
    }
    best
}

/// Most probable class per node.
pub fn predict(probs: &Mat) -> Vec<usize> {
    (0..probs.nrows()).map(|i| argmax_row(probs, i)).collect()
}

/// Runs the dynamics from `e` (already augmented if configured). Returns
/// `H(t1)`, or `H_n` for the discrete variant.
fn propagate(op: &PropagationOperator, e: &Mat, weight: Option<&WeightSpec>, cfg: &TrainConfig) -> Result<Mat> {
    match cfg.variant {
        Variant::CgnnDiscrete => Ok(discrete_forward(op, e, cfg.discrete_steps, false).0),
        variant => {
            let spec = OdeSpec {
                operator: op,
                restart: e,
                weight,
                use_restart: variant != Variant::CgnnNoRestart,
            };
            Ok(integrate(&spec, &NodeStates::initial(e.clone()), &cfg.solver_config())?.h)
        }
    }
}

/// `H_{k+1} = A H_k + E` from `H_0 = E`. With `store`, keeps
/// `H_0 .. H_{n-1}` for the backward pass.
fn discrete_forward(op: &PropagationOperator, e: &Mat, steps: usize, store: bool) -> (Mat, Vec<Tracked>) {
    let mut states = Vec::with_capacity(if store { steps } else { 0 });
    let mut h = Tracked::new(e.clone());
    let mut next = Tracked::zeros(e.nrows(), e.ncols());
    for _ in 0..steps {
        op.apply_into(&h, &mut next);
        *next += e;
        if store {
            states.push(h.clone());
        }
        std::mem::swap(&mut h, &mut next);
    }
    (h.into_inner(), states)
}

/// Backpropagates `grad` through the stored recursion. Returns `dL/dE` and
/// `dL/dalpha` per node.
fn discrete_backward(op: &PropagationOperator, states: &[Tracked], grad: &Mat) -> (Mat, Vec<f64>) {
    let (n, w) = grad.shape();
    let mut g = Tracked::new(grad.clone());
    let mut next = Tracked::zeros(n, w);
    let mut scratch = Tracked::zeros(n, w);
    let mut de = Mat::zeros(n, w);
    let mut dalpha = vec![0.0; n];
    for h in states.iter().rev() {
        de += &*g;
        accumulate_alpha_grad(op, &g, h, &mut scratch, &mut dalpha);
        op.apply_transpose_into(&g, &mut scratch, &mut next);
        std::mem::swap(&mut g, &mut next);
    }
    de += &*g;
    (de, dalpha)
}

/// Class probabilities without dropout.
pub fn forward(params: &ModelParams, data: &Prepared, cfg: &TrainConfig) -> Result<Mat> {
    params.check_against(data.num_nodes(), data.features.ncols(), data.num_classes)?;
    let e = encode(params, &data.features, None, cfg.encoder_relu)?;
    let h = if cfg.t1 == 0.0 && cfg.variant != Variant::CgnnDiscrete {
        e
    } else {
        let op = data.operator(params, cfg.gamma)?;
        let e_run = if cfg.state_width() > e.ncols() { augment_matrix(&e) } else { e };
        let out = propagate(&op, &e_run, params.weight.as_ref(), cfg)?;
        out.columns(0, params.hidden()).into_owned()
    };
    decode(params, &h)
}

/// Result of one training-mode pass.
#[derive(Debug, Clone)]
pub struct LossAndGradients {
    pub loss: f64,
    /// Class probabilities from this (possibly dropped-out) pass.
    pub probs: Mat,
    pub grads: ModelParams,
}

/// Loss on `mask` and its gradient with respect to every parameter. The
/// dropout masks are drawn from `rng` (input first, then decoder).
pub fn loss_and_gradients(
    params: &ModelParams,
    data: &Prepared,
    cfg: &TrainConfig,
    mask: &[usize],
    rng: &mut impl Rng,
) -> Result<LossAndGradients> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    params.check_against(data.num_nodes(), data.features.ncols(), data.num_classes)?;
    let n = data.num_nodes();
    let d = params.hidden();
    let x_mask = dropout_mask(n, data.features.ncols(), cfg.dropout, rng);
    let dec_mask = dropout_mask(n, d, cfg.decoder_dropout, rng);

    // Forward.
    let x_in = match &x_mask {
        Some(m) => data.features.component_mul(m),
        None => data.features.clone(),
    };
    let enc_pre = encode(params, &x_in, None, false)?;
    let e = if cfg.encoder_relu { relu(&enc_pre) } else { enc_pre.clone() };
    let op = data.operator(params, cfg.gamma)?;
    let width = cfg.state_width();
    let e_run = if width > d { augment_matrix(&e) } else { e.clone() };
    let solver = cfg.solver_config();
    let skip_dynamics = cfg.t1 == 0.0 && cfg.variant != Variant::CgnnDiscrete;

    let mut stored = Vec::new();
    let h_final = if skip_dynamics {
        e_run.clone()
    } else if cfg.variant == Variant::CgnnDiscrete {
        let (h, states) = discrete_forward(&op, &e_run, cfg.discrete_steps, true);
        stored = states;
        h
    } else {
        propagate(&op, &e_run, params.weight.as_ref(), cfg)?
    };
    let hd = h_final.columns(0, d).into_owned();
    let (log_probs, z) = decode_log(params, &hd, dec_mask.as_ref())?;
    let probs = log_probs.map(f64::exp);
    let nll: f64 = mask.iter().map(|&i| -log_probs[(i, data.labels[i])]).sum::<f64>() / mask.len() as f64;
    let loss = nll + cfg.weight_decay * weight_penalty(params);

    // Decoder backward.
    let mut grads = params.zeros_like();
    let scale = 1.0 / mask.len() as f64;
    let mut dlogits = Mat::zeros(n, data.num_classes);
    for &i in mask {
        for c in 0..data.num_classes {
            dlogits[(i, c)] = probs[(i, c)] * scale;
        }
        dlogits[(i, data.labels[i])] -= scale;
    }
    grads.dec_weight = z.transpose() * &dlogits + &params.dec_weight * (2.0 * cfg.weight_decay);
    grads.dec_bias = column_sums(&dlogits);
    let mut dz = dlogits * params.dec_weight.transpose();
    if let Some(m) = &dec_mask {
        dz.component_mul_assign(m);
    }
    let dhd = dz.zip_map(&hd, |g, h| if h > 0.0 { g } else { 0.0 });

    // Dynamics backward.
    let mut dh_final = Mat::zeros(n, width);
    dh_final.columns_mut(0, d).copy_from(&dhd);
    let (de_run, dalpha) = if skip_dynamics {
        (dh_final, vec![0.0; n])
    } else if cfg.variant == Variant::CgnnDiscrete {
        let out = discrete_backward(&op, &stored, &dh_final);
        drop(stored);
        out
    } else {
        let spec = OdeSpec {
            operator: &op,
            restart: &e_run,
            weight: params.weight.as_ref(),
            use_restart: cfg.variant != Variant::CgnnNoRestart,
        };
        let g = adjoint_backward_from(&spec, &h_final, &solver, &dh_final)?;
        if let (Some(wg), Some(target)) = (g.weight, grads.weight.as_mut()) {
            target.basis = wg.basis;
            target.eigen_params = wg.eigen_params;
        }
        (g.restart + g.initial, g.alpha.iter().copied().collect())
    };

    // alpha = logistic(raw): d alpha / d raw = alpha (1 - alpha).
    let alpha = params.alpha(n);
    if params.alpha_raw.len() == 1 {
        grads.alpha_raw[0] = dalpha.iter().zip(&alpha).map(|(g, a)| g * a * (1.0 - a)).sum();
    } else {
        for i in 0..n {
            grads.alpha_raw[i] = dalpha[i] * alpha[i] * (1.0 - alpha[i]);
        }
    }

    // Encoder backward.
    let mut de = de_run.columns(0, d).into_owned();
    if cfg.encoder_relu {
        de.zip_apply(&enc_pre, |g, pre| {
            if pre <= 0.0 {
                *g = 0.0;
            }
        });
    }
    grads.enc_weight = x_in.transpose() * &de + &params.enc_weight * (2.0 * cfg.weight_decay);
    grads.enc_bias = column_sums(&de);

    Ok(LossAndGradients { loss, probs, grads })
}
