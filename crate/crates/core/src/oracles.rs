//! The oracle suite behind `cgnn verify`: every closed form is checked
//! against numeric integration, quadrature or finite differences on small
//! seeded instances. Each check yields one [`OracleReport`] row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::closed_form::{
    analytic_limit_no_weight, analytic_limit_with_weight, analytic_solution_no_weight, analytic_solution_with_weight,
    discrete_closed_form, discrete_propagate, errors, riemann_limit_check, sylvester_check,
    weighted_initial_value_check, OracleReport,
};
use crate::datasets::{generate_sbm, SbmSpec};
use crate::dynamics::{augment, augment_matrix, deaugment, integrate, NodeStates, OdeSpec, SolverConfig};
use crate::error::Result;
use crate::graph::{build_sym_norm, regularize, Graph, PropagationOperator};
use crate::model::{loss_and_gradients, ModelParams, Prepared, TrainConfig, Variant};
use crate::spectral::{materialize_weight, orthogonal_init, WeightSpec};
use crate::{Mat, Vector};

/// Central-difference step for the gradient oracles.
pub const FD_STEP: f64 = 1e-5;

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// A path through all nodes plus independent extra edges with probability
/// `p`, so the graph is connected.
fn connected_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    for i in 0..n {
        for j in (i + 2)..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges).expect("path-plus-random edges are simple")
}

/// `alpha` uniform when `lo == hi`, otherwise drawn per node.
fn operator(n: usize, (lo, hi): (f64, f64), gamma: f64, rng: &mut ChaCha8Rng) -> Result<PropagationOperator> {
    let s = build_sym_norm(&connected_graph(n, 0.3, rng));
    let alpha: Vec<f64> = (0..n).map(|_| if lo == hi { lo } else { rng.random_range(lo..hi) }).collect();
    regularize(&s, &alpha, gamma)
}

fn weight(d: usize, rng: &mut ChaCha8Rng) -> Result<WeightSpec> {
    let m = Vector::from_fn(d, |_, _| rng.random_range(0.1..0.95));
    WeightSpec::new(orthogonal_init(d, rng), m)
}

fn integrate_h(spec: &OdeSpec<'_>, h0: &Mat, cfg: &SolverConfig) -> Result<Mat> {
    Ok(integrate(spec, &NodeStates::initial(h0.clone()), cfg)?.h)
}

/// Fixed-step RK4 with 40 steps against the analytic solution on random
/// 20-node graphs with per-node `alpha`, `d = 4`.
pub fn ode_vs_analytic(rng: &mut ChaCha8Rng) -> Result<OracleReport> {
    let mut rows = Vec::new();
    for _ in 0..3 {
        let op = operator(20, (0.5, 0.95), 0.5, rng)?;
        let e = gaussian(20, 4, rng);
        let a = op.to_dense();
        for t1 in [1.0, 5.0, 12.0] {
            let solved = integrate_h(&OdeSpec::new(&op, &e), &e, &SolverConfig::fixed(t1, 40))?;
            rows.push(OracleReport::compare("", &solved, &analytic_solution_no_weight(&a, &e, t1)?, 1e-6));
        }
    }
    Ok(OracleReport::worst_of("ode_vs_analytic", 1e-6, &rows))
}

/// `H(300)` against `(I - A)^-1 E` for a spectrum bounded by 0.95.
pub fn ode_limit(rng: &mut ChaCha8Rng) -> Result<OracleReport> {
    let op = operator(20, (0.95, 0.95), 0.5, rng)?;
    let e = gaussian(20, 4, rng);
    let solved = integrate_h(&OdeSpec::new(&op, &e), &e, &SolverConfig::fixed(300.0, 600))?;
    let limit = analytic_limit_no_weight(&op.to_dense(), &e)?;
    Ok(OracleReport::compare("ode_limit_t300", &solved, &limit, 1e-5))
}

/// The unweighted recursion against its geometric-series closed form.
pub fn discrete_vs_closed_form(rng: &mut ChaCha8Rng) -> Result<OracleReport> {
    let a = operator(20, (0.9, 0.9), 0.5, rng)?.to_dense();
    let e = gaussian(20, 4, rng);
    let mut rows = Vec::new();
    for n in [0, 1, 2, 8, 32, 64] {
        let recursion = discrete_propagate(&a, &e, None, n)?;
        rows.push(OracleReport::compare("", &recursion, &discrete_closed_form(&a, &e, n)?, 1e-9));
    }
    Ok(OracleReport::worst_of("discrete_vs_closed_form", 1e-9, &rows))
}

/// Log-ODE integration against `(ln A)^-1 (A^{n+1} - I) E`, one row per `n`.
pub fn riemann(rng: &mut ChaCha8Rng) -> Result<Vec<OracleReport>> {
    let a = operator(12, (0.9, 0.9), 0.6, rng)?.to_dense();
    let e = gaussian(12, 3, rng);
    [1, 2, 5].into_iter().map(|n| riemann_limit_check(&a, &e, n, 1e-6)).collect()
}

/// Closed-form `int_0^1 A^s E W^s ds` against Simpson quadrature.
pub fn weighted_initial_value(rng: &mut ChaCha8Rng) -> Result<OracleReport> {
    let a = operator(12, (0.9, 0.9), 0.6, rng)?.to_dense();
    let w = materialize_weight(&weight(3, rng)?);
    let e = gaussian(12, 3, rng);
    weighted_initial_value_check(&a, &w, &e, 1e-8)
}

/// The weighted closed form against fixed-step integration at several end
/// times.
pub fn weighted_ode_vs_analytic(rng: &mut ChaCha8Rng) -> Result<OracleReport> {
    let op = operator(16, (0.9, 0.9), 0.5, rng)?;
    let w = weight(4, rng)?;
    let e = gaussian(16, 4, rng);
    let (a, wm) = (op.to_dense(), materialize_weight(&w));
    let spec = OdeSpec::new(&op, &e).with_weight(&w);
    let mut rows = Vec::new();
    for t1 in [1.0, 5.0, 12.0] {
        let solved = integrate_h(&spec, &e, &SolverConfig::fixed(t1, 40))?;
        rows.push(OracleReport::compare("", &solved, &analytic_solution_with_weight(&a, &wm, &e, t1)?, 1e-6));
    }
    Ok(OracleReport::worst_of("weighted_ode_vs_analytic", 1e-6, &rows))
}

/// Weighted integration to `t = 300` against the weighted limit.
pub fn weighted_limit(rng: &mut ChaCha8Rng) -> Result<OracleReport> {
    let op = operator(16, (0.95, 0.95), 0.5, rng)?;
    let w = weight(4, rng)?;
    let e = gaussian(16, 4, rng);
    let solved = integrate_h(&OdeSpec::new(&op, &e).with_weight(&w), &e, &SolverConfig::fixed(300.0, 600))?;
    let limit = analytic_limit_with_weight(&op.to_dense(), &materialize_weight(&w), &e)?;
    Ok(OracleReport::compare("weighted_limit_t300", &solved, &limit, 1e-5))
}

/// With `W = I` the weighted closed form must reduce to the unweighted one.
pub fn identity_weight_reduction(rng: &mut ChaCha8Rng) -> Result<OracleReport> {
    let a = operator(20, (0.9, 0.9), 0.5, rng)?.to_dense();
    let e = gaussian(20, 4, rng);
    let mut rows = Vec::new();
    for t1 in [1.0, 5.0, 12.0] {
        let weighted = analytic_solution_with_weight(&a, &Mat::identity(4, 4), &e, t1)?;
        rows.push(OracleReport::compare("", &weighted, &analytic_solution_no_weight(&a, &e, t1)?, 1e-10));
    }
    Ok(OracleReport::worst_of("identity_weight_reduction", 1e-10, &rows))
}

/// Variation-of-constants integral by quadrature against the weighted
/// closed form.
pub fn sylvester(rng: &mut ChaCha8Rng) -> Result<OracleReport> {
    let a = operator(10, (0.9, 0.9), 0.5, rng)?.to_dense();
    let w = materialize_weight(&weight(3, rng)?);
    let e = gaussian(10, 3, rng);
    let report = sylvester_check(&a, &w, &e, 2.0, 1e-8)?;
    Ok(OracleReport { name: "sylvester_quadrature".into(), ..report })
}

/// Zero latent columns change nothing for the unweighted dynamics.
pub fn augmentation(rng: &mut ChaCha8Rng) -> Result<OracleReport> {
    let op = operator(12, (0.9, 0.9), 0.5, rng)?;
    let e = gaussian(12, 3, rng);
    let cfg = SolverConfig::fixed(5.0, 40);
    let plain = integrate_h(&OdeSpec::new(&op, &e), &e, &cfg)?;
    let e_aug = augment_matrix(&e);
    let aug = integrate(&OdeSpec::new(&op, &e_aug), &augment(&NodeStates::initial(e.clone())), &cfg)?;
    Ok(OracleReport::compare("augmentation_equivalence", &deaugment(&aug)?.h, &plain, 1e-10))
}

/// Halving the RK4 step must shrink the error at least eightfold. The row
/// reports the coarse error and the fine/coarse ratio, gated at 1/8.
pub fn solver_order(rng: &mut ChaCha8Rng) -> Result<OracleReport> {
    let op = operator(15, (0.9, 0.9), 0.5, rng)?;
    let e = gaussian(15, 2, rng);
    let exact = analytic_solution_no_weight(&op.to_dense(), &e, 5.0)?;
    let err = |steps| -> Result<f64> {
        Ok(errors(&integrate_h(&OdeSpec::new(&op, &e), &e, &SolverConfig::fixed(5.0, steps))?, &exact).0)
    };
    let (coarse, fine) = (err(5)?, err(10)?);
    Ok(OracleReport::from_errors("rk4_order_ratio", coarse, fine / coarse, 0.125))
}

/// Relative Frobenius error of adjoint-based gradients against central
/// differences of the full training loss, worst over all parameter tensors.
/// Dropout is off; the instance has 10 nodes.
pub fn adjoint_vs_finite_differences(variant: Variant, seed: u64) -> Result<OracleReport> {
    let spec = SbmSpec {
        blocks: 2,
        nodes_per_block: 5,
        p_in: 0.6,
        p_out: 0.2,
        feature_dim: 4,
        signal: 0.5,
        seed,
        train_per_class: 2,
        val_fraction: 0.3,
    };
    let data = Prepared::new(&generate_sbm(&spec)?, false);
    let cfg = TrainConfig {
        variant,
        dropout: 0.0,
        t1: 2.0,
        hidden: 3,
        weight_decay: 1e-2,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(&cfg, data.num_nodes(), data.features.ncols(), data.num_classes, &mut rng);
    // Spread alpha and biases away from their symmetric initial values.
    params.alpha_raw.apply(|a| *a = rng.random_range(0.5..3.0));
    params.enc_bias.apply(|b| *b = rng.random_range(-0.5..0.5));
    params.dec_bias.apply(|b| *b = rng.random_range(-0.5..0.5));

    let mask = data.split.train.clone();
    let loss_at = |p: &ModelParams| -> Result<f64> {
        Ok(loss_and_gradients(p, &data, &cfg, &mask, &mut ChaCha8Rng::seed_from_u64(0))?.loss)
    };
    let analytic = loss_and_gradients(&params, &data, &cfg, &mask, &mut ChaCha8Rng::seed_from_u64(0))?.grads;
    let analytic: Vec<Vec<f64>> = analytic.tensors().iter().map(|(_, _, g)| g.to_vec()).collect();

    let (mut worst_abs, mut worst_rel) = (0.0f64, 0.0f64);
    for (k, exact) in analytic.iter().enumerate() {
        let mut fd = Vec::with_capacity(exact.len());
        for i in 0..exact.len() {
            let mut plus = params.clone();
            plus.tensors_mut()[k][i] += FD_STEP;
            let mut minus = params.clone();
            minus.tensors_mut()[k][i] -= FD_STEP;
            fd.push((loss_at(&plus)? - loss_at(&minus)?) / (2.0 * FD_STEP));
        }
        let diff = fd.iter().zip(exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst_abs = worst_abs.max(diff);
        worst_rel = worst_rel.max(if scale > 0.0 { diff / scale } else { diff });
    }
    Ok(OracleReport::from_errors(format!("adjoint_fd_{}", variant.name().replace('-', "_")), worst_abs, worst_rel, 1e-4))
}

/// Runs every oracle in a fixed order. With `fault_inject` every tolerance
/// is set to zero, which must make the suite fail; it checks that the gate
/// can fail at all.
pub fn run_all(fault_inject: bool) -> Result<Vec<OracleReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut reports = vec![
        ode_vs_analytic(&mut rng)?,
        ode_limit(&mut rng)?,
        discrete_vs_closed_form(&mut rng)?,
    ];
    reports.extend(riemann(&mut rng)?);
    reports.extend([
        weighted_initial_value(&mut rng)?,
        weighted_ode_vs_analytic(&mut rng)?,
        weighted_limit(&mut rng)?,
        identity_weight_reduction(&mut rng)?,
        sylvester(&mut rng)?,
        adjoint_vs_finite_differences(Variant::Cgnn, 3)?,
        adjoint_vs_finite_differences(Variant::CgnnWeight, 4)?,
        augmentation(&mut rng)?,
        solver_order(&mut rng)?,
    ]);
    if fault_inject {
        for r in &mut reports {
            *r = OracleReport::from_errors(r.name.clone(), r.max_abs_err, r.max_rel_err, 0.0);
        }
    }
    Ok(reports)
}
