use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use super::*;
use crate::closed_form::analytic_solution_no_weight;
use crate::datasets::{generate_sbm, SbmSpec};
use crate::dynamics::Method;
use crate::mem::measure_peak;
use crate::testutil::{random_mat, rng};
use crate::{Mat, Vector};

fn small_sbm(nodes_per_block: usize, seed: u64) -> Prepared {
    let spec = SbmSpec {
        blocks: 3,
        nodes_per_block,
        p_in: 0.5,
        p_out: 0.1,
        feature_dim: 5,
        signal: 0.5,
        seed,
        train_per_class: 2,
        val_fraction: 0.2,
    };
    Prepared::new(&generate_sbm(&spec).unwrap(), false)
}

fn quiet(variant: Variant) -> TrainConfig {
    TrainConfig {
        variant,
        dropout: 0.0,
        t1: 2.0,
        hidden: 4,
        epochs: 5,
        discrete_steps: 6,
        ..TrainConfig::default()
    }
}

fn params_for(data: &Prepared, cfg: &TrainConfig, seed: u64) -> ModelParams {
    let mut p = ModelParams::init(cfg, data.num_nodes(), data.features.ncols(), data.num_classes, &mut rng(seed));
    // Nonzero biases and spread-out alphas exercise every gradient path.
    let mut r = rng(seed + 1);
    p.enc_bias = Vector::from_fn(p.enc_bias.len(), |_, _| r.random_range(-0.5..0.5));
    p.dec_bias = Vector::from_fn(p.dec_bias.len(), |_, _| r.random_range(-0.5..0.5));
    p.alpha_raw = Vector::from_fn(p.alpha_raw.len(), |_, _| r.random_range(0.5..3.0));
    if let Some(w) = &mut p.weight {
        w.eigen_params = Vector::from_fn(w.dim(), |_, _| r.random_range(0.2..0.9));
    }
    p
}

#[test]
fn encode_examples() {
    let mut r = rng(1);
    let x = random_mat(6, 3, &mut r);
    let p = ModelParams {
        enc_weight: Mat::identity(3, 3),
        enc_bias: Vector::zeros(3),
        dec_weight: Mat::zeros(3, 2),
        dec_bias: Vector::zeros(2),
        alpha_raw: Vector::zeros(1),
        weight: None,
    };
    assert_eq!(encode(&p, &x, None, false).unwrap(), x);

    let biased = ModelParams {
        enc_bias: Vector::from_vec(vec![1.0, -2.0, 0.5]),
        ..p.clone()
    };
    let e = encode(&biased, &Mat::zeros(4, 3), None, false).unwrap();
    for i in 0..4 {
        assert_eq!(e.row(i).transpose(), biased.enc_bias);
    }
    assert!(matches!(encode(&p, &Mat::zeros(2, 4), None, false), Err(crate::Error::DimensionMismatch(_))));
}

#[test]
fn input_dropout_is_unbiased() {
    let mut r = rng(2);
    let x = random_mat(4, 3, &mut r);
    let p = ModelParams {
        enc_weight: random_mat(3, 2, &mut r),
        enc_bias: Vector::zeros(2),
        dec_weight: Mat::zeros(2, 2),
        dec_bias: Vector::zeros(2),
        alpha_raw: Vector::zeros(1),
        weight: None,
    };
    let clean = encode(&p, &x, None, false).unwrap();
    let trials = 20_000;
    let mut mean = Mat::zeros(4, 2);
    for _ in 0..trials {
        let mask = dropout_mask(4, 3, 0.5, &mut r).unwrap();
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        mean += encode(&p, &x, Some(&mask), false).unwrap();
    }
    mean /= trials as f64;
    assert!((mean - clean).abs().max() < 1e-2 * 5.0);
}

fn decoder(dec_weight: Mat, dec_bias: Vec<f64>) -> ModelParams {
    let d = dec_weight.nrows();
    ModelParams {
        enc_weight: Mat::zeros(1, d),
        enc_bias: Vector::zeros(d),
        dec_weight,
        dec_bias: Vector::from_vec(dec_bias),
        alpha_raw: Vector::zeros(1),
        weight: None,
    }
}

#[test]
fn decode_examples() {
    let p = decoder(Mat::zeros(2, 4), vec![0.0; 4]);
    let probs = decode(&p, &Mat::from_element(3, 2, 1.0)).unwrap();
    assert!(probs.iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let p = decoder(Mat::zeros(2, 3), vec![0.0, 1e4, 0.0]);
    let probs = decode(&p, &Mat::zeros(1, 2)).unwrap();
    assert!((probs[(0, 1)] - 1.0).abs() < 1e-12);

    // ReLU zeroes negative representations before the linear map.
    let p = decoder(Mat::identity(2, 2), vec![0.0, 0.0]);
    let probs = decode(&p, &Mat::from_row_slice(1, 2, &[-5.0, -1.0])).unwrap();
    assert!((probs[(0, 0)] - 0.5).abs() < 1e-15);
}

#[test]
fn loss_examples() {
    let p = decoder(Mat::from_element(1, 3, 0.5), vec![0.0; 3]);
    let uniform = Mat::from_element(4, 3, 1.0 / 3.0);
    let reg = 0.1 * (0.25 * 3.0);
    let l = loss(&uniform, &[0, 1, 2, 0], &[0, 1, 2, 3], &p, 0.1).unwrap();
    assert!((l - (3.0f64.ln() + reg)).abs() < 1e-12);

    let onehot = Mat::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    assert!((loss(&onehot, &[0, 2], &[0, 1], &p, 0.1).unwrap() - reg).abs() < 1e-15);

    let probs = Mat::from_row_slice(2, 2, &[0.5, 0.5, 0.25, 0.75]);
    let l = loss(&probs, &[0, 1], &[0, 1], &p, 0.0).unwrap();
    assert!((l - (2.0f64.ln() + (4.0f64 / 3.0).ln()) / 2.0).abs() < 1e-15);
    assert!((l - 0.4904).abs() < 1e-4);

    assert!(matches!(loss(&probs, &[0, 1], &[], &p, 0.0), Err(crate::Error::EmptyMask)));
}

#[test]
fn accuracy_examples() {
    let probs = Mat::from_row_slice(3, 2, &[0.9, 0.1, 0.2, 0.8, 0.6, 0.4]);
    assert_eq!(accuracy(&probs, &[0, 1, 0], &[0, 1, 2]).unwrap(), 1.0);
    let uniform = Mat::from_element(5, 3, 1.0 / 3.0);
    assert_eq!(predict(&uniform), vec![0; 5]);
    assert!(matches!(accuracy(&probs, &[0, 1, 0], &[]), Err(crate::Error::EmptyMask)));

    // Random labels against fixed predictions: binomial(n, 1/c).
    let mut r = rng(3);
    let (n, c) = (4000, 4);
    let probs = Mat::from_fn(n, c, |_, _| r.random::<f64>());
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
    let mask: Vec<usize> = (0..n).collect();
    let acc = accuracy(&probs, &labels, &mask).unwrap();
    let sigma = (0.25 * 0.75 / n as f64).sqrt();
    assert!((acc - 0.25).abs() <= 3.0 * sigma, "{acc}");
}

#[test]
fn forward_at_time_zero_is_decode_of_encode() {
    let data = small_sbm(6, 4);
    for variant in [Variant::Cgnn, Variant::CgnnWeight, Variant::CgnnNoRestart] {
        let cfg = TrainConfig { t1: 0.0, ..quiet(variant) };
        let p = params_for(&data, &cfg, 5);
        let direct = decode(&p, &encode(&p, &data.features, None, false).unwrap()).unwrap();
        assert_eq!(forward(&p, &data, &cfg).unwrap(), direct, "{variant}");
    }
}

#[test]
fn forward_matches_closed_form_oracle() {
    let data = small_sbm(7, 6);
    let cfg = TrainConfig {
        t1: 3.0,
        alpha_mode: AlphaMode::Scalar,
        ..quiet(Variant::Cgnn)
    };
    let p = params_for(&data, &cfg, 7);
    let a = data.operator(&p, cfg.gamma).unwrap().to_dense();
    let e = encode(&p, &data.features, None, false).unwrap();
    let oracle = decode(&p, &analytic_solution_no_weight(&a, &e, cfg.t1).unwrap()).unwrap();
    let probs = forward(&p, &data, &cfg).unwrap();
    assert!((probs - &oracle).abs().max() / oracle.abs().max() <= 1e-6);
}

#[test]
fn no_restart_forgets_features_at_large_time() {
    let data = small_sbm(6, 8);
    let cfg = TrainConfig {
        t1: 200.0,
        solver_steps: 400,
        ..quiet(Variant::CgnnNoRestart)
    };
    let p = ModelParams {
        dec_bias: Vector::zeros(data.num_classes),
        ..params_for(&data, &cfg, 9)
    };
    let probs = forward(&p, &data, &cfg).unwrap();
    let uniform = 1.0 / data.num_classes as f64;
    assert!(probs.iter().all(|&v| (v - uniform).abs() < 1e-3));
}

/// Central differences of the training loss along every parameter entry.
fn fd_check(data: &Prepared, cfg: &TrainConfig, params: &ModelParams, tol: f64) {
    let mask = data.split.train.clone();
    let analytic = loss_and_gradients(params, data, cfg, &mask, &mut rng(0)).unwrap();
    let loss_at = |p: &ModelParams| loss_and_gradients(p, data, cfg, &mask, &mut rng(0)).unwrap().loss;
    let names: Vec<&str> = params.tensors().iter().map(|(n, _, _)| *n).collect();
    let grads: Vec<Vec<f64>> = analytic.grads.tensors().iter().map(|(_, _, g)| g.to_vec()).collect();
    let h = 1e-5;
    for (k, name) in names.iter().enumerate() {
        let len = grads[k].len();
        let mut fd = vec![0.0; len];
        for i in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[k][i] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[k][i] -= h;
            fd[i] = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        }
        let diff: f64 = fd.iter().zip(&grads[k]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff <= tol * scale.max(1e-8), "{} / {name}: {:e}", cfg.variant, diff / scale);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let data = small_sbm(4, 10);
    for variant in Variant::ALL {
        let cfg = TrainConfig {
            weight_decay: 1e-2,
            ..quiet(variant)
        };
        let p = params_for(&data, &cfg, 11);
        fd_check(&data, &cfg, &p, 1e-4);
    }
}

#[test]
fn gradients_match_finite_differences_with_options() {
    let data = small_sbm(4, 12);
    let cfg = TrainConfig {
        alpha_mode: AlphaMode::Scalar,
        encoder_relu: true,
        augment: false,
        ..quiet(Variant::CgnnWeight)
    };
    fd_check(&data, &cfg, &params_for(&data, &cfg, 13), 1e-4);
    let cfg = TrainConfig {
        solver: Method::AdaptiveRk45,
        rtol: 1e-9,
        atol: 1e-11,
        ..quiet(Variant::Cgnn)
    };
    fd_check(&data, &cfg, &params_for(&data, &cfg, 14), 1e-4);
}

#[test]
fn dropout_masks_enter_gradients_consistently() {
    // With a fixed rng seed both the loss and its gradient see the same masks.
    let data = small_sbm(4, 15);
    let cfg = TrainConfig {
        dropout: 0.3,
        decoder_dropout: 0.2,
        ..quiet(Variant::Cgnn)
    };
    fd_check(&data, &cfg, &params_for(&data, &cfg, 16), 1e-4);
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let data = small_sbm(8, 17);
    let cfg = TrainConfig {
        lr: 0.0,
        ..quiet(Variant::CgnnWeight)
    };
    let out = train(&data, &cfg).unwrap();
    let mut init_rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = ModelParams::init(&cfg, data.num_nodes(), data.features.ncols(), data.num_classes, &mut init_rng);
    for ((name, _, a), (_, _, b)) in out.last.tensors().iter().zip(init.tensors().iter()) {
        let diff = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{name}: {diff:e}");
    }
}

#[test]
fn training_is_deterministic() {
    let data = small_sbm(8, 18);
    let cfg = TrainConfig {
        dropout: 0.5,
        ..quiet(Variant::CgnnWeight)
    };
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.best, b.best);
    let other = train(&data, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(other.history, a.history);
}

#[test]
fn constraints_hold_throughout_training() {
    let data = small_sbm(8, 19);
    let mut cfg = TrainConfig {
        lr: 0.01,
        epochs: 1,
        beta: 0.5,
        ..quiet(Variant::CgnnWeight)
    };
    for epochs in [1, 5, 20] {
        cfg.epochs = epochs;
        let out = train(&data, &cfg).unwrap();
        let w = out.last.weight.as_ref().unwrap();
        assert!(w.eigen_params.iter().all(|&m| (1e-3..=1.0 - 1e-3).contains(&m)));
        assert!(w.orthogonality_defect() <= 0.1, "{}", w.orthogonality_defect());
        assert!(out.last.alpha(data.num_nodes()).iter().all(|&a| a > 0.0 && a < 1.0));
        for m in &out.history {
            for acc in [m.train_acc, m.val_acc, m.test_acc] {
                assert!((0.0..=1.0).contains(&acc));
            }
        }
    }
}

#[test]
fn best_checkpoint_follows_validation_accuracy() {
    let data = small_sbm(8, 20);
    let out = train(&data, &TrainConfig { epochs: 15, ..quiet(Variant::Cgnn) }).unwrap();
    let best = out.history.iter().map(|m| m.val_acc).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_val_acc, best);
    let first = out.history.iter().find(|m| m.val_acc == best).unwrap();
    assert_eq!(out.best_epoch, first.epoch);
    assert_eq!(out.test_acc_at_best_val, first.test_acc);
    let cfg = TrainConfig { epochs: 15, ..quiet(Variant::Cgnn) };
    assert_eq!(evaluate(&out.best, &data, &cfg, &data.split.val).unwrap(), best);
}

#[test]
fn non_finite_input_aborts_training() {
    let mut data = small_sbm(6, 21);
    data.features[(0, 0)] = f64::INFINITY;
    let err = train(&data, &quiet(Variant::Cgnn)).unwrap_err();
    assert!(err.is_numeric(), "{err}");
}

#[test]
fn checkpoint_round_trip() {
    let data = small_sbm(6, 22);
    let cfg = quiet(Variant::CgnnWeight);
    let p = params_for(&data, &cfg, 23);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&p, dir.path()).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    for ((name, shape_a, a), (_, shape_b, b)) in p.tensors().iter().zip(back.tensors().iter()) {
        assert_eq!(shape_a, shape_b, "{name}");
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= 1e-6 * x.abs().max(1.0)), "{name}");
    }
    let manifest = std::fs::read_to_string(dir.path().join(CHECKPOINT_MANIFEST)).unwrap();
    assert!(manifest.starts_with("cgnn-checkpoint 1\ndtype f32-le\n"));
    let total: usize = p.tensors().iter().map(|(_, _, d)| d.len()).sum();
    assert_eq!(std::fs::metadata(dir.path().join(CHECKPOINT_BLOB)).unwrap().len() as usize, total * 4);

    std::fs::write(dir.path().join(CHECKPOINT_BLOB), [0u8; 6]).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(crate::Error::Checkpoint(_))));
}

#[test]
fn discrete_memory_grows_while_adjoint_stays_flat() {
    let data = small_sbm(6, 24);
    let peak = |variant: Variant, steps: usize| {
        let cfg = TrainConfig {
            t1: steps as f64,
            solver_step: Some(1.0),
            discrete_steps: steps,
            ..quiet(variant)
        };
        let p = params_for(&data, &cfg, 25);
        measure_peak(|| loss_and_gradients(&p, &data, &cfg, &data.split.train, &mut rng(0)).unwrap()).1
    };
    assert_eq!(peak(Variant::Cgnn, 5), peak(Variant::Cgnn, 40));
    assert_eq!(peak(Variant::CgnnWeight, 5), peak(Variant::CgnnWeight, 40));
    let (d10, d20, d40) = (peak(Variant::CgnnDiscrete, 10), peak(Variant::CgnnDiscrete, 20), peak(Variant::CgnnDiscrete, 40));
    assert_eq!(d20 - d10, 10);
    assert_eq!(d40 - d20, 20);
}

#[test]
fn config_round_trips_through_json_and_rejects_unknown_keys() {
    let cfg = TrainConfig {
        variant: Variant::CgnnNoRestart,
        optimizer: OptimizerKind::Rmsprop,
        solver_step: Some(0.5),
        ..TrainConfig::default()
    };
    let json = serde_json::to_string(&cfg).unwrap();
    assert!(json.contains("\"cgnn-no-restart\"") && json.contains("\"rmsprop\"") && json.contains("\"fixed-rk4\""));
    assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), cfg);
    assert_eq!(serde_json::from_str::<TrainConfig>("{}").unwrap(), TrainConfig::default());
    assert!(serde_json::from_str::<TrainConfig>("{\"learning_rate\": 1}").is_err());
    assert!(TrainConfig { dropout: 1.0, ..cfg.clone() }.validate().is_err());
    assert!(TrainConfig { epochs: 0, ..cfg.clone() }.validate().is_err());
    assert!(TrainConfig { lr: -1.0, ..cfg }.validate().is_err());
    assert_eq!(Variant::parse("cgnn-weight").unwrap(), Variant::CgnnWeight);
    assert!(Variant::parse("gcn").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn decoded_rows_sum_to_one(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut r = rng(seed);
        let p = decoder(random_mat(3, 5, &mut r) * scale, (0..5).map(|_| r.random_range(-10.0..10.0)).collect());
        let probs = decode(&p, &(random_mat(7, 3, &mut r) * scale)).unwrap();
        for row in probs.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn materialized_alpha_stays_in_open_interval(raw in prop::collection::vec(-800.0f64..800.0, 1..6)) {
        let p = ModelParams {
            alpha_raw: Vector::from_vec(raw.clone()),
            ..decoder(Mat::zeros(1, 2), vec![0.0, 0.0])
        };
        for a in p.alpha(raw.len()) {
            prop_assert!(a > 0.0 && a < 1.0);
        }
    }
}
