use proptest::prelude::*;

use super::*;
use crate::closed_form::{analytic_limit_no_weight, analytic_solution_no_weight, analytic_solution_with_weight, no_restart_solution};
use crate::graph::regularize;
use crate::mem::measure_peak;
use crate::spectral::orthogonal_init;
use crate::testutil::{assert_close, random_mat, random_operator, rel_err, rng, scalar_operator};

fn scalar(x: f64) -> Mat {
    Mat::from_element(1, 1, x)
}

fn scalar_weight(w: f64) -> WeightSpec {
    WeightSpec::new(scalar(1.0), Vector::from_element(1, w)).unwrap()
}

#[test]
fn rhs_examples() {
    let op = scalar_operator(0.5);
    let e = scalar(1.0);
    let spec = OdeSpec::new(&op, &e);
    assert_close(&rhs(&spec, &scalar(1.0)).unwrap(), &scalar(0.5), 1e-15);

    let weight = scalar_weight(0.5);
    let spec = OdeSpec::new(&op, &e).with_weight(&weight);
    assert_close(&rhs(&spec, &scalar(1.0)).unwrap(), &scalar(0.0), 1e-15);

    let spec = OdeSpec::new(&op, &e).without_restart();
    assert_close(&rhs(&spec, &scalar(1.0)).unwrap(), &scalar(-0.5), 1e-15);
}

#[test]
fn rhs_vanishes_at_fixed_point() {
    let mut r = rng(1);
    let op = random_operator(12, (0.9, 0.9), 0.5, &mut r);
    let e = random_mat(12, 3, &mut r);
    let fixed = analytic_limit_no_weight(&op.to_dense(), &e).unwrap();
    let d = rhs(&OdeSpec::new(&op, &e), &fixed).unwrap();
    assert!(d.abs().max() < 1e-12, "{}", d.abs().max());
}

#[test]
fn rhs_rejects_mismatched_shapes() {
    let op = scalar_operator(0.5);
    let e = Mat::zeros(1, 2);
    let spec = OdeSpec::new(&op, &e);
    assert!(matches!(rhs(&spec, &Mat::zeros(1, 3)), Err(Error::DimensionMismatch(_))));
    assert!(matches!(rhs(&spec, &Mat::zeros(2, 2)), Err(Error::DimensionMismatch(_))));
    let weight = scalar_weight(0.5);
    let spec = OdeSpec::new(&op, &e).with_weight(&weight);
    assert!(matches!(rhs(&spec, &Mat::zeros(1, 2)), Err(Error::DimensionMismatch(_))));
}

#[test]
fn integrate_scalar_example() {
    let op = scalar_operator(0.5);
    let e = scalar(1.0);
    let out = integrate(&OdeSpec::new(&op, &e), &NodeStates::initial(e.clone()), &SolverConfig::fixed(2.0, 40)).unwrap();
    assert_eq!(out.time, 2.0);
    assert!((out.h[(0, 0)] - (2.0 - (-1.0f64).exp())).abs() < 1e-8);
    assert!((out.h[(0, 0)] - 1.6321).abs() < 1e-4);
}

#[test]
fn integrate_dense_constant_derivative() {
    let zero = Mat::zeros(2, 2);
    let c = Mat::from_row_slice(2, 1, &[0.5, -2.0]);
    let h0 = Mat::from_row_slice(2, 1, &[1.0, 1.0]);
    let out = integrate_dense(&zero, None, &c, &h0, &SolverConfig::fixed(3.0, 7)).unwrap();
    assert_close(&out, &(h0 + c * 3.0), 1e-13);
}

#[test]
fn integrate_matches_closed_form() {
    let mut r = rng(2);
    for t1 in [1.0, 5.0, 12.0] {
        let op = random_operator(20, (0.9, 0.9), 0.5, &mut r);
        let e = random_mat(20, 4, &mut r);
        let out = integrate(&OdeSpec::new(&op, &e), &NodeStates::initial(e.clone()), &SolverConfig::fixed(t1, 40)).unwrap();
        let exact = analytic_solution_no_weight(&op.to_dense(), &e, t1).unwrap();
        let err = rel_err(&out.h, &exact);
        assert!(err <= 1e-6, "t1 = {t1}: {err:e}");
    }
}

#[test]
fn integrate_matches_closed_form_with_weight() {
    let mut r = rng(3);
    let op = random_operator(8, (0.85, 0.85), 0.5, &mut r);
    let e = random_mat(8, 3, &mut r);
    let weight = WeightSpec::new(orthogonal_init(3, &mut r), Vector::from_vec(vec![0.2, 0.5, 0.9])).unwrap();
    let spec = OdeSpec::new(&op, &e).with_weight(&weight);
    let out = integrate(&spec, &NodeStates::initial(e.clone()), &SolverConfig::fixed(4.0, 80)).unwrap();
    let exact = analytic_solution_with_weight(&op.to_dense(), &materialize_weight(&weight), &e, 4.0).unwrap();
    assert!(rel_err(&out.h, &exact) <= 1e-6);
}

#[test]
fn rk4_is_fourth_order() {
    let mut r = rng(4);
    let op = random_operator(15, (0.9, 0.9), 0.5, &mut r);
    let e = random_mat(15, 2, &mut r);
    let spec = OdeSpec::new(&op, &e);
    let exact = analytic_solution_no_weight(&op.to_dense(), &e, 5.0).unwrap();
    let err = |steps| {
        let out = integrate(&spec, &NodeStates::initial(e.clone()), &SolverConfig::fixed(5.0, steps)).unwrap();
        (out.h - &exact).abs().max()
    };
    let ratio = err(5) / err(10);
    assert!(ratio >= 8.0, "ratio {ratio}");
}

#[test]
fn fixed_point_is_stationary() {
    let mut r = rng(5);
    let op = random_operator(12, (0.95, 0.95), 0.5, &mut r);
    let e = random_mat(12, 3, &mut r);
    let fixed = analytic_limit_no_weight(&op.to_dense(), &e).unwrap();
    let spec = OdeSpec::new(&op, &e);
    for t1 in [1.0, 10.0, 50.0] {
        let out = integrate(&spec, &NodeStates::initial(fixed.clone()), &SolverConfig::fixed(t1, 100)).unwrap();
        assert!((out.h - &fixed).norm() <= 1e-8);
    }
}

#[test]
fn long_time_limit() {
    let mut r = rng(6);
    let op = random_operator(12, (0.95, 0.95), 0.5, &mut r);
    let e = random_mat(12, 3, &mut r);
    let limit = analytic_limit_no_weight(&op.to_dense(), &e).unwrap();
    let spec = OdeSpec::new(&op, &e);
    let h0 = NodeStates::initial(e.clone());
    let fixed = integrate(&spec, &h0, &SolverConfig::fixed(300.0, 600)).unwrap();
    assert!((&fixed.h - &limit).norm() / limit.norm() <= 1e-5);
    let adaptive = integrate(&spec, &h0, &SolverConfig::adaptive(300.0)).unwrap();
    assert!((&adaptive.h - &limit).norm() / limit.norm() <= 1e-3);
}

#[test]
fn no_restart_matches_matrix_exponential() {
    let mut r = rng(7);
    let op = random_operator(10, (0.9, 0.9), 0.5, &mut r);
    let e = random_mat(10, 2, &mut r);
    let h0 = random_mat(10, 2, &mut r);
    let spec = OdeSpec::new(&op, &e).without_restart();
    let out = integrate(&spec, &NodeStates::initial(h0.clone()), &SolverConfig::fixed(6.0, 60)).unwrap();
    let exact = no_restart_solution(&op.to_dense(), &h0, 6.0).unwrap();
    assert!(rel_err(&out.h, &exact) <= 1e-6);
}

#[test]
fn per_node_alpha_matches_pade_closed_form() {
    let mut r = rng(8);
    let op = random_operator(10, (0.5, 0.95), 0.5, &mut r);
    let e = random_mat(10, 2, &mut r);
    let out = integrate(&OdeSpec::new(&op, &e), &NodeStates::initial(e.clone()), &SolverConfig::fixed(3.0, 40)).unwrap();
    let exact = analytic_solution_no_weight(&op.to_dense(), &e, 3.0).unwrap();
    assert!(rel_err(&out.h, &exact) <= 1e-6);
}

#[test]
fn augmentation_examples() {
    let mut r = rng(9);
    let h = NodeStates::initial(random_mat(6, 3, &mut r));
    let aug = augment(&h);
    assert_eq!(aug.width(), 6);
    assert_eq!(deaugment(&aug).unwrap(), h);
    assert!(matches!(deaugment(&NodeStates::initial(Mat::zeros(2, 3))), Err(Error::DimensionMismatch(_))));

    let op = random_operator(6, (0.9, 0.9), 0.5, &mut r);
    let e_aug = augment_matrix(&h.h);
    let cfg = SolverConfig::fixed(4.0, 40);
    let out_aug = integrate(&OdeSpec::new(&op, &e_aug), &aug, &cfg).unwrap();
    assert_eq!(out_aug.h.columns(3, 3).abs().max(), 0.0);
    let out = integrate(&OdeSpec::new(&op, &h.h), &h, &cfg).unwrap();
    assert_close(&deaugment(&out_aug).unwrap().h, &out.h, 1e-10);
}

#[test]
fn adaptive_solver_respects_max_steps_and_tolerance() {
    let mut r = rng(10);
    let op = random_operator(10, (0.9, 0.9), 0.5, &mut r);
    let e = random_mat(10, 2, &mut r);
    let spec = OdeSpec::new(&op, &e);
    let h0 = NodeStates::initial(e.clone());
    let exact = analytic_solution_no_weight(&op.to_dense(), &e, 10.0).unwrap();
    let out = integrate(&spec, &h0, &SolverConfig::adaptive(10.0)).unwrap();
    assert!(rel_err(&out.h, &exact) <= 1e-3);

    let tight = SolverConfig {
        rtol: 1e-10,
        atol: 1e-12,
        ..SolverConfig::adaptive(10.0)
    };
    let out = integrate(&spec, &h0, &tight).unwrap();
    assert!(rel_err(&out.h, &exact) <= 1e-8);

    let starved = SolverConfig {
        max_steps: 3,
        ..tight
    };
    assert!(matches!(integrate(&spec, &h0, &starved), Err(Error::MaxSteps(3))));
}

#[test]
fn non_finite_state_aborts_with_location() {
    let op = scalar_operator(0.5);
    let e = scalar(f64::NAN);
    let err = integrate(&OdeSpec::new(&op, &e), &NodeStates::initial(scalar(1.0)), &SolverConfig::fixed(1.0, 4)).unwrap_err();
    assert!(err.is_numeric());
    match err {
        Error::NonFinite { t, step } => {
            assert_eq!(step, 1);
            assert!((t - 0.25).abs() < 1e-15);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn solver_config_validation() {
    assert_eq!(SolverConfig::fixed(12.1, 40).fixed_steps(), 40);
    assert_eq!(SolverConfig { step: 0.3, ..SolverConfig::fixed(1.0, 1) }.fixed_steps(), 4);
    assert!(SolverConfig { step: 0.0, ..SolverConfig::fixed(1.0, 1) }.validate().is_err());
    assert!(SolverConfig::fixed(-1.0, 1).validate().is_err());
    assert!(SolverConfig { max_steps: 10, ..SolverConfig::fixed(1.0, 40) }.validate().is_err());
    let op = scalar_operator(0.5);
    let e = scalar(1.0);
    let moved = NodeStates { h: e.clone(), time: 1.0 };
    assert!(integrate(&OdeSpec::new(&op, &e), &moved, &SolverConfig::fixed(1.0, 4)).is_err());
}

#[test]
fn adjoint_scalar_example() {
    let op = scalar_operator(0.5);
    let e = scalar(1.0);
    let g = adjoint_backward(&OdeSpec::new(&op, &e), &NodeStates::initial(e.clone()), &SolverConfig::fixed(1.0, 40), &scalar(1.0)).unwrap();
    let total = g.restart[(0, 0)] + g.initial[(0, 0)];
    assert!((total - (2.0 - (-0.5f64).exp())).abs() < 1e-9);
    assert!((total - 1.3935).abs() < 1e-4);
    // Restart part alone: (1 - e^{-1/2}) / (1/2).
    assert!((g.restart[(0, 0)] - 2.0 * (1.0 - (-0.5f64).exp())).abs() < 1e-9);
}

#[test]
fn adjoint_of_zero_is_zero() {
    let mut r = rng(11);
    let op = random_operator(8, (0.5, 0.9), 0.5, &mut r);
    let e = random_mat(8, 3, &mut r);
    let weight = WeightSpec::random(3, 0.6, &mut r);
    let spec = OdeSpec::new(&op, &e).with_weight(&weight);
    let g = adjoint_backward(&spec, &NodeStates::initial(e.clone()), &SolverConfig::fixed(2.0, 20), &Mat::zeros(8, 3)).unwrap();
    assert_eq!(g.restart.abs().max(), 0.0);
    assert_eq!(g.initial.abs().max(), 0.0);
    assert_eq!(g.alpha.abs().max(), 0.0);
    let w = g.weight.unwrap();
    assert_eq!(w.basis.abs().max() + w.eigen_params.abs().max() + w.matrix.abs().max(), 0.0);
}

const FD_STEP: f64 = 1e-5;

/// Central differences of `f` at every entry of `x`.
fn fd_grad(x: &Mat, f: impl Fn(&Mat) -> f64) -> Mat {
    let mut grad = Mat::zeros(x.nrows(), x.ncols());
    for k in 0..x.len() {
        let mut plus = x.clone();
        plus[k] += FD_STEP;
        let mut minus = x.clone();
        minus[k] -= FD_STEP;
        grad[k] = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
    }
    grad
}

fn assert_grad(name: &str, analytic: &Mat, fd: &Mat) {
    let err = (analytic - fd).norm() / fd.norm().max(1e-300);
    assert!(err <= 1e-4, "{name}: relative error {err:e}\nadjoint {analytic}\nfd {fd}");
}

struct Instance {
    op: PropagationOperator,
    e: Mat,
    h0: Mat,
    weight: Option<WeightSpec>,
    use_restart: bool,
    probe: Mat,
    cfg: SolverConfig,
}

impl Instance {
    fn new(seed: u64, with_weight: bool, use_restart: bool) -> Self {
        let mut r = rng(seed);
        let n = 10;
        let d = 3;
        Self {
            op: random_operator(n, (0.6, 0.95), 0.5, &mut r),
            e: random_mat(n, d, &mut r),
            h0: random_mat(n, d, &mut r),
            weight: with_weight.then(|| WeightSpec::new(orthogonal_init(d, &mut r), Vector::from_vec(vec![0.3, 0.6, 0.8])).unwrap()),
            use_restart,
            probe: random_mat(n, d, &mut r),
            cfg: SolverConfig::fixed(2.0, 40),
        }
    }

    fn spec<'a>(&'a self, op: &'a PropagationOperator, e: &'a Mat, weight: Option<&'a WeightSpec>) -> OdeSpec<'a> {
        OdeSpec {
            operator: op,
            restart: e,
            weight,
            use_restart: self.use_restart,
        }
    }

    /// `L = <probe, H(t1)>`.
    fn loss(&self, op: &PropagationOperator, e: &Mat, h0: &Mat, weight: Option<&WeightSpec>) -> f64 {
        let out = integrate(&self.spec(op, e, weight), &NodeStates::initial(h0.clone()), &self.cfg).unwrap();
        self.probe.dot(&out.h)
    }

    fn check(&self) {
        let w = self.weight.as_ref();
        let g = adjoint_backward(&self.spec(&self.op, &self.e, w), &NodeStates::initial(self.h0.clone()), &self.cfg, &self.probe).unwrap();

        let fd_h0 = fd_grad(&self.h0, |h0| self.loss(&self.op, &self.e, h0, w));
        assert_grad("H0", &g.initial, &fd_h0);

        if self.use_restart {
            let fd_e = fd_grad(&self.e, |e| self.loss(&self.op, e, &self.h0, w));
            assert_grad("E", &g.restart, &fd_e);
        } else {
            assert_eq!(g.restart.abs().max(), 0.0);
        }

        let alpha = Mat::from_column_slice(self.op.num_nodes(), 1, self.op.alpha());
        let fd_alpha = fd_grad(&alpha, |a| {
            let op = regularize(self.op.base(), a.as_slice(), self.op.gamma()).unwrap();
            self.loss(&op, &self.e, &self.h0, w)
        });
        assert_grad("alpha", &Mat::from_column_slice(g.alpha.len(), 1, g.alpha.as_slice()), &fd_alpha);

        if let Some(ws) = w {
            let wg = g.weight.as_ref().unwrap();
            let fd_u = fd_grad(&ws.basis, |u| {
                let spec = WeightSpec::new(u.clone(), ws.eigen_params.clone()).unwrap();
                self.loss(&self.op, &self.e, &self.h0, Some(&spec))
            });
            assert_grad("U", &wg.basis, &fd_u);
            let m = Mat::from_column_slice(ws.dim(), 1, ws.eigen_params.as_slice());
            let fd_m = fd_grad(&m, |m| {
                let spec = WeightSpec::new(ws.basis.clone(), Vector::from_column_slice(m.as_slice())).unwrap();
                self.loss(&self.op, &self.e, &self.h0, Some(&spec))
            });
            assert_grad("M", &Mat::from_column_slice(ws.dim(), 1, wg.eigen_params.as_slice()), &fd_m);
        }
    }
}

#[test]
fn adjoint_matches_finite_differences_without_weight() {
    Instance::new(20, false, true).check();
}

#[test]
fn adjoint_matches_finite_differences_with_weight() {
    Instance::new(21, true, true).check();
}

#[test]
fn adjoint_matches_finite_differences_without_restart() {
    Instance::new(22, false, false).check();
    Instance::new(23, true, false).check();
}

#[test]
fn adjoint_with_adaptive_solver_matches_fixed() {
    let inst = Instance::new(24, true, true);
    let spec = inst.spec(&inst.op, &inst.e, inst.weight.as_ref());
    let h0 = NodeStates::initial(inst.h0.clone());
    let fixed = adjoint_backward(&spec, &h0, &inst.cfg, &inst.probe).unwrap();
    let tight = SolverConfig {
        rtol: 1e-9,
        atol: 1e-11,
        ..SolverConfig::adaptive(2.0)
    };
    let adaptive = adjoint_backward(&spec, &h0, &tight, &inst.probe).unwrap();
    assert!(rel_err(&adaptive.restart, &fixed.restart) < 1e-7);
    assert!(rel_err(&adaptive.initial, &fixed.initial) < 1e-7);
}

#[test]
fn clamped_eigen_parameters_get_no_gradient() {
    let mut r = rng(25);
    let op = random_operator(6, (0.9, 0.9), 0.5, &mut r);
    let e = random_mat(6, 2, &mut r);
    let weight = WeightSpec::new(orthogonal_init(2, &mut r), Vector::from_vec(vec![1.5, 0.5])).unwrap();
    let g = adjoint_backward(&OdeSpec::new(&op, &e).with_weight(&weight), &NodeStates::initial(e.clone()), &SolverConfig::fixed(1.0, 10), &e).unwrap();
    let m = g.weight.unwrap().eigen_params;
    assert_eq!(m[0], 0.0);
    assert!(m[1] != 0.0);
}

#[test]
fn adjoint_memory_is_independent_of_step_count() {
    let mut r = rng(26);
    let op = random_operator(30, (0.9, 0.9), 0.5, &mut r);
    let e = random_mat(30, 4, &mut r);
    let weight = WeightSpec::random(4, 0.5, &mut r);
    let spec = OdeSpec::new(&op, &e).with_weight(&weight);
    let peak = |steps: usize| {
        let cfg = SolverConfig::fixed(steps as f64, steps);
        measure_peak(|| adjoint_backward(&spec, &NodeStates::initial(e.clone()), &cfg, &e).unwrap()).1
    };
    let small = peak(5);
    assert!(small > 0);
    assert_eq!(small, peak(80));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn augment_round_trip(rows in 1usize..6, cols in 1usize..5, seed in any::<u64>()) {
        let h = NodeStates::initial(random_mat(rows, cols, &mut rng(seed)));
        let aug = augment(&h);
        prop_assert_eq!(aug.width(), 2 * cols);
        prop_assert_eq!(deaugment(&aug).unwrap(), h);
    }

    #[test]
    fn integration_is_linear_in_inputs(seed in any::<u64>(), scale in -3.0f64..3.0) {
        let mut r = rng(seed);
        let op = random_operator(6, (0.2, 0.95), 0.5, &mut r);
        let e = random_mat(6, 2, &mut r);
        let h0 = random_mat(6, 2, &mut r);
        let cfg = SolverConfig::fixed(1.5, 12);
        let base = integrate(&OdeSpec::new(&op, &e), &NodeStates::initial(h0.clone()), &cfg).unwrap();
        let scaled_e = &e * scale;
        let scaled = integrate(&OdeSpec::new(&op, &scaled_e), &NodeStates::initial(&h0 * scale), &cfg).unwrap();
        prop_assert!((scaled.h - base.h * scale).abs().max() <= 1e-12 * (1.0 + scale.abs()) * 10.0);
    }

    #[test]
    fn contraction_toward_fixed_point(seed in any::<u64>(), t1 in 0.5f64..8.0) {
        // Every eigenvalue of A - I is below alpha - 1 < 0, so the distance
        // to the fixed point never grows.
        let mut r = rng(seed);
        let op = random_operator(8, (0.9, 0.9), 0.5, &mut r);
        let e = random_mat(8, 2, &mut r);
        let h0 = random_mat(8, 2, &mut r);
        let fixed = analytic_limit_no_weight(&op.to_dense(), &e).unwrap();
        let out = integrate(&OdeSpec::new(&op, &e), &NodeStates::initial(h0.clone()), &SolverConfig::fixed(t1, 20)).unwrap();
        prop_assert!((out.h - &fixed).norm() <= (h0 - &fixed).norm() * (1.0 + 1e-12));
    }
}
