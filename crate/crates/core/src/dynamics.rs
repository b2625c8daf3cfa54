//! Forward integration of the node dynamics and adjoint gradients.
//!
//! Two right-hand sides are supported:
//!
//! ```text
//! dH/dt = (A - I) H + E
//! dH/dt = (A - I) H + H (W - I) + E
//! ```
//!
//! with `E` optionally dropped (`use_restart = false`). Both are affine in
//! `H`, so the adjoint `a(t) = dL/dH(t)` obeys
//! `da/dt = -(A^T a - a) - (a W^T - a)` and parameter gradients are time
//! integrals of `a` against `dRHS/dtheta`. The backward pass integrates `H`,
//! `a` and the gradient accumulators jointly from `t1` down to `0`, so its
//! memory does not depend on the number of steps.

use crate::error::{Error, Result};
use crate::graph::PropagationOperator;
use crate::mem::Tracked;
use crate::spectral::{materialize_weight, WeightSpec, EIGEN_CLAMP_EPS};
use crate::{Mat, Vector};

/// Node representation matrix at a point in time.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStates {
    pub h: Mat,
    pub time: f64,
}

impl NodeStates {
    pub fn initial(h: Mat) -> Self {
        Self { h, time: 0.0 }
    }

    pub fn width(&self) -> usize {
        self.h.ncols()
    }
}

/// Which dynamics to integrate.
#[derive(Debug, Clone, Copy)]
pub struct OdeSpec<'a> {
    pub operator: &'a PropagationOperator,
    pub restart: &'a Mat,
    pub weight: Option<&'a WeightSpec>,
    pub use_restart: bool,
}

impl<'a> OdeSpec<'a> {
    pub fn new(operator: &'a PropagationOperator, restart: &'a Mat) -> Self {
        Self {
            operator,
            restart,
            weight: None,
            use_restart: true,
        }
    }

    pub fn with_weight(mut self, weight: &'a WeightSpec) -> Self {
        self.weight = Some(weight);
        self
    }

    pub fn without_restart(mut self) -> Self {
        self.use_restart = false;
        self
    }

    fn check(&self, h: &Mat) -> Result<()> {
        let n = self.operator.num_nodes();
        if h.nrows() != n {
            return Err(Error::dims(format!("state has {} rows, graph has {n} nodes", h.nrows())));
        }
        if self.restart.shape() != h.shape() {
            return Err(Error::dims(format!(
                "restart is {:?}, state is {:?}",
                self.restart.shape(),
                h.shape()
            )));
        }
        if let Some(w) = self.weight {
            if w.dim() != h.ncols() {
                return Err(Error::dims(format!(
                    "weight is {0}x{0}, state width is {1}",
                    w.dim(),
                    h.ncols()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FixedRk4,
    AdaptiveRk45,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub t1: f64,
    /// Fixed step size (also the first trial step for the adaptive method).
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

pub const DEFAULT_FIXED_STEPS: usize = 40;

impl SolverConfig {
    /// Fixed-step RK4 with exactly `steps` steps to `t1`.
    pub fn fixed(t1: f64, steps: usize) -> Self {
        Self {
            method: Method::FixedRk4,
            t1,
            step: if t1 > 0.0 { t1 / steps.max(1) as f64 } else { 1.0 },
            rtol: 1e-3,
            atol: 1e-4,
            max_steps: 100_000,
        }
    }

    /// Dormand-Prince 5(4) with the default tolerances.
    pub fn adaptive(t1: f64) -> Self {
        Self {
            method: Method::AdaptiveRk45,
            ..Self::fixed(t1, DEFAULT_FIXED_STEPS)
        }
    }

    /// Number of equal steps the fixed method takes: `ceil(t1 / step)`.
    pub fn fixed_steps(&self) -> usize {
        if self.t1 <= 0.0 {
            return 0;
        }
        let ratio = self.t1 / self.step;
        // Absorb round-off so that t1 / (t1 / n) gives back n.
        let n = (ratio - 1e-9 * ratio.max(1.0)).ceil();
        (n as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1 >= 0.0 && self.t1.is_finite()) {
            return Err(Error::OutOfRange(format!("t1 = {} must be finite and >= 0", self.t1)));
        }
        if !(self.step > 0.0) {
            return Err(Error::OutOfRange(format!("step = {} must be positive", self.step)));
        }
        if self.method == Method::FixedRk4 && self.max_steps < self.fixed_steps() {
            return Err(Error::OutOfRange(format!(
                "max_steps = {} is below the {} fixed steps needed",
                self.max_steps,
                self.fixed_steps()
            )));
        }
        if self.method == Method::AdaptiveRk45 && !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::OutOfRange("adaptive tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Evaluates the right-hand side at `h`.
pub fn rhs(spec: &OdeSpec<'_>, h: &Mat) -> Result<Mat> {
    spec.check(h)?;
    let mut sys = ForwardSystem::new(spec);
    let state = [Tracked::new(h.clone())];
    let mut out = [Tracked::zeros(h.nrows(), h.ncols())];
    sys.eval(&state, &mut out);
    let [out] = out;
    Ok(out.into_inner())
}

/// Integrates from `h0` (at time 0) to `cfg.t1`.
pub fn integrate(spec: &OdeSpec<'_>, h0: &NodeStates, cfg: &SolverConfig) -> Result<NodeStates> {
    if h0.time != 0.0 {
        return Err(Error::OutOfRange(format!("initial state must be at t = 0, got {}", h0.time)));
    }
    spec.check(&h0.h)?;
    cfg.validate()?;
    let mut sys = ForwardSystem::new(spec);
    let mut state = vec![Tracked::new(h0.h.clone())];
    solve(&mut sys, &mut state, 0.0, cfg.t1, cfg)?;
    let h = state.pop().expect("one component").into_inner();
    Ok(NodeStates { h, time: cfg.t1 })
}

/// Integrates the dense Sylvester ODE `dH/dt = B H + H C + D` from `h0` at
/// time 0 to `cfg.t1`; `C` may be omitted. Used by the oracles for systems
/// that are not graph operators (such as the log-ODE).
pub fn integrate_dense(b: &Mat, c: Option<&Mat>, d: &Mat, h0: &Mat, cfg: &SolverConfig) -> Result<Mat> {
    let (n, w) = h0.shape();
    if b.shape() != (n, n) || d.shape() != (n, w) || c.is_some_and(|c| c.shape() != (w, w)) {
        return Err(Error::dims("dense Sylvester system shapes disagree"));
    }
    cfg.validate()?;
    let mut sys = DenseSystem { b, c, d };
    let mut state = vec![Tracked::new(h0.clone())];
    solve(&mut sys, &mut state, 0.0, cfg.t1, cfg)?;
    Ok(state.pop().expect("one component").into_inner())
}

/// Appends `d` zero columns.
pub fn augment(h: &NodeStates) -> NodeStates {
    NodeStates {
        h: augment_matrix(&h.h),
        time: h.time,
    }
}

/// Keeps the first half of the columns.
pub fn deaugment(h: &NodeStates) -> Result<NodeStates> {
    Ok(NodeStates {
        h: deaugment_matrix(&h.h)?,
        time: h.time,
    })
}

pub fn augment_matrix(m: &Mat) -> Mat {
    let (n, d) = m.shape();
    let mut out = Mat::zeros(n, 2 * d);
    out.columns_mut(0, d).copy_from(m);
    out
}

pub fn deaugment_matrix(m: &Mat) -> Result<Mat> {
    let (_, w) = m.shape();
    if w % 2 != 0 {
        return Err(Error::dims(format!("cannot de-augment odd width {w}")));
    }
    Ok(m.columns(0, w / 2).into_owned())
}

/// Gradients of a scalar loss `L(H(t1))` with respect to the ODE inputs.
#[derive(Debug, Clone)]
pub struct OdeGradients {
    /// `dL/dE` through the restart term, `int_0^t1 a(t) dt`. Zero when the
    /// restart is disabled.
    pub restart: Mat,
    /// `dL/dH(0) = a(0)`. When `H(0) = E` the total gradient is
    /// `restart + initial`.
    pub initial: Mat,
    /// `dL/dalpha_i` for every node.
    pub alpha: Vector,
    pub weight: Option<WeightGradients>,
}

#[derive(Debug, Clone)]
pub struct WeightGradients {
    /// `dL/dW` for the materialized `W`.
    pub matrix: Mat,
    /// `dL/dU`.
    pub basis: Mat,
    /// `dL/dM`, zero where the clamp is active.
    pub eigen_params: Vector,
}

impl WeightGradients {
    fn from_matrix(g: Mat, spec: &WeightSpec) -> Self {
        let m = spec.clamped_eigenvalues();
        let mut basis = (&g + g.transpose()) * &spec.basis;
        for (j, mut col) in basis.column_iter_mut().enumerate() {
            col *= m[j];
        }
        let projected = spec.basis.transpose() * &g * &spec.basis;
        let eigen_params = Vector::from_fn(spec.dim(), |k, _| {
            let x = spec.eigen_params[k];
            if (EIGEN_CLAMP_EPS..=1.0 - EIGEN_CLAMP_EPS).contains(&x) {
                projected[(k, k)]
            } else {
                0.0
            }
        });
        Self {
            matrix: g,
            basis,
            eigen_params,
        }
    }
}

/// Integrates forward from `h0`, then runs [`adjoint_backward_from`].
pub fn adjoint_backward(
    spec: &OdeSpec<'_>,
    h0: &NodeStates,
    cfg: &SolverConfig,
    grad_out: &Mat,
) -> Result<OdeGradients> {
    let h1 = integrate(spec, h0, cfg)?;
    adjoint_backward_from(spec, &h1.h, cfg, grad_out)
}

/// Adjoint pass starting from the final state `h_final = H(t1)` and
/// `grad_out = dL/dH(t1)`. `H` is re-integrated backward alongside the
/// adjoint; nothing from the forward trajectory is stored.
pub fn adjoint_backward_from(
    spec: &OdeSpec<'_>,
    h_final: &Mat,
    cfg: &SolverConfig,
    grad_out: &Mat,
) -> Result<OdeGradients> {
    spec.check(h_final)?;
    cfg.validate()?;
    if grad_out.shape() != h_final.shape() {
        return Err(Error::dims(format!(
            "grad_out is {:?}, H(t1) is {:?}",
            grad_out.shape(),
            h_final.shape()
        )));
    }
    let (n, w) = h_final.shape();
    let mut sys = AdjointSystem::new(spec, n, w);
    let mut state = vec![
        Tracked::new(h_final.clone()),
        Tracked::new(grad_out.clone()),
        Tracked::zeros(n, 1),
    ];
    if spec.use_restart {
        state.push(Tracked::zeros(n, w));
    }
    if spec.weight.is_some() {
        state.push(Tracked::zeros(w, w));
    }
    solve(&mut sys, &mut state, cfg.t1, 0.0, cfg)?;

    let mut parts = state.into_iter().skip(1);
    let initial = parts.next().expect("adjoint").into_inner();
    let alpha = parts.next().expect("alpha accumulator").into_inner();
    let restart = if spec.use_restart {
        parts.next().expect("restart accumulator").into_inner()
    } else {
        Mat::zeros(n, w)
    };
    let weight = spec
        .weight
        .map(|ws| WeightGradients::from_matrix(parts.next().expect("weight accumulator").into_inner(), ws));
    Ok(OdeGradients {
        restart,
        initial,
        alpha: Vector::from_column_slice(alpha.as_slice()),
        weight,
    })
}

/// An autonomous system over a list of matrix components.
trait System {
    fn eval(&mut self, state: &[Tracked], out: &mut [Tracked]);
}

struct ForwardSystem<'a> {
    operator: &'a PropagationOperator,
    restart: Option<&'a Mat>,
    weight: Option<Mat>,
}

impl<'a> ForwardSystem<'a> {
    fn new(spec: &OdeSpec<'a>) -> Self {
        Self {
            operator: spec.operator,
            restart: spec.use_restart.then_some(spec.restart),
            weight: spec.weight.map(materialize_weight),
        }
    }
}

/// `out = (A - I) h [+ h (W - I)] [+ E]`.
fn forward_rhs(operator: &PropagationOperator, weight: Option<&Mat>, restart: Option<&Mat>, h: &Mat, out: &mut Mat) {
    operator.apply_into(h, out);
    *out -= h;
    if let Some(w) = weight {
        out.gemm(1.0, h, w, 1.0);
        *out -= h;
    }
    if let Some(e) = restart {
        *out += e;
    }
}

impl System for ForwardSystem<'_> {
    fn eval(&mut self, state: &[Tracked], out: &mut [Tracked]) {
        forward_rhs(self.operator, self.weight.as_ref(), self.restart, &state[0], &mut out[0]);
    }
}

struct DenseSystem<'a> {
    b: &'a Mat,
    c: Option<&'a Mat>,
    d: &'a Mat,
}

impl System for DenseSystem<'_> {
    fn eval(&mut self, state: &[Tracked], out: &mut [Tracked]) {
        let h: &Mat = &state[0];
        out[0].copy_from(self.d);
        out[0].gemm(1.0, self.b, h, 1.0);
        if let Some(c) = self.c {
            out[0].gemm(1.0, h, c, 1.0);
        }
    }
}

/// State layout: `[H, a, g_alpha (n x 1), g_E?, g_W?]`.
struct AdjointSystem<'a> {
    forward: ForwardSystem<'a>,
    weight_t: Option<Mat>,
    kernel_h: Tracked,
    scratch: Tracked,
}

impl<'a> AdjointSystem<'a> {
    fn new(spec: &OdeSpec<'a>, n: usize, w: usize) -> Self {
        let forward = ForwardSystem::new(spec);
        let weight_t = forward.weight.as_ref().map(Mat::transpose);
        Self {
            forward,
            weight_t,
            kernel_h: Tracked::zeros(n, w),
            scratch: Tracked::zeros(n, w),
        }
    }
}

impl System for AdjointSystem<'_> {
    fn eval(&mut self, state: &[Tracked], out: &mut [Tracked]) {
        let op = self.forward.operator;
        let h: &Mat = &state[0];
        let a: &Mat = &state[1];
        let (dh, rest) = out.split_first_mut().expect("state layout");
        let (da, rest) = rest.split_first_mut().expect("state layout");
        let (dalpha, rest) = rest.split_first_mut().expect("state layout");

        forward_rhs(op, self.forward.weight.as_ref(), self.forward.restart, h, dh);

        // da/dt = -(A^T a - a) - (a W^T - a)
        op.apply_transpose_into(a, &mut self.scratch, da);
        **da -= a;
        if let Some(wt) = &self.weight_t {
            da.gemm(1.0, a, wt, 1.0);
            **da -= a;
        }
        da.neg_mut();

        // d(g_alpha_i)/dt = -sum_k a_ik (K h)_ik
        op.apply_kernel_into(h, &mut self.kernel_h);
        let n = h.nrows();
        let dalpha = dalpha.as_mut_slice();
        dalpha.fill(0.0);
        for (a_col, kh_col) in a.as_slice().chunks_exact(n).zip(self.kernel_h.as_slice().chunks_exact(n)) {
            for i in 0..n {
                dalpha[i] -= a_col[i] * kh_col[i];
            }
        }

        let mut rest = rest.iter_mut();
        if self.forward.restart.is_some() {
            let de = rest.next().expect("restart accumulator");
            de.copy_from(a);
            de.neg_mut();
        }
        if self.weight_t.is_some() {
            let dw = rest.next().expect("weight accumulator");
            dw.gemm_tr(-1.0, h, a, 0.0);
        }
    }
}

/// `dst += c * src`.
fn add_scaled(dst: &mut Mat, c: f64, src: &Mat) {
    for (d, &s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *d += c * s;
    }
}

fn alloc_like(state: &[Tracked]) -> Vec<Tracked> {
    state.iter().map(|m| Tracked::zeros(m.nrows(), m.ncols())).collect()
}

/// `dst = src + c * k` componentwise.
fn combine(dst: &mut [Tracked], src: &[Tracked], terms: &[(f64, &[Tracked])]) {
    for (i, d) in dst.iter_mut().enumerate() {
        d.copy_from(&src[i]);
        for (c, k) in terms {
            if *c != 0.0 {
                add_scaled(d, *c, &k[i]);
            }
        }
    }
}

fn check_finite(state: &[Tracked], t: f64, step: usize) -> Result<()> {
    if state.iter().all(|m| m.iter().all(|x| x.is_finite())) {
        Ok(())
    } else {
        Err(Error::NonFinite { t, step })
    }
}

fn solve(sys: &mut impl System, state: &mut [Tracked], t0: f64, t1: f64, cfg: &SolverConfig) -> Result<()> {
    if t0 == t1 {
        return Ok(());
    }
    match cfg.method {
        Method::FixedRk4 => rk4(sys, state, t0, t1, cfg.fixed_steps()),
        Method::AdaptiveRk45 => dopri5(sys, state, t0, t1, cfg),
    }
}

fn rk4(sys: &mut impl System, y: &mut [Tracked], t0: f64, t1: f64, steps: usize) -> Result<()> {
    let h = (t1 - t0) / steps as f64;
    let mut k1 = alloc_like(y);
    let mut k2 = alloc_like(y);
    let mut k3 = alloc_like(y);
    let mut k4 = alloc_like(y);
    let mut tmp = alloc_like(y);
    for step in 0..steps {
        sys.eval(y, &mut k1);
        combine(&mut tmp, y, &[(0.5 * h, &k1)]);
        sys.eval(&tmp, &mut k2);
        combine(&mut tmp, y, &[(0.5 * h, &k2)]);
        sys.eval(&tmp, &mut k3);
        combine(&mut tmp, y, &[(h, &k3)]);
        sys.eval(&tmp, &mut k4);
        for i in 0..y.len() {
            add_scaled(&mut y[i], h / 6.0, &k1[i]);
            add_scaled(&mut y[i], h / 3.0, &k2[i]);
            add_scaled(&mut y[i], h / 3.0, &k3[i]);
            add_scaled(&mut y[i], h / 6.0, &k4[i]);
        }
        check_finite(y, t0 + (step + 1) as f64 * h, step + 1)?;
    }
    Ok(())
}

// Dormand-Prince 5(4) tableau.
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0];
const B: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
/// Fifth- minus fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn error_norm(err: &[Tracked], y: &[Tracked], y_new: &[Tracked], rtol: f64, atol: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((e, a), b) in err.iter().zip(y).zip(y_new) {
        for ((&e, &a), &b) in e.iter().zip(a.iter()).zip(b.iter()) {
            let scale = atol + rtol * a.abs().max(b.abs());
            sum += (e / scale).powi(2);
            count += 1;
        }
    }
    (sum / count.max(1) as f64).sqrt()
}

fn dopri5(sys: &mut impl System, y: &mut [Tracked], t0: f64, t1: f64, cfg: &SolverConfig) -> Result<()> {
    let direction = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut k: Vec<Vec<Tracked>> = (0..7).map(|_| alloc_like(y)).collect();
    let mut tmp = alloc_like(y);
    let mut err = alloc_like(y);

    let mut t = t0;
    let mut h = cfg.step.min(span);
    let mut steps = 0usize;
    sys.eval(y, &mut k[0]);
    while (t1 - t) * direction > 1e-12 * span.max(1.0) {
        if steps >= cfg.max_steps {
            return Err(Error::MaxSteps(cfg.max_steps));
        }
        h = h.min((t1 - t).abs());
        let hs = h * direction;

        let rows: [&[f64]; 5] = [&A2, &A3, &A4, &A5, &A6];
        for (stage, coeffs) in rows.iter().enumerate() {
            let terms: Vec<(f64, &[Tracked])> =
                coeffs.iter().enumerate().map(|(j, &c)| (hs * c, k[j].as_slice())).collect();
            combine(&mut tmp, y, &terms);
            let (_, later) = k.split_at_mut(stage + 1);
            sys.eval(&tmp, &mut later[0]);
        }
        // Fifth-order solution into `tmp`, then k[6] = f(y_new) (FSAL).
        let terms: Vec<(f64, &[Tracked])> = B.iter().enumerate().map(|(j, &c)| (hs * c, k[j].as_slice())).collect();
        combine(&mut tmp, y, &terms);
        sys.eval(&tmp, &mut k[6]);
        for (i, e) in err.iter_mut().enumerate() {
            e.fill(0.0);
            for (j, &c) in E.iter().enumerate() {
                if c != 0.0 {
                    add_scaled(e, hs * c, &k[j][i]);
                }
            }
        }
        let norm = error_norm(&err, y, &tmp, cfg.rtol, cfg.atol);
        if !norm.is_finite() {
            return Err(Error::NonFinite { t: t + hs, step: steps + 1 });
        }
        steps += 1;
        if norm <= 1.0 {
            t += hs;
            for (dst, src) in y.iter_mut().zip(&tmp) {
                dst.copy_from(src);
            }
            k.swap(0, 6);
            check_finite(y, t, steps)?;
        }
        let factor = if norm == 0.0 { 10.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 10.0) };
        h *= factor;
        if h < 1e-14 * span.max(1.0) {
            return Err(Error::NonFinite { t, step: steps });
        }
    }
    Ok(())
}

/// `acc_i += sum_k g_ik (K h)_ik`, the per-node `alpha` gradient of
/// `<g, A h>`; used by the discrete backward pass.
pub(crate) fn accumulate_alpha_grad(operator: &PropagationOperator, g: &Mat, h: &Mat, scratch: &mut Mat, acc: &mut [f64]) {
    operator.apply_kernel_into(h, scratch);
    let n = h.nrows();
    for (g_col, kh_col) in g.as_slice().chunks_exact(n).zip(scratch.as_slice().chunks_exact(n)) {
        for i in 0..n {
            acc[i] += g_col[i] * kh_col[i];
        }
    }
}

#[cfg(test)]
mod tests;
