//! Closed-form solutions of the propagation dynamics and the dense oracles
//! that check them against each other and against numeric integration.
//!
//! Everything here works on dense matrices and is meant for graphs of at
//! most a few hundred nodes.

use serde::Serialize;

use crate::dynamics::{integrate_dense, SolverConfig};
use crate::error::{Error, Result};
use crate::spectral::{eig_sym, matrix_exp, matrix_log_decomposed, EigenDecomp, LOG_FLOOR};
use crate::Mat;

/// Eigenvalue sums closer to zero than this are treated as resonant.
pub const RESONANCE_TOL: f64 = 1e-12;

/// Outcome of one oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub name: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub const CSV_HEADER: &'static str = "name,max_abs_err,max_rel_err,tolerance,pass";

    /// Compares `value` against `reference`; the relative error is
    /// `max|value - reference| / max|reference|`.
    pub fn compare(name: impl Into<String>, value: &Mat, reference: &Mat, tolerance: f64) -> Self {
        let (abs, rel) = errors(value, reference);
        Self::from_errors(name, abs, rel, tolerance)
    }

    pub fn from_errors(name: impl Into<String>, max_abs_err: f64, max_rel_err: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_abs_err,
            max_rel_err,
            tolerance,
            pass: max_rel_err <= tolerance,
        }
    }

    /// Folds several comparisons into one row, keeping the worst errors.
    pub fn worst_of(name: impl Into<String>, tolerance: f64, reports: &[OracleReport]) -> Self {
        let abs = reports.iter().map(|r| r.max_abs_err).fold(0.0, f64::max);
        let rel = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
        // NaN must fail the row, which `fold(max)` would hide.
        let rel = if reports.iter().any(|r| r.max_rel_err.is_nan()) { f64::NAN } else { rel };
        Self::from_errors(name, abs, rel, tolerance)
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{:.9e},{}",
            self.name, self.max_abs_err, self.max_rel_err, self.tolerance, self.pass
        )
    }
}

/// `(max |a - b|, max |a - b| / max |b|)`.
pub fn errors(value: &Mat, reference: &Mat) -> (f64, f64) {
    if value.shape() != reference.shape() {
        return (f64::INFINITY, f64::INFINITY);
    }
    let abs = (value - reference).abs().max();
    let scale = reference.abs().max();
    let rel = if scale > 0.0 { abs / scale } else { abs };
    (abs, rel)
}

fn identity_like(m: &Mat) -> Mat {
    Mat::identity(m.nrows(), m.ncols())
}

fn check_square(name: &str, m: &Mat) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::dims(format!("{name} must be square, got {:?}", m.shape())))
    }
}

fn check_rows(a: &Mat, e: &Mat) -> Result<()> {
    check_square("A", a)?;
    if a.nrows() != e.nrows() {
        return Err(Error::dims(format!("A is {0}x{0}, E has {1} rows", a.nrows(), e.nrows())));
    }
    Ok(())
}

/// Solves `m x = rhs` by LU, reporting a singular `m` by `what`.
fn solve(m: &Mat, rhs: &Mat, what: &str) -> Result<Mat> {
    m.clone()
        .lu()
        .solve(rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// `H_n` of the recursion `H_{k+1} = A H_k W + E`, `H_0 = E`.
pub fn discrete_propagate(a: &Mat, e: &Mat, w: Option<&Mat>, n: usize) -> Result<Mat> {
    check_rows(a, e)?;
    if let Some(w) = w {
        if w.shape() != (e.ncols(), e.ncols()) {
            return Err(Error::dims(format!("W is {:?}, E has {} columns", w.shape(), e.ncols())));
        }
    }
    let mut h = e.clone();
    for _ in 0..n {
        let ah = a * &h;
        h = match w {
            Some(w) => ah * w + e,
            None => ah + e,
        };
    }
    Ok(h)
}

/// `(A - I)^-1 (A^{n+1} - I) E`, the closed form of the unweighted
/// recursion.
pub fn discrete_closed_form(a: &Mat, e: &Mat, n: usize) -> Result<Mat> {
    check_rows(a, e)?;
    let i = identity_like(a);
    let power = a.pow(n as u32 + 1);
    solve(&(a - &i), &((power - &i) * e), "A - I")
}

/// `(A - I)^-1 (e^{(A-I)t} - I) E + e^{(A-I)t} E`: the solution from
/// `H(0) = E`.
pub fn analytic_solution_no_weight(a: &Mat, e: &Mat, t: f64) -> Result<Mat> {
    check_rows(a, e)?;
    let b = a - identity_like(a);
    let x = matrix_exp(&b, t)?;
    let xe = &x * e;
    let forced = solve(&b, &(&xe - e), "A - I")?;
    Ok(forced + xe)
}

/// `(I - A)^-1 E`.
pub fn analytic_limit_no_weight(a: &Mat, e: &Mat) -> Result<Mat> {
    check_rows(a, e)?;
    solve(&(identity_like(a) - a), e, "I - A")
}

/// `e^{(A-I)t} H(0)`: the solution when the restart term is dropped.
pub fn no_restart_solution(a: &Mat, h0: &Mat, t: f64) -> Result<Mat> {
    check_rows(a, h0)?;
    Ok(matrix_exp(&(a - identity_like(a)), t)? * h0)
}

/// Decompositions `A - I = P diag(lambda') P^-1` and
/// `W - I = Q diag(phi') Q^-1` together with `E~ = P^-1 E Q`.
struct SylvesterBasis {
    left: EigenDecomp,
    right: EigenDecomp,
    projected: Mat,
}

impl SylvesterBasis {
    fn new(a: &Mat, w: &Mat, e: &Mat) -> Result<Self> {
        check_rows(a, e)?;
        check_square("W", w)?;
        if w.nrows() != e.ncols() {
            return Err(Error::dims(format!("W is {0}x{0}, E has {1} columns", w.nrows(), e.ncols())));
        }
        let left = eig_sym(&(a - identity_like(a)))?;
        let right = eig_sym(&(w - identity_like(w)))?;
        let projected = &left.inverse_vectors * e * &right.vectors;
        Ok(Self { left, right, projected })
    }

    /// `lambda'_i + phi'_j`, rejecting near-zero sums.
    fn sum(&self, i: usize, j: usize) -> Result<f64> {
        let s = self.left.values[i] + self.right.values[j];
        if s.abs() < RESONANCE_TOL {
            return Err(Error::Resonance { i, j, denominator: s });
        }
        Ok(s)
    }

    /// `P F Q^-1` with `F_ij = f(i, j, E~_ij)`.
    fn assemble(&self, f: impl Fn(usize, usize, f64) -> Result<f64>) -> Result<Mat> {
        let (n, d) = self.projected.shape();
        let mut inner = Mat::zeros(n, d);
        for j in 0..d {
            for i in 0..n {
                inner[(i, j)] = f(i, j, self.projected[(i, j)])?;
            }
        }
        Ok(&self.left.vectors * inner * &self.right.inverse_vectors)
    }
}

/// Solution of `dH/dt = (A - I) H + H (W - I) + E` from `H(0) = E`:
/// `e^{(A-I)t} E e^{(W-I)t} + P F(t) Q^-1` with
/// `F_ij = E~_ij (e^{t s_ij} - 1) / s_ij` and `s_ij = lambda'_i + phi'_j`.
///
/// `A` and `W` must be symmetric.
pub fn analytic_solution_with_weight(a: &Mat, w: &Mat, e: &Mat, t: f64) -> Result<Mat> {
    let basis = SylvesterBasis::new(a, w, e)?;
    basis.assemble(|i, j, e_ij| {
        let s = basis.sum(i, j)?;
        let homogeneous = e_ij * (t * s).exp();
        Ok(homogeneous + e_ij * (t * s).exp_m1() / s)
    })
}

/// Large-time limit `P G Q^-1` with `G_ij = -E~_ij / (lambda'_i + phi'_j)`.
pub fn analytic_limit_with_weight(a: &Mat, w: &Mat, e: &Mat) -> Result<Mat> {
    let basis = SylvesterBasis::new(a, w, e)?;
    basis.assemble(|i, j, e_ij| {
        let s = basis.sum(i, j)?;
        if s >= 0.0 {
            return Err(Error::OutOfRange(format!(
                "eigenvalue sum {s:e} at ({i}, {j}) is nonnegative; no finite limit"
            )));
        }
        Ok(-e_ij / s)
    })
}

/// `(ln A)^-1 (A^{n+1} - I) E`, i.e. `int_0^{n+1} A^s E ds`.
pub fn riemann_integral(a: &Mat, e: &Mat, n: usize) -> Result<Mat> {
    check_rows(a, e)?;
    let eig = eig_sym(a)?;
    let log = matrix_log_decomposed(&eig, LOG_FLOOR)?;
    let power = eig.power(n as f64 + 1.0)?;
    solve(&log, &((power - identity_like(a)) * e), "ln A")
}

/// Integrates `dH/dt = ln(A) H + E` from `H(0) = (ln A)^-1 (A - I) E` to
/// `t = n` with fine RK4 and compares with [`riemann_integral`].
pub fn riemann_limit_check(a: &Mat, e: &Mat, n: usize, tolerance: f64) -> Result<OracleReport> {
    check_rows(a, e)?;
    let eig = eig_sym(a)?;
    let log = matrix_log_decomposed(&eig, LOG_FLOOR)?;
    let h0 = solve(&log, &((a - identity_like(a)) * e), "ln A")?;
    let steps = 400 * n.max(1);
    let solved = integrate_dense(&log, None, e, &h0, &SolverConfig::fixed(n as f64, steps))?;
    let exact = riemann_integral(a, e, n)?;
    Ok(OracleReport::compare(format!("riemann_n{n}"), &solved, &exact, tolerance))
}

/// Initial value of the weighted log-ODE, `int_0^1 A^s E W^s ds`, in closed
/// form: `P F Q^-1` with `F_ij = E~_ij (Lambda_i Phi_j - 1) / ln(Lambda_i Phi_j)`.
///
/// Eigenvalues are floored at [`LOG_FLOOR`]; where `Lambda_i Phi_j = 1` the
/// factor takes its limit 1.
pub fn weighted_initial_value(a: &Mat, w: &Mat, e: &Mat) -> Result<Mat> {
    let (left, right, projected) = log_basis(a, w, e)?;
    let (n, d) = projected.shape();
    let mut inner = Mat::zeros(n, d);
    for j in 0..d {
        for i in 0..n {
            let l = left.values[i].max(LOG_FLOOR).ln() + right.values[j].max(LOG_FLOOR).ln();
            let factor = if l.abs() < RESONANCE_TOL { 1.0 } else { l.exp_m1() / l };
            inner[(i, j)] = projected[(i, j)] * factor;
        }
    }
    Ok(&left.vectors * inner * &right.inverse_vectors)
}

fn log_basis(a: &Mat, w: &Mat, e: &Mat) -> Result<(EigenDecomp, EigenDecomp, Mat)> {
    check_rows(a, e)?;
    check_square("W", w)?;
    if w.nrows() != e.ncols() {
        return Err(Error::dims(format!("W is {0}x{0}, E has {1} columns", w.nrows(), e.ncols())));
    }
    let left = eig_sym(a)?;
    let right = eig_sym(w)?;
    for eig in [&left, &right] {
        if eig.min_value() < -LOG_FLOOR {
            return Err(Error::Decomposition(format!(
                "eigenvalue {:e} has no real logarithm",
                eig.min_value()
            )));
        }
    }
    let projected = &left.inverse_vectors * e * &right.vectors;
    Ok((left, right, projected))
}

/// Composite Simpson's rule on `[lo, hi]`, doubling the panel count until two
/// successive estimates agree to `tol` (absolute, max-entry).
pub fn simpson(f: impl Fn(f64) -> Result<Mat>, lo: f64, hi: f64, tol: f64) -> Result<Mat> {
    const MAX_LEVEL: u32 = 20;
    let mut panels = 2usize;
    let width = hi - lo;
    let ends = f(lo)? + f(hi)?;
    let mut evens = f(lo + 0.5 * width)?;
    // With `panels` intervals, odd nodes are new at each doubling and the
    // previous odd nodes become even nodes.
    let mut odds = evens.clone();
    evens.fill(0.0);
    let mut estimate = (&ends + &odds * 4.0 + &evens * 2.0) * (width / (3.0 * panels as f64));
    for _ in 0..MAX_LEVEL {
        panels *= 2;
        evens += &odds;
        let step = width / panels as f64;
        let mut fresh = Mat::zeros(ends.nrows(), ends.ncols());
        for k in (1..panels).step_by(2) {
            fresh += f(lo + k as f64 * step)?;
        }
        odds = fresh;
        let next = (&ends + &odds * 4.0 + &evens * 2.0) * (step / 3.0);
        let change = (&next - &estimate).abs().max();
        estimate = next;
        if change <= tol {
            return Ok(estimate);
        }
    }
    Err(Error::Quadrature(format!("Simpson did not reach {tol:e} with {panels} panels")))
}

/// Compares [`weighted_initial_value`] with Simpson quadrature of
/// `int_0^1 A^s E W^s ds`, where the powers are taken as Padé exponentials
/// of the matrix logarithms.
pub fn weighted_initial_value_check(a: &Mat, w: &Mat, e: &Mat, tolerance: f64) -> Result<OracleReport> {
    let closed = weighted_initial_value(a, w, e)?;
    let log_a = matrix_log_decomposed(&eig_sym(a)?, LOG_FLOOR)?;
    let log_w = matrix_log_decomposed(&eig_sym(w)?, LOG_FLOOR)?;
    let quad = simpson(|s| Ok((&log_a * s).exp() * e * (&log_w * s).exp()), 0.0, 1.0, 1e-10)?;
    Ok(OracleReport::compare("weighted_initial_value", &closed, &quad, tolerance))
}

/// Evaluates `e^{Bt} E e^{Ct} + int_0^t e^{B(t-s)} E e^{C(t-s)} ds` with
/// `B = A - I`, `C = W - I` by Simpson quadrature over Padé exponentials and
/// compares it with [`analytic_solution_with_weight`].
pub fn sylvester_check(a: &Mat, w: &Mat, e: &Mat, t: f64, tolerance: f64) -> Result<OracleReport> {
    let closed = analytic_solution_with_weight(a, w, e, t)?;
    let b = a - identity_like(a);
    let c = w - identity_like(w);
    let flow = |s: f64| (&b * s).exp() * e * (&c * s).exp();
    // Substituting u = t - s leaves the integrand as flow(u).
    let integral = simpson(|u| Ok(flow(u)), 0.0, t, 1e-11)?;
    let reference = flow(t) + integral;
    Ok(OracleReport::compare(format!("sylvester_t{t}"), &closed, &reference, tolerance))
}
