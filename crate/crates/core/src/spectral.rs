//! Dense eigendecomposition, matrix functions, and the orthogonal
//! parameterization `W = U diag(M) U^T` of the channel-mixing matrix.
//!
//! The decompositions here back the closed-form oracles on small graphs; the
//! training path never materializes a dense `|V| x |V|` matrix.

use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::{Mat, Vector};

/// Symmetry tolerance for [`eig_sym`], relative to `max(1, max|M|)`.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Entries of `M` are clamped to `[EIGEN_CLAMP_EPS, 1 - EIGEN_CLAMP_EPS]`, which
/// keeps every eigenvalue of `W - I` strictly inside `(-1, 0)`.
pub const EIGEN_CLAMP_EPS: f64 = 1e-3;

/// Eigenvalue floor used by the log-ODE oracles.
pub const LOG_FLOOR: f64 = 1e-6;

/// `M = P diag(values) P^-1`.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub vectors: Mat,
    pub values: Vector,
    pub inverse_vectors: Mat,
}

impl EigenDecomp {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `P diag(f(lambda)) P^-1`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[j]);
        }
        scaled * &self.inverse_vectors
    }

    pub fn reconstruct(&self) -> Mat {
        self.map(|x| x)
    }

    /// `M^s` for a spectrum that is strictly positive.
    pub fn power(&self, s: f64) -> Result<Mat> {
        let min = self.min_value();
        if min <= 0.0 {
            return Err(Error::Decomposition(format!("eigenvalue {min:e} is not positive")));
        }
        Ok(self.map(|x| x.powf(s)))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Largest absolute asymmetry `max |M - M^T|`.
pub fn asymmetry(m: &Mat) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn is_symmetric(m: &Mat) -> bool {
    m.is_square() && asymmetry(m) <= SYMMETRY_TOL * m.abs().max().max(1.0)
}

/// Symmetric eigendecomposition with eigenvalues in ascending order and
/// `inverse_vectors = vectors^T`.
pub fn eig_sym(m: &Mat) -> Result<EigenDecomp> {
    if !m.is_square() {
        return Err(Error::dims(format!("eig_sym needs a square matrix, got {:?}", m.shape())));
    }
    if !is_symmetric(m) {
        return Err(Error::NotSymmetric(asymmetry(m)));
    }
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 1000 * n.max(1))
        .ok_or_else(|| Error::Decomposition(format!("symmetric QR iteration did not converge (n = {n})")))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Vector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = Mat::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    let inverse_vectors = vectors.transpose();
    Ok(EigenDecomp {
        vectors,
        values,
        inverse_vectors,
    })
}

/// Principal logarithm `P diag(ln max(lambda, floor)) P^-1` of a symmetric
/// matrix. Eigenvalues below `-floor` are rejected rather than floored.
pub fn matrix_log(m: &Mat, floor: f64) -> Result<Mat> {
    matrix_log_decomposed(&eig_sym(m)?, floor)
}

pub fn matrix_log_decomposed(eig: &EigenDecomp, floor: f64) -> Result<Mat> {
    if !(floor > 0.0) {
        return Err(Error::OutOfRange(format!("log floor must be positive, got {floor}")));
    }
    let min = eig.min_value();
    if min < -floor {
        return Err(Error::Decomposition(format!(
            "eigenvalue {min:e} is negative beyond the floor {floor:e}"
        )));
    }
    Ok(eig.map(|x| x.max(floor).ln()))
}

/// `exp(M t)`. Symmetric inputs go through the eigendecomposition; anything
/// else uses scaling-and-squaring Padé.
pub fn matrix_exp(m: &Mat, t: f64) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::dims(format!("matrix_exp needs a square matrix, got {:?}", m.shape())));
    }
    if is_symmetric(m) {
        Ok(eig_sym(m)?.map(|x| (x * t).exp()))
    } else {
        let scaled = m * t;
        Ok(scaled.exp())
    }
}

/// `exp(M t) E`.
pub fn matrix_exp_action(m: &Mat, t: f64, e: &Mat) -> Result<Mat> {
    if m.ncols() != e.nrows() {
        return Err(Error::dims(format!(
            "exp(Mt) is {}x{}, E has {} rows",
            m.nrows(),
            m.ncols(),
            e.nrows()
        )));
    }
    Ok(matrix_exp(m, t)? * e)
}

/// Channel-mixing weight held as `(U, M)`; materializes to
/// `U diag(clamp(M)) U^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpec {
    pub basis: Mat,
    pub eigen_params: Vector,
}

impl WeightSpec {
    pub fn new(basis: Mat, eigen_params: Vector) -> Result<Self> {
        if !basis.is_square() || basis.nrows() != eigen_params.len() {
            return Err(Error::dims(format!(
                "basis {:?} does not match {} eigen parameters",
                basis.shape(),
                eigen_params.len()
            )));
        }
        Ok(Self { basis, eigen_params })
    }

    /// Orthogonal `U` from a Gaussian draw and all eigen parameters equal to
    /// `eigen_init`.
    pub fn random<R: Rng + ?Sized>(dim: usize, eigen_init: f64, rng: &mut R) -> Self {
        Self {
            basis: orthogonal_init(dim, rng),
            eigen_params: Vector::from_element(dim, eigen_init),
        }
    }

    pub fn dim(&self) -> usize {
        self.eigen_params.len()
    }

    /// The eigenvalues actually used: `M` clamped to `[eps, 1 - eps]`.
    pub fn clamped_eigenvalues(&self) -> Vector {
        self.eigen_params.map(clamp_eigen)
    }

    pub fn clamp_in_place(&mut self) {
        self.eigen_params.apply(|x| *x = clamp_eigen(*x));
    }

    /// `||U U^T - I||_F`.
    pub fn orthogonality_defect(&self) -> f64 {
        orthogonality_defect(&self.basis)
    }
}

fn clamp_eigen(x: f64) -> f64 {
    x.clamp(EIGEN_CLAMP_EPS, 1.0 - EIGEN_CLAMP_EPS)
}

/// `U diag(clamp(M)) U^T`.
pub fn materialize_weight(spec: &WeightSpec) -> Mat {
    let m = spec.clamped_eigenvalues();
    let mut scaled = spec.basis.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= m[j];
    }
    scaled * spec.basis.transpose()
}

/// One step of `U <- (1 + beta) U - beta (U U^T) U`, pulling `U` toward the
/// orthogonal manifold.
pub fn orthogonality_retraction(u: &Mat, beta: f64) -> Mat {
    let uut_u = u * u.transpose() * u;
    u * (1.0 + beta) - uut_u * beta
}

pub fn orthogonality_defect(u: &Mat) -> f64 {
    let n = u.nrows();
    (u * u.transpose() - Mat::identity(n, n)).norm()
}

/// Orthogonal matrix from the QR factorization of a standard-normal draw,
/// with column signs fixed so that `R` has a positive diagonal.
pub fn orthogonal_init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Mat {
    let g = Mat::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}
