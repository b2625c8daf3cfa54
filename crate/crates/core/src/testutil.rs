use crate::Mat;

pub(crate) fn assert_close(a: &Mat, b: &Mat, tol: f64) {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    let diff = (a - b).abs().max();
    assert!(diff <= tol, "max |diff| = {diff:e} > {tol:e}\nleft: {a}\nright: {b}");
}

pub(crate) fn rel_err(a: &Mat, reference: &Mat) -> f64 {
    (a - reference).abs().max() / reference.abs().max().max(f64::MIN_POSITIVE)
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::graph::{build_sym_norm, regularize, Graph, PropagationOperator};

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn random_mat(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Erdos-Renyi graph with edge probability `p`, plus a path so that no node
/// is isolated.
pub(crate) fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    for i in 0..n {
        for j in (i + 2)..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges).unwrap()
}

/// Operator on a random graph; per-node alpha drawn from `alpha_range` when
/// its bounds differ.
pub(crate) fn random_operator(n: usize, alpha_range: (f64, f64), gamma: f64, rng: &mut impl Rng) -> PropagationOperator {
    let s = build_sym_norm(&random_graph(n, 0.3, rng));
    let alpha: Vec<f64> = (0..n)
        .map(|_| {
            if alpha_range.0 == alpha_range.1 {
                alpha_range.0
            } else {
                rng.random_range(alpha_range.0..alpha_range.1)
            }
        })
        .collect();
    regularize(&s, &alpha, gamma).unwrap()
}

/// Single node with `A = [a]`.
pub(crate) fn scalar_operator(a: f64) -> PropagationOperator {
    let s = build_sym_norm(&Graph::new(1, []).unwrap());
    regularize(&s, &[a], 1.0).unwrap()
}
