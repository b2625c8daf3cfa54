//! Graph construction and the normalized / regularized propagation operators.
//!
//! `S = D^-1/2 Adj D^-1/2` is stored in compressed rows with columns sorted
//! inside each row, so iteration over stored triples follows canonical
//! `(row, col)` order and every floating-point reduction is reproducible.
//! The propagation operator is `A = diag(alpha) (gamma I + (1 - gamma) S)`;
//! with a uniform `alpha` and `gamma = 1/2` this is `alpha/2 (I + S)`.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Mat;

/// Undirected simple graph with 0-based node indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    /// Canonical `(u, v)` with `u < v`, sorted.
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph, rejecting self-loops, out-of-range indices and
    /// duplicates (`(u, v)` and `(v, u)` count as the same edge).
    pub fn new(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (u, v) in edges {
            let e = canonical(num_nodes, u, v)?;
            if !seen.insert(e) {
                return Err(Error::DuplicateEdge(e.0, e.1));
            }
        }
        Ok(Self {
            num_nodes,
            edges: seen.into_iter().collect(),
        })
    }

    /// Builds a graph from raw file input: edges are symmetrized and repeated
    /// pairs collapsed. Returns the graph and the number of input pairs that
    /// were dropped as repeats. Self-loops and bad indices are still errors.
    pub fn from_raw_edges(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(Self, usize)> {
        let mut seen = BTreeSet::new();
        let mut dropped = 0;
        for (u, v) in edges {
            if !seen.insert(canonical(num_nodes, u, v)?) {
                dropped += 1;
            }
        }
        Ok((
            Self {
                num_nodes,
                edges: seen.into_iter().collect(),
            },
            dropped,
        ))
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Dense 0/1 adjacency matrix.
    pub fn adjacency_dense(&self) -> Mat {
        let mut adj = Mat::zeros(self.num_nodes, self.num_nodes);
        for &(u, v) in &self.edges {
            adj[(u, v)] = 1.0;
            adj[(v, u)] = 1.0;
        }
        adj
    }
}

fn canonical(num_nodes: usize, u: usize, v: usize) -> Result<(usize, usize)> {
    for index in [u, v] {
        if index >= num_nodes {
            return Err(Error::IndexOutOfRange { index, num_nodes });
        }
    }
    if u == v {
        return Err(Error::SelfLoop(u));
    }
    Ok((u.min(v), u.max(v)))
}

/// Reads a tab-separated edge list (`u\tv` per line, LF, no header).
pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let mut fields = line.split('\t');
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(format!(
                "expected two tab-separated node indices, got {line:?}"
            )));
        };
        let u = a
            .parse::<usize>()
            .map_err(|e| parse_err(format!("bad node index {a:?}: {e}")))?;
        let v = b
            .parse::<usize>()
            .map_err(|e| parse_err(format!("bad node index {b:?}: {e}")))?;
        edges.push((u, v));
    }
    Ok(edges)
}

/// Writes each undirected edge once, in canonical order.
pub fn write_edge_list(path: &Path, graph: &Graph) -> Result<()> {
    let mut out = Vec::with_capacity(graph.num_edges() * 12);
    for &(u, v) in graph.edges() {
        writeln!(out, "{u}\t{v}").expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Symmetric-normalized adjacency `D^-1/2 Adj D^-1/2` in compressed rows.
///
/// Degree-0 nodes get all-zero rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SymNormAdj {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SymNormAdj {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored `(row, col, value)` triples in canonical order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.dim, self.dim);
        for (i, j, v) in self.triples() {
            m[(i, j)] = v;
        }
        m
    }

    /// `out = S * h`, column by column.
    pub fn apply_into(&self, h: &Mat, out: &mut Mat) {
        let n = self.dim;
        debug_assert_eq!(h.nrows(), n);
        debug_assert_eq!(out.shape(), h.shape());
        let src = h.as_slice();
        let dst = out.as_mut_slice();
        for c in 0..h.ncols() {
            let col = &src[c * n..(c + 1) * n];
            let out_col = &mut dst[c * n..(c + 1) * n];
            for (i, o) in out_col.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    acc += self.values[k] * col[self.col_idx[k]];
                }
                *o = acc;
            }
        }
    }
}

/// `S = D^-1/2 Adj D^-1/2`.
pub fn build_sym_norm(graph: &Graph) -> SymNormAdj {
    let n = graph.num_nodes();
    let deg = graph.degrees();
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
        .collect();

    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in graph.edges() {
        neighbors[u].push(v);
        neighbors[v].push(u);
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(2 * graph.num_edges());
    let mut values = Vec::with_capacity(2 * graph.num_edges());
    row_ptr.push(0);
    for (i, nbrs) in neighbors.iter_mut().enumerate() {
        nbrs.sort_unstable();
        for &j in nbrs.iter() {
            col_idx.push(j);
            values.push(inv_sqrt[i] * inv_sqrt[j]);
        }
        row_ptr.push(col_idx.len());
    }
    SymNormAdj {
        dim: n,
        row_ptr,
        col_idx,
        values,
    }
}

/// The regularized operator `A = diag(alpha) (gamma I + (1 - gamma) S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOperator {
    base: SymNormAdj,
    alpha: Vec<f64>,
    gamma: f64,
}

/// Builds `A` from `S`, a per-node `alpha` and the self-loop weight `gamma`.
///
/// Every `alpha` entry must lie in `(0, 1)` and `gamma` in `(0, 1]`.
pub fn regularize(s: &SymNormAdj, alpha: &[f64], gamma: f64) -> Result<PropagationOperator> {
    if alpha.len() != s.dim() {
        return Err(Error::dims(format!(
            "alpha has {} entries for an operator on {} nodes",
            alpha.len(),
            s.dim()
        )));
    }
    if let Some((i, a)) = alpha
        .iter()
        .enumerate()
        .find(|(_, &a)| !(a > 0.0 && a < 1.0))
    {
        return Err(Error::OutOfRange(format!("alpha[{i}] = {a} not in (0, 1)")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::OutOfRange(format!("gamma = {gamma} not in (0, 1]")));
    }
    Ok(PropagationOperator {
        base: s.clone(),
        alpha: alpha.to_vec(),
        gamma,
    })
}

/// [`regularize`] with the same `alpha` on every node.
pub fn regularize_uniform(s: &SymNormAdj, alpha: f64, gamma: f64) -> Result<PropagationOperator> {
    regularize(s, &vec![alpha; s.dim()], gamma)
}

impl PropagationOperator {
    pub fn num_nodes(&self) -> usize {
        self.base.dim()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn base(&self) -> &SymNormAdj {
        &self.base
    }

    fn check_rows(&self, h: &Mat) -> Result<()> {
        if h.nrows() != self.num_nodes() {
            return Err(Error::dims(format!(
                "state has {} rows, operator acts on {} nodes",
                h.nrows(),
                self.num_nodes()
            )));
        }
        Ok(())
    }

    /// `A * h`.
    pub fn apply(&self, h: &Mat) -> Result<Mat> {
        self.check_rows(h)?;
        let mut out = Mat::zeros(h.nrows(), h.ncols());
        self.apply_into(h, &mut out);
        Ok(out)
    }

    /// `out = K * h` with `K = gamma I + (1 - gamma) S`, the operator without
    /// its `alpha` scaling.
    pub fn apply_kernel_into(&self, h: &Mat, out: &mut Mat) {
        self.base.apply_into(h, out);
        let g = self.gamma;
        for (o, &x) in out.as_mut_slice().iter_mut().zip(h.as_slice()) {
            *o = g * x + (1.0 - g) * *o;
        }
    }

    /// `out = A * h`. Shapes are checked by the caller.
    pub fn apply_into(&self, h: &Mat, out: &mut Mat) {
        self.apply_kernel_into(h, out);
        scale_rows(out, &self.alpha);
    }

    /// `out = A^T * h = K (diag(alpha) h)`; `scratch` must match `h`'s shape.
    pub fn apply_transpose_into(&self, h: &Mat, scratch: &mut Mat, out: &mut Mat) {
        scratch.copy_from(h);
        scale_rows(scratch, &self.alpha);
        self.apply_kernel_into(scratch, out);
    }

    /// Dense `A`; only meant for small graphs and tests.
    pub fn to_dense(&self) -> Mat {
        let n = self.num_nodes();
        let mut k = self.base.to_dense() * (1.0 - self.gamma);
        for i in 0..n {
            k[(i, i)] += self.gamma;
        }
        scale_rows(&mut k, &self.alpha);
        k
    }

    /// Dense `K = gamma I + (1 - gamma) S`.
    pub fn kernel_dense(&self) -> Mat {
        let n = self.num_nodes();
        let mut k = self.base.to_dense() * (1.0 - self.gamma);
        for i in 0..n {
            k[(i, i)] += self.gamma;
        }
        k
    }
}

/// Multiplies row `i` of `m` by `factors[i]`.
pub(crate) fn scale_rows(m: &mut Mat, factors: &[f64]) {
    let n = m.nrows();
    for col in m.as_mut_slice().chunks_exact_mut(n) {
        for (x, &f) in col.iter_mut().zip(factors) {
            *x *= f;
        }
    }
}
