//! Browser demo: a small block-model graph whose scalar node features evolve
//! under the propagation ODE, with and without the restart term.
//!
//! Build with `cargo build -p cgnn-demo --target wasm32-unknown-unknown
//! --release`, then run `wasm-bindgen --target web` on the `.wasm` into
//! `www/pkg/` and serve `www/`.

use cgnn::closed_form::{analytic_solution_no_weight, no_restart_solution};
use cgnn::datasets::{generate_sbm, Dataset, SbmSpec};
use cgnn::graph::{build_sym_norm, regularize_uniform, SymNormAdj};
use cgnn::spectral::eig_sym;
use cgnn::Mat;
use wasm_bindgen::prelude::*;

fn js_err(e: cgnn::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    data: Dataset,
    adj: SymNormAdj,
}

#[wasm_bindgen]
impl Demo {
    /// `blocks` communities of `nodes_per_block` nodes with one noisy
    /// feature per node.
    #[wasm_bindgen(constructor)]
    pub fn new(blocks: usize, nodes_per_block: usize, p_in: f64, p_out: f64, seed: u64) -> Result<Demo, JsError> {
        let spec = SbmSpec {
            blocks,
            nodes_per_block,
            p_in,
            p_out,
            feature_dim: 1,
            signal: 0.5,
            seed,
            train_per_class: 1,
            val_fraction: 0.0,
        };
        let data = generate_sbm(&spec).map_err(js_err)?;
        let adj = build_sym_norm(&data.graph);
        Ok(Demo { data, adj })
    }

    #[wasm_bindgen(getter)]
    pub fn num_nodes(&self) -> usize {
        self.data.num_nodes()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.data.labels.iter().map(|&l| l as u32).collect()
    }

    /// Edge endpoints, flattened as `[u0, v0, u1, v1, ...]`.
    pub fn edges(&self) -> Vec<u32> {
        self.data.graph.edges().iter().flat_map(|&(u, v)| [u as u32, v as u32]).collect()
    }

    fn operator(&self, alpha: f64, gamma: f64) -> Result<Mat, JsError> {
        Ok(regularize_uniform(&self.adj, alpha, gamma).map_err(js_err)?.to_dense())
    }

    /// Eigenvalues of the propagation operator, ascending.
    pub fn operator_spectrum(&self, alpha: f64, gamma: f64) -> Result<Vec<f64>, JsError> {
        let eig = eig_sym(&self.operator(alpha, gamma)?).map_err(js_err)?;
        Ok(eig.values.iter().copied().collect())
    }

    /// Node values at `frames` evenly spaced times in `[0, t1]`, row-major
    /// `frames x num_nodes`, from the analytic solutions.
    pub fn trajectory(&self, alpha: f64, gamma: f64, t1: f64, frames: usize, restart: bool) -> Result<Vec<f64>, JsError> {
        let a = self.operator(alpha, gamma)?;
        let e = &self.data.features;
        let mut out = Vec::with_capacity(frames * self.num_nodes());
        for k in 0..frames {
            let t = if frames > 1 { t1 * k as f64 / (frames - 1) as f64 } else { t1 };
            let h = if restart {
                analytic_solution_no_weight(&a, e, t)
            } else {
                no_restart_solution(&a, e, t)
            }
            .map_err(js_err)?;
            out.extend(h.iter());
        }
        Ok(out)
    }

    /// Share of node-value variance explained by community membership at
    /// `points` times in `[0, t_max]`: first the run with restart, then the
    /// run without.
    pub fn smoothing_curve(&self, alpha: f64, gamma: f64, t_max: f64, points: usize) -> Result<Vec<f64>, JsError> {
        let n = self.num_nodes();
        let mut out = Vec::with_capacity(2 * points);
        for restart in [true, false] {
            let traj = self.trajectory(alpha, gamma, t_max, points, restart)?;
            out.extend(traj.chunks(n).map(|frame| between_class_share(frame, &self.data.labels, self.data.num_classes)));
        }
        Ok(out)
    }
}

/// Between-class variance over total variance; 0 when all values coincide.
fn between_class_share(values: &[f64], labels: &[usize], num_classes: usize) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let total: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    if total <= f64::EPSILON * n * mean.abs().max(1.0) {
        return 0.0;
    }
    let mut sums = vec![0.0; num_classes];
    let mut counts = vec![0.0; num_classes];
    for (&v, &c) in values.iter().zip(labels) {
        sums[c] += v;
        counts[c] += 1.0;
    }
    let between: f64 = sums
        .iter()
        .zip(&counts)
        .filter(|(_, &k)| k > 0.0)
        .map(|(s, &k)| k * (s / k - mean).powi(2))
        .sum();
    between / total
}
