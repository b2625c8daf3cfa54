//! On-disk dataset format, split construction, and the stochastic block
//! model generator.
//!
//! A dataset directory holds four files:
//!
//! * `graph.tsv`: `u\tv` per line, 0-based, each undirected edge once;
//! * `features.tsv`: one node per line, tab-separated decimal floats;
//! * `labels.tsv`: one class index per line;
//! * `split.json`: `{"train": [...], "val": [...], "test": [...]}`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{read_edge_list, write_edge_list, Graph};
use crate::Mat;

pub const GRAPH_FILE: &str = "graph.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Checks bounds and that no node appears twice across or within the
    /// three lists.
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen: HashMap<usize, (&str, usize)> = HashMap::new();
        for (name, list) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for (pos, &node) in list.iter().enumerate() {
                if node >= num_nodes {
                    return Err(Error::Split(format!("{name}[{pos}] = {node} is not a node (graph has {num_nodes})")));
                }
                if let Some((other, other_pos)) = seen.insert(node, (name, pos)) {
                    return Err(Error::Split(format!("node {node} appears as {other}[{other_pos}] and {name}[{pos}]")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub features: Mat,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    /// Validates shapes, labels and the split. The class count is
    /// `max(label) + 1` and must be at least 2.
    pub fn new(graph: Graph, features: Mat, labels: Vec<usize>, split: Split) -> Result<Self> {
        let n = graph.num_nodes();
        if features.nrows() != n {
            return Err(Error::Dataset(format!("{} feature rows for {n} nodes", features.nrows())));
        }
        if labels.len() != n {
            return Err(Error::Dataset(format!("{} labels for {n} nodes", labels.len())));
        }
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
        if num_classes < 2 {
            return Err(Error::Dataset(format!("need at least 2 classes, found {num_classes}")));
        }
        split.validate(n)?;
        Ok(Self {
            graph,
            features,
            labels,
            num_classes,
            split,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }
}

/// Counts reported while loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadStats {
    /// Lines in `graph.tsv`.
    pub raw_edges: usize,
    /// Undirected edges after symmetrization and de-duplication.
    pub edges: usize,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    load_dataset_with_stats(dir).map(|(d, _)| d)
}

pub fn load_dataset_with_stats(dir: &Path) -> Result<(Dataset, LoadStats)> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let features = read_features(&dir.join(FEATURES_FILE))?;
    let labels = read_labels(&dir.join(LABELS_FILE))?;
    let raw = read_edge_list(&dir.join(GRAPH_FILE))?;
    let raw_edges = raw.len();
    let (graph, _) = Graph::from_raw_edges(features.nrows(), raw)?;
    let split_path = dir.join(SPLIT_FILE);
    let text = fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
    let split: Split = serde_json::from_str(&text)?;
    let stats = LoadStats {
        raw_edges,
        edges: graph.num_edges(),
    };
    Ok((Dataset::new(graph, features, labels, split)?, stats))
}

/// Writes the four files, creating `dir` if needed. Floats use the shortest
/// decimal form that parses back to the same value.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_edge_list(&dir.join(GRAPH_FILE), &dataset.graph)?;

    let mut text = String::new();
    for row in dataset.features.row_iter() {
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                text.push('\t');
            }
            write!(text, "{x}").expect("write to String");
        }
        text.push('\n');
    }
    write_file(&dir.join(FEATURES_FILE), &text)?;

    let mut text = String::new();
    for label in &dataset.labels {
        writeln!(text, "{label}").expect("write to String");
    }
    write_file(&dir.join(LABELS_FILE), &text)?;

    let mut json = serde_json::to_string(&dataset.split)?;
    json.push('\n');
    write_file(&dir.join(SPLIT_FILE), &json)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_features(path: &Path) -> Result<Mat> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let before = values.len();
        for field in line.split('\t') {
            let x: f64 = field.parse().map_err(|e| parse_err(format!("bad float {field:?}: {e}")))?;
            if !x.is_finite() {
                return Err(parse_err(format!("non-finite feature {field:?}")));
            }
            values.push(x);
        }
        let w = values.len() - before;
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(parse_err(format!("expected {expected} features, got {w}")));
            }
            Some(_) => {}
        }
        rows += 1;
    }
    Ok(Mat::from_row_slice(rows, width.unwrap_or(0), &values))
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(lineno, line)| {
            line.trim().parse::<usize>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("label {line:?} out of range: {e}"),
            })
        })
        .collect()
}

/// Scales every nonzero feature row to unit L1 norm.
pub fn row_normalize(features: &mut Mat) {
    for mut row in features.row_iter_mut() {
        let sum: f64 = row.iter().map(|x| x.abs()).sum();
        if sum > 0.0 {
            row /= sum;
        }
    }
}

/// `per_class` training nodes from every class, then `val_size` validation
/// and `test_size` test nodes drawn from the remaining nodes. Each list is
/// sorted.
pub fn make_fixed_split(labels: &[usize], per_class: usize, val_size: usize, test_size: usize, seed: u64) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (node, &c) in labels.iter().enumerate() {
        by_class[c].push(node);
    }
    let mut train = Vec::with_capacity(per_class * num_classes);
    for (c, nodes) in by_class.iter_mut().enumerate() {
        if nodes.len() < per_class {
            return Err(Error::Split(format!(
                "class {c} has {} nodes, fewer than {per_class} requested for training",
                nodes.len()
            )));
        }
        nodes.shuffle(&mut rng);
        train.extend_from_slice(&nodes[..per_class]);
    }
    train.sort_unstable();

    let mut in_train = vec![false; labels.len()];
    for &node in &train {
        in_train[node] = true;
    }
    let mut rest: Vec<usize> = (0..labels.len()).filter(|&i| !in_train[i]).collect();
    if rest.len() < val_size + test_size {
        return Err(Error::Split(format!(
            "{} nodes remain after training selection, {} requested for val + test",
            rest.len(),
            val_size + test_size
        )));
    }
    rest.shuffle(&mut rng);
    let mut val = rest[..val_size].to_vec();
    let mut test = rest[val_size..val_size + test_size].to_vec();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, val, test })
}

/// Stochastic block model specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSpec {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Mix between the class direction and pure noise.
    pub signal: f64,
    pub seed: u64,
    #[serde(default = "default_train_per_class")]
    pub train_per_class: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_train_per_class() -> usize {
    20
}

fn default_val_fraction() -> f64 {
    0.25
}

impl SbmSpec {
    /// 4 blocks of 100 nodes, `p_in = 0.05`, `p_out = 0.005`, 16 features,
    /// signal 0.3.
    pub fn acceptance(seed: u64) -> Self {
        Self {
            blocks: 4,
            nodes_per_block: 100,
            p_in: 0.05,
            p_out: 0.005,
            feature_dim: 16,
            signal: 0.3,
            seed,
            train_per_class: default_train_per_class(),
            val_fraction: default_val_fraction(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.blocks * self.nodes_per_block
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks < 2 || self.nodes_per_block == 0 || self.feature_dim == 0 {
            return Err(Error::Dataset(format!(
                "degenerate SBM: {} blocks of {} nodes, {} features (need >= 2 blocks and nonzero sizes)",
                self.blocks, self.nodes_per_block, self.feature_dim
            )));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out), ("signal", self.signal), ("val_fraction", self.val_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::OutOfRange(format!("{name} = {p} not in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Samples an SBM graph with class-correlated features
/// `x = signal * mu_c + (1 - signal) * noise`, where `mu_c` is a fixed
/// standard-normal direction per class and the noise is standard normal.
///
/// The split takes `train_per_class` nodes per class, `val_fraction` of all
/// nodes for validation, and the rest for testing.
pub fn generate_sbm(spec: &SbmSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_nodes();
    let labels: Vec<usize> = (0..n).map(|i| i / spec.nodes_per_block).collect();

    let directions = Mat::from_fn(spec.blocks, spec.feature_dim, |_, _| rng.sample(StandardNormal));

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::new(n, edges)?;

    let noise = 1.0 - spec.signal;
    let mut features = Mat::zeros(n, spec.feature_dim);
    for i in 0..n {
        for j in 0..spec.feature_dim {
            let z: f64 = rng.sample(StandardNormal);
            features[(i, j)] = spec.signal * directions[(labels[i], j)] + noise * z;
        }
    }

    let train_total = spec.train_per_class * spec.blocks;
    let val_size = (spec.val_fraction * n as f64).round() as usize;
    let test_size = n.checked_sub(train_total + val_size).ok_or_else(|| {
        Error::Split(format!("{n} nodes cannot hold {train_total} training and {val_size} validation nodes"))
    })?;
    let split = make_fixed_split(&labels, spec.train_per_class, val_size, test_size, rng.random())?;
    Dataset::new(graph, features, labels, split)
}
