//! Graph datasets: the on-disk bundle format, adjacency normalization,
//! link-prediction edge splits and negative sampling.
//!
//! A bundle directory holds `meta.json`, `edges.tsv`, `features.csv`,
//! `labels.txt` and `splits.json`. Edges are undirected and stored once with
//! the smaller endpoint first.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub type Edge = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Boolean node masks for transductive classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn from_ids(num_nodes: usize, ids: &SplitIds) -> Self {
        let mask = |list: &[usize]| {
            let mut m = vec![false; num_nodes];
            for &i in list {
                if i < num_nodes {
                    m[i] = true;
                }
            }
            m
        };
        SplitMasks {
            train: mask(&ids.train),
            val: mask(&ids.val),
            test: mask(&ids.test),
        }
    }

    pub fn to_ids(&self) -> SplitIds {
        let ids = |m: &[bool]| m.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        SplitIds {
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
        }
    }
}

/// An immutable, validated graph dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    num_nodes: usize,
    num_classes: usize,
    edges: Vec<Edge>,
    features: Array2<f64>,
    labels: Vec<usize>,
    masks: SplitMasks,
}

impl DatasetBundle {
    /// Validates every bundle invariant and collects all violations.
    pub fn new(
        num_classes: usize,
        edges: Vec<Edge>,
        features: Array2<f64>,
        labels: Vec<usize>,
        splits: SplitIds,
    ) -> Result<Self> {
        let num_nodes = labels.len();
        let mut problems = Vec::new();
        if num_nodes == 0 {
            problems.push("bundle has no nodes".to_string());
        }
        if features.nrows() != num_nodes {
            problems.push(format!(
                "feature matrix has {} rows but there are {} labels",
                features.nrows(),
                num_nodes
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            problems.push("feature matrix contains non-finite values".to_string());
        }
        let mut seen = HashSet::with_capacity(edges.len());
        for (k, &(i, j)) in edges.iter().enumerate() {
            if i == j {
                problems.push(format!("edge #{k} ({i},{j}) is a self-loop"));
            } else if i > j {
                problems.push(format!("edge #{k} ({i},{j}) is not stored with i<j"));
            }
            if i >= num_nodes || j >= num_nodes {
                problems.push(format!("edge #{k} ({i},{j}) has an endpoint >= N={num_nodes}"));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                problems.push(format!("edge #{k} ({i},{j}) is a duplicate"));
            }
        }
        let mut class_counts = vec![0usize; num_classes];
        for (node, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                problems.push(format!("node {node} has label {y} outside [0,{num_classes})"));
            } else {
                class_counts[y] += 1;
            }
        }
        for (c, &n) in class_counts.iter().enumerate() {
            if n == 0 {
                problems.push(format!("class {c} has no nodes"));
            }
        }
        for (name, list) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
            if let Some(&bad) = list.iter().find(|&&i| i >= num_nodes) {
                problems.push(format!("{name} split references node {bad} >= N={num_nodes}"));
            }
            let unique: HashSet<_> = list.iter().collect();
            if unique.len() != list.len() {
                problems.push(format!("{name} split lists a node twice"));
            }
        }
        let masks = SplitMasks::from_ids(num_nodes, &splits);
        for i in 0..num_nodes {
            let hits = masks.train[i] as u8 + masks.val[i] as u8 + masks.test[i] as u8;
            if hits > 1 {
                problems.push(format!("node {i} appears in more than one split"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(DatasetBundle {
            num_nodes,
            num_classes,
            edges,
            features,
            labels,
            masks,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn masks(&self) -> &SplitMasks {
        &self.masks
    }

    pub fn meta(&self) -> BundleMeta {
        BundleMeta {
            num_nodes: self.num_nodes,
            num_features: self.num_features(),
            num_classes: self.num_classes,
        }
    }

    pub fn edge_index(&self) -> EdgeIndex {
        EdgeIndex::new(self.num_nodes, &self.edges)
    }

    /// Rows of the feature matrix scaled to unit L1 norm (all-zero rows kept).
    pub fn row_normalized_features(&self) -> Array2<f64> {
        let mut x = self.features.clone();
        for mut row in x.rows_mut() {
            let s: f64 = row.iter().map(|v| v.abs()).sum();
            if s > 0.0 {
                row.mapv_inplace(|v| v / s);
            }
        }
        x
    }

    /// One-line summary in the style of a dataset statistics table.
    pub fn summary(&self) -> String {
        format!(
            "{} nodes, {} edges, {} features, {} classes",
            self.num_nodes,
            self.edges.len(),
            self.num_features(),
            self.num_classes
        )
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_usize(path: &Path, line: usize, tok: &str) -> Result<usize> {
    tok.trim()
        .parse::<usize>()
        .map_err(|_| Error::parse(path, line, format!("expected a non-negative integer, got {tok:?}")))
}

/// Reads and validates a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<DatasetBundle> {
    let dir = dir.as_ref();

    let meta_path = dir.join("meta.json");
    let meta: BundleMeta =
        serde_json::from_str(&read_text(&meta_path)?).map_err(|e| Error::json(&meta_path, e))?;

    let edges_path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in read_text(&edges_path)?.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(Error::parse(&edges_path, lineno, format!("expected 2 tab-separated columns, got {}", cols.len())));
        }
        let i = parse_usize(&edges_path, lineno, cols[0])?;
        let j = parse_usize(&edges_path, lineno, cols[1])?;
        if i >= j {
            return Err(Error::parse(&edges_path, lineno, format!("edge ({i},{j}) must satisfy i<j")));
        }
        if !seen.insert((i, j)) {
            return Err(Error::parse(&edges_path, lineno, format!("duplicate edge ({i},{j})")));
        }
        edges.push((i, j));
    }

    let feat_path = dir.join("features.csv");
    let mut values = Vec::with_capacity(meta.num_nodes * meta.num_features);
    let mut rows = 0;
    for (idx, line) in read_text(&feat_path)?.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| Error::parse(&feat_path, lineno, format!("expected a real number, got {tok:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(&feat_path, lineno, "non-finite feature value"));
            }
            values.push(v);
        }
        if values.len() - before != meta.num_features {
            return Err(Error::parse(
                &feat_path,
                lineno,
                format!("expected {} features, got {}", meta.num_features, values.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != meta.num_nodes {
        return Err(Error::parse(&feat_path, rows + 1, format!("expected {} rows, got {rows}", meta.num_nodes)));
    }
    let features = Array2::from_shape_vec((rows, meta.num_features), values).expect("shape checked");

    let labels_path = dir.join("labels.txt");
    let mut labels = Vec::with_capacity(meta.num_nodes);
    for (idx, line) in read_text(&labels_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        labels.push(parse_usize(&labels_path, idx + 1, line)?);
    }
    if labels.len() != meta.num_nodes {
        return Err(Error::parse(
            &labels_path,
            labels.len() + 1,
            format!("expected {} labels, got {}", meta.num_nodes, labels.len()),
        ));
    }

    let splits_path = dir.join("splits.json");
    let splits: SplitIds =
        serde_json::from_str(&read_text(&splits_path)?).map_err(|e| Error::json(&splits_path, e))?;

    DatasetBundle::new(meta.num_classes, edges, features, labels, splits)
}

/// Writes a bundle directory (created if missing).
pub fn save_bundle(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: &[u8]| -> Result<()> {
        let path = dir.join(name);
        fs::File::create(&path)
            .and_then(|mut f| f.write_all(body))
            .map_err(|e| Error::io(&path, e))
    };

    let meta = serde_json::to_string_pretty(&bundle.meta()).expect("meta serializes");
    write("meta.json", format!("{meta}\n").as_bytes())?;

    let mut edges = String::new();
    for &(i, j) in &bundle.edges {
        edges.push_str(&format!("{i}\t{j}\n"));
    }
    write("edges.tsv", edges.as_bytes())?;

    let mut feats = String::new();
    for row in bundle.features.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        feats.push_str(&line.join(","));
        feats.push('\n');
    }
    write("features.csv", feats.as_bytes())?;

    let labels: String = bundle.labels.iter().map(|y| format!("{y}\n")).collect();
    write("labels.txt", labels.as_bytes())?;

    let splits = serde_json::to_string(&bundle.masks.to_ids()).expect("splits serialize");
    write("splits.json", format!("{splits}\n").as_bytes())
}

/// Membership index over undirected edges.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    num_nodes: usize,
    set: HashSet<Edge>,
}

impl EdgeIndex {
    pub fn new(num_nodes: usize, edges: &[Edge]) -> Self {
        let set = edges.iter().map(|&(i, j)| canonical(i, j)).collect();
        EdgeIndex { num_nodes, set }
    }

    pub fn empty(num_nodes: usize) -> Self {
        EdgeIndex {
            num_nodes,
            set: HashSet::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.set.contains(&canonical(i, j))
    }

    pub fn insert(&mut self, i: usize, j: usize) {
        self.set.insert(canonical(i, j));
    }
}

pub fn canonical(i: usize, j: usize) -> Edge {
    if i <= j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Symmetrically normalized adjacency with its degree vector.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    pub matrix: CsrMatrix,
    /// Degrees of `A` (or `A + I` when self-loops were added).
    pub degrees: Vec<f64>,
    pub self_loops: bool,
}

/// `D̃^{-1/2}(A+I)D̃^{-1/2}` with self-loops, else `D^{-1/2}AD^{-1/2}`.
/// Isolated nodes without self-loops get an all-zero row.
pub fn normalize_edges(num_nodes: usize, edges: &[Edge], add_self_loops: bool) -> NormalizedAdjacency {
    let mut degrees = vec![0.0f64; num_nodes];
    for &(i, j) in edges {
        degrees[i] += 1.0;
        degrees[j] += 1.0;
    }
    if add_self_loops {
        degrees.iter_mut().for_each(|d| *d += 1.0);
    }
    let mut triplets = Vec::with_capacity(2 * edges.len() + num_nodes);
    for &(i, j) in edges {
        let w = 1.0 / (degrees[i] * degrees[j]).sqrt();
        triplets.push((i, j, w));
        triplets.push((j, i, w));
    }
    if add_self_loops {
        for (i, &d) in degrees.iter().enumerate() {
            triplets.push((i, i, 1.0 / d));
        }
    }
    NormalizedAdjacency {
        matrix: CsrMatrix::from_triplets(num_nodes, num_nodes, triplets),
        degrees,
        self_loops: add_self_loops,
    }
}

pub fn normalize_adjacency(bundle: &DatasetBundle, add_self_loops: bool) -> NormalizedAdjacency {
    normalize_edges(bundle.num_nodes, &bundle.edges, add_self_loops)
}

/// Hidden-edge split for link prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSplit {
    pub train_pos: Vec<Edge>,
    pub val_pos: Vec<Edge>,
    pub test_pos: Vec<Edge>,
    pub val_neg: Vec<Edge>,
    pub test_neg: Vec<Edge>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.85,
            val: 0.05,
            test: 0.10,
        }
    }
}

fn floor_count(total: usize, fraction: f64) -> usize {
    // guard against products like 0.1*30 landing a hair under an integer
    (total as f64 * fraction + 1e-9).floor() as usize
}

/// Splits the undirected edges into train/val/test and draws fixed
/// validation and test negatives. Val/test sizes are floored; the
/// remainder goes to training.
pub fn split_edges(bundle: &DatasetBundle, fractions: SplitFractions, seed: u64) -> Result<EdgeSplit> {
    let sum = fractions.train + fractions.val + fractions.test;
    if (sum - 1.0).abs() > 1e-9 || [fractions.train, fractions.val, fractions.test].iter().any(|f| *f < 0.0) {
        return Err(Error::Config(format!("split fractions must be nonnegative and sum to 1, got {sum}")));
    }
    let total = bundle.edges.len();
    let n_val = floor_count(total, fractions.val);
    let n_test = floor_count(total, fractions.test);
    let n_train = total.saturating_sub(n_val + n_test);
    if n_val == 0 || n_test == 0 || n_train == 0 {
        return Err(Error::GraphTooSmall(format!(
            "{total} edges cannot fill train/val/test ({n_train}/{n_val}/{n_test})"
        )));
    }

    let mut rng = crate::rng::seeded(seed);
    let mut shuffled = bundle.edges.clone();
    shuffled.shuffle(&mut rng);
    let test_pos = shuffled[..n_test].to_vec();
    let val_pos = shuffled[n_test..n_test + n_val].to_vec();
    let train_pos = shuffled[n_test + n_val..].to_vec();

    let index = bundle.edge_index();
    let mut taken = EdgeIndex::empty(bundle.num_nodes);
    let val_neg = sample_negative_edges(&index, n_val, &taken, &mut rng)?;
    for &(i, j) in &val_neg {
        taken.insert(i, j);
    }
    let test_neg = sample_negative_edges(&index, n_test, &taken, &mut rng)?;

    Ok(EdgeSplit {
        train_pos,
        val_pos,
        test_pos,
        val_neg,
        test_neg,
        seed,
    })
}

/// Draws `count` distinct unordered node pairs, uniformly, that are neither
/// edges, excluded pairs, nor self-loops.
pub fn sample_negative_edges<R: Rng + ?Sized>(
    edges: &EdgeIndex,
    count: usize,
    exclude: &EdgeIndex,
    rng: &mut R,
) -> Result<Vec<Edge>> {
    let n = edges.num_nodes();
    let total_pairs = n * n.saturating_sub(1) / 2;
    let overlap = exclude.set.iter().filter(|e| edges.set.contains(e)).count();
    let blocked = edges.len() + exclude.len() - overlap;
    let available = total_pairs.saturating_sub(blocked);
    if count > available {
        return Err(Error::InsufficientNonEdges {
            requested: count,
            available,
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }

    let admissible = |i: usize, j: usize| i != j && !edges.contains(i, j) && !exclude.contains(i, j);

    // dense graphs: rejection would stall, enumerate instead
    if blocked * 2 > total_pairs || count * 2 > available {
        let mut pool: Vec<Edge> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| admissible(i, j))
            .collect();
        let (chosen, _) = pool.partial_shuffle(rng, count);
        return Ok(chosen.to_vec());
    }

    let mut chosen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if !admissible(i, j) {
            continue;
        }
        let pair = canonical(i, j);
        if chosen.insert(pair) {
            out.push(pair);
        }
    }
    Ok(out)
}
