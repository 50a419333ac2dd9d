//! K-means (k-means++ seeding, best of several restarts) and external
//! clustering scores.

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derived;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when no centroid moves farther than this (Euclidean).
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 10,
            max_iter: 300,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus<R: Rng + ?Sized>(data: &Array2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), centroids.row(c)));
        }
    }
    centroids
}

fn assign(data: &Array2<f64>, centroids: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    (0..data.nrows())
        .map(|i| {
            let mut best = (0, f64::INFINITY);
            for c in 0..centroids.nrows() {
                let d = sq_dist(data.row(i), centroids.row(c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

fn lloyd<R: Rng + ?Sized>(data: &Array2<f64>, k: usize, config: &KMeansConfig, rng: &mut R) -> KMeansResult {
    let mut centroids = plus_plus(data, k, rng);
    let (mut labels, mut dists) = assign(data, &centroids);
    for _ in 0..config.max_iter {
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            let mut row = sums.row_mut(c);
            row += &data.row(i);
            counts[c] += 1;
        }
        let mut next = centroids.clone();
        let mut taken = vec![false; data.nrows()];
        for c in 0..k {
            if counts[c] > 0 {
                next.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                // empty cluster: move it onto the point worst served by its centroid
                let far = (0..data.nrows())
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("k <= N leaves a free point");
                taken[far] = true;
                next.row_mut(c).assign(&data.row(far));
            }
        }
        let shift = (0..k)
            .map(|c| sq_dist(next.row(c), centroids.row(c)).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        let (l, d) = assign(data, &centroids);
        labels = l;
        dists = d;
        if shift <= config.tolerance {
            break;
        }
    }
    KMeansResult {
        assignments: labels,
        centroids,
        inertia: dists.iter().sum(),
    }
}

/// Best-of-`restarts` Lloyd's algorithm. Restart `r` uses the stream
/// derived from `(seed, r)`; ties in inertia go to the lowest restart.
pub fn kmeans(data: &Array2<f64>, k: usize, config: &KMeansConfig, seed: u64) -> Result<KMeansResult> {
    if k == 0 || k > data.nrows() {
        return Err(Error::InvalidInput(format!("k={k} must lie in 1..={}", data.nrows())));
    }
    let runs: Vec<KMeansResult> = (0..config.restarts.max(1))
        .into_par_iter()
        .map(|r| lloyd(data, k, config, &mut derived(seed, r as u64)))
        .collect();
    let best = runs
        .into_iter()
        .reduce(|best, next| if next.inertia < best.inertia { next } else { best })
        .expect("at least one restart");
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringScores {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

fn relabel(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let out = labels.iter().map(|l| ids.binary_search(l).expect("present")).collect();
    (out, ids.len())
}

fn contingency(pred: &[usize], truth: &[usize]) -> (Array2<f64>, usize, usize) {
    let (p, np) = relabel(pred);
    let (t, nt) = relabel(truth);
    let mut table = Array2::<f64>::zeros((np, nt));
    for (&a, &b) in p.iter().zip(&t) {
        table[[a, b]] += 1.0;
    }
    (table, np, nt)
}

/// Maximum-weight assignment of rows to columns (rectangular allowed).
/// Returns, per row, its matched column or `None`.
pub fn max_weight_matching(weights: &Array2<f64>) -> Vec<Option<usize>> {
    let (rows, cols) = weights.dim();
    let n = rows.max(cols);
    let top = weights.iter().copied().fold(0.0, f64::max);
    // square cost matrix, padded with zero-weight entries
    let cost = |i: usize, j: usize| if i < rows && j < cols { top - weights[[i, j]] } else { top };

    // Hungarian method with potentials, 1-based over rows/cols
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut owner = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = owner[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

fn entropy(counts: impl Iterator<Item = f64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0.0)
        .map(|c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Accuracy under the best cluster→class matching, NMI (arithmetic-mean
/// normalization) and the adjusted Rand index.
pub fn clustering_metrics(pred: &[usize], truth: &[usize]) -> Result<ClusteringScores> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions but {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("clustering metrics of an empty labelling".into()));
    }
    let n = pred.len() as f64;
    let (table, np, nt) = contingency(pred, truth);

    let matched: f64 = max_weight_matching(&table)
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| table[[i, j]]))
        .sum();
    let acc = matched / n;

    let row_sums = table.sum_axis(Axis(1));
    let col_sums = table.sum_axis(Axis(0));
    let h_pred = entropy(row_sums.iter().copied(), n);
    let h_truth = entropy(col_sums.iter().copied(), n);
    let mut mi = 0.0;
    for i in 0..np {
        for j in 0..nt {
            let c = table[[i, j]];
            if c > 0.0 {
                mi += (c / n) * ((c * n) / (row_sums[i] * col_sums[j])).ln();
            }
        }
    }
    let nmi = if np == 1 && nt == 1 {
        1.0
    } else if h_pred + h_truth == 0.0 {
        0.0
    } else {
        (mi / (0.5 * (h_pred + h_truth))).clamp(0.0, 1.0)
    };

    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let a: f64 = row_sums.iter().map(|&c| choose2(c)).sum();
    let b: f64 = col_sums.iter().map(|&c| choose2(c)).sum();
    let expected = a * b / choose2(n);
    let max_index = 0.5 * (a + b);
    let ari = if max_index == expected {
        1.0
    } else {
        (index - expected) / (max_index - expected)
    };

    Ok(ClusteringScores { acc, nmi, ari })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn relabelled_prediction_is_perfect() {
        let truth = [0, 0, 1, 1, 2, 2];
        let pred = [5, 5, 3, 3, 9, 9];
        let s = clustering_metrics(&pred, &truth).unwrap();
        assert_eq!(s.acc, 1.0);
        assert!((s.nmi - 1.0).abs() < 1e-12);
        assert!((s.ari - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_ari() {
        let s = clustering_metrics(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap();
        assert!((s.ari + 0.5).abs() < 1e-12, "{}", s.ari);
    }

    #[test]
    fn constant_prediction() {
        let truth = [0, 0, 0, 1, 1, 2];
        let s = clustering_metrics(&[4; 6], &truth).unwrap();
        assert_eq!(s.nmi, 0.0);
        assert_eq!(s.acc, 0.5);
    }

    #[test]
    fn matching_on_rectangular_tables() {
        let w = array![[1.0, 9.0, 0.0], [8.0, 7.0, 0.0]];
        assert_eq!(max_weight_matching(&w), vec![Some(1), Some(0)]);
        let tall = array![[3.0], [5.0], [1.0]];
        assert_eq!(max_weight_matching(&tall), vec![None, Some(0), None]);
    }

    fn blobs() -> Array2<f64> {
        let mut rows = Vec::new();
        for i in 0..10 {
            let t = i as f64 * 0.01;
            rows.extend_from_slice(&[t, -t]);
            rows.extend_from_slice(&[10.0 + t, 10.0 - t]);
        }
        Array2::from_shape_vec((20, 2), rows).unwrap()
    }

    #[test]
    fn separated_blobs() {
        let r = kmeans(&blobs(), 2, &KMeansConfig::default(), 1).unwrap();
        for pair in r.assignments.chunks(2) {
            assert_ne!(pair[0], pair[1]);
        }
        let first = r.assignments[0];
        assert!(r.assignments.iter().step_by(2).all(|&a| a == first));
    }

    #[test]
    fn one_cluster_is_the_mean() {
        let data = blobs();
        let r = kmeans(&data, 1, &KMeansConfig::default(), 3).unwrap();
        let mean = data.mean_axis(Axis(0)).unwrap();
        for (a, b) in r.centroids.row(0).iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let data = array![[0.0, 1.0], [2.0, 2.0], [5.0, -1.0], [3.0, 3.0]];
        let r = kmeans(&data, 4, &KMeansConfig::default(), 0).unwrap();
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn kmeans_is_deterministic() {
        let data = blobs();
        let a = kmeans(&data, 3, &KMeansConfig::default(), 11).unwrap();
        let b = kmeans(&data, 3, &KMeansConfig::default(), 11).unwrap();
        assert_eq!(a, b);
        assert!(kmeans(&data, 21, &KMeansConfig::default(), 0).is_err());
    }
}
