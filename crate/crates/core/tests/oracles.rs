//! Library results against independent reference implementations: a
//! hand-rolled dense PPR solve and brute-force enumerations of every metric.

mod common;

use bgae_core::diffusion::{order_for_tolerance, ppr_exact, ppr_truncated, transition_matrix};
use bgae_core::eval::{auc, average_precision, clustering_metrics, fit_logistic, LogisticConfig};
use bgae_core::rng::seeded;
use bgae_core::{DiffusionConfig, DiffusionMethod, Kernel, Sparsification};
use common::{acc_oracle, ap_oracle, ari_oracle, auc_oracle, dense_ppr_oracle, nmi_oracle, random_graph};
use ndarray::{array, Array2};
use rand::Rng;

const SERIES_TOLERANCE: f64 = 1e-8;
const SERIES_MATCH: f64 = 1e-6;
const HAND_CASE: f64 = 1e-12;
const FLOAT_SUM: f64 = 1e-12;

/// `D^{-1/2} A D^{-1/2}` built entry by entry from the edge list.
fn dense_symmetric_transition(n: usize, edges: &[(usize, usize)]) -> Array2<f64> {
    let mut deg = vec![0.0; n];
    for &(i, j) in edges {
        deg[i] += 1.0;
        deg[j] += 1.0;
    }
    let mut t = Array2::zeros((n, n));
    for &(i, j) in edges {
        let w = 1.0 / (deg[i] as f64 * deg[j] as f64).sqrt();
        t[[i, j]] = w;
        t[[j, i]] = w;
    }
    t
}

// ---------------------------------------------------------------------------
// diffusion
// ---------------------------------------------------------------------------

#[test]
fn truncated_series_matches_exact_inverse() {
    let mut rng = seeded(11);
    for case in 0..50 {
        let n = rng.random_range(2..=50);
        let p = rng.random_range(0.05..0.5);
        let edges = random_graph(n, p, &mut rng);
        let alpha = [0.05, 0.15, 0.5][case % 3];
        let t = transition_matrix(n, &edges, Kernel::Symmetric, false);
        let k = order_for_tolerance(alpha, SERIES_TOLERANCE);
        assert!((1.0 - alpha).powi(k as i32 + 1) < SERIES_TOLERANCE);
        let exact = ppr_exact(&t, alpha, 1000).unwrap().matrix.to_dense();
        let series = ppr_truncated(&t, alpha, k).unwrap().matrix.to_dense();
        let oracle = dense_ppr_oracle(&dense_symmetric_transition(n, &edges), alpha);
        let gap = (&exact - &series).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(gap < SERIES_MATCH, "case {case}: series gap {gap:e}");
        let gap = (&exact - &oracle).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(gap < 1e-10, "case {case}: oracle gap {gap:e}");
    }
}

#[test]
fn two_node_graph_by_hand() {
    let cfg = DiffusionConfig {
        alpha: 0.5,
        method: DiffusionMethod::ExactInverse,
        sparsify: Sparsification::None,
        ..DiffusionConfig::default()
    };
    let s = bgae_core::diffusion::diffuse(2, &[(0, 1)], &cfg).unwrap().matrix.to_dense();
    let want = array![[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]];
    for (a, b) in s.iter().zip(want.iter()) {
        assert!((a - b).abs() < HAND_CASE, "{s}");
    }
}

#[test]
fn column_stochastic_kernel_preserves_mass() {
    let mut rng = seeded(12);
    for _ in 0..10 {
        let n = rng.random_range(3..30);
        let mut edges = random_graph(n, 0.3, &mut rng);
        // keep every node attached
        for i in 1..n {
            edges.push((i - 1, i));
        }
        edges.sort_unstable();
        edges.dedup();
        let t = transition_matrix(n, &edges, Kernel::ColumnStochastic, false);
        let s = ppr_exact(&t, 0.15, 1000).unwrap().matrix.to_dense();
        for col in s.columns() {
            assert!((col.sum() - 1.0).abs() < 1e-10);
        }
    }
}

// ---------------------------------------------------------------------------
// ranking metrics
// ---------------------------------------------------------------------------

fn ranking_instance<R: Rng>(rng: &mut R) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = rng.random_range(2..=30);
        // a coarse grid forces plenty of ties
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 / 5.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (scores, labels);
        }
    }
}

#[test]
fn auc_and_ap_match_enumeration() {
    let mut rng = seeded(21);
    for case in 0..100 {
        let (s, l) = ranking_instance(&mut rng);
        assert_eq!(auc(&s, &l).unwrap(), auc_oracle(&s, &l), "case {case}");
        let ap = average_precision(&s, &l).unwrap();
        assert!((ap - ap_oracle(&s, &l)).abs() < FLOAT_SUM, "case {case}");
    }
}

#[test]
fn ranking_is_invariant_to_monotone_transforms() {
    let mut rng = seeded(22);
    for _ in 0..20 {
        let (s, l) = ranking_instance(&mut rng);
        let t: Vec<f64> = s.iter().map(|&v| (3.0 * v).exp() - 7.0).collect();
        assert_eq!(auc(&s, &l).unwrap(), auc(&t, &l).unwrap());
        assert_eq!(average_precision(&s, &l).unwrap(), average_precision(&t, &l).unwrap());
    }
}

// ---------------------------------------------------------------------------
// clustering metrics
// ---------------------------------------------------------------------------

fn labelling<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

#[test]
fn clustering_metrics_match_enumeration() {
    let mut rng = seeded(31);
    for case in 0..100 {
        let n = rng.random_range(2..=30);
        let kp = rng.random_range(1..=5);
        let kt = rng.random_range(1..=5);
        let pred = labelling(n, kp, &mut rng);
        let truth = labelling(n, kt, &mut rng);
        let got = clustering_metrics(&pred, &truth).unwrap();
        assert_eq!(got.acc, acc_oracle(&pred, &truth), "case {case}");
        assert!((got.nmi - nmi_oracle(&pred, &truth)).abs() < FLOAT_SUM, "case {case}");
        assert!((got.ari - ari_oracle(&pred, &truth)).abs() < FLOAT_SUM, "case {case}");
    }
}

#[test]
fn clustering_metrics_ignore_label_names() {
    let mut rng = seeded(32);
    for _ in 0..20 {
        let pred = labelling(25, 4, &mut rng);
        let truth = labelling(25, 3, &mut rng);
        let renamed: Vec<usize> = pred.iter().map(|&p| [7, 2, 9, 0][p]).collect();
        let a = clustering_metrics(&pred, &truth).unwrap();
        let b = clustering_metrics(&renamed, &truth).unwrap();
        assert_eq!(a.acc, b.acc);
        assert!((a.nmi - b.nmi).abs() < FLOAT_SUM);
        assert!((a.ari - b.ari).abs() < FLOAT_SUM);
    }
}

#[test]
fn constant_prediction_scores_majority_share() {
    let truth = [0, 0, 0, 1, 1, 2, 2, 2, 2, 2];
    let got = clustering_metrics(&[4; 10], &truth).unwrap();
    assert_eq!(got.acc, 0.5);
}

// ---------------------------------------------------------------------------
// logistic head
// ---------------------------------------------------------------------------

#[test]
fn duplicated_rows_do_not_move_the_boundary() {
    // with C scaled by ½ the doubled data has the same optimum
    let x = array![[1.0, 0.5], [-0.3, 1.2], [0.7, -0.8], [0.1, 0.1], [-1.0, -0.4]];
    let y = [0, 1, 0, 1, 1];
    let cfg = LogisticConfig::default();
    let (single, _) = fit_logistic(&x, &y, 2, &cfg).unwrap();
    let doubled_x = ndarray::concatenate![ndarray::Axis(0), x, x];
    let doubled_y: Vec<usize> = y.iter().chain(&y).copied().collect();
    let (double, _) = fit_logistic(&doubled_x, &doubled_y, 2, &LogisticConfig { c: 0.5, ..cfg }).unwrap();
    let probe = array![[0.3, -0.2], [-2.0, 1.0], [0.0, 0.0]];
    let (a, b) = (single.logits(&probe), double.logits(&probe));
    for (u, v) in a.iter().zip(b.iter()) {
        assert!((u - v).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn three_blobs_generalize() {
    let mut rng = seeded(41);
    let centres = [[0.0, 4.0], [4.0, -2.0], [-4.0, -2.0]];
    let mut draw = |per: usize| {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, m) in centres.iter().enumerate() {
            for _ in 0..per {
                x.push(m[0] + rng.random_range(-1.5..1.5));
                x.push(m[1] + rng.random_range(-1.5..1.5));
                y.push(c);
            }
        }
        (Array2::from_shape_vec((3 * per, 2), x).unwrap(), y)
    };
    let (train_x, train_y) = draw(20);
    let (eval_x, eval_y) = draw(100);
    let out = bgae_core::eval::logistic_head(&train_x, &train_y, &eval_x, 3, &LogisticConfig::default()).unwrap();
    assert!(out.converged);
    assert!(bgae_core::eval::accuracy(&out.predictions, &eval_y) >= 0.95);
}
