//! Shared helpers for the integration suites: brute-force metric oracles,
//! a dense PPR solve that does not touch the library's linear algebra, and
//! central-difference gradient checks.

#![allow(dead_code)]

use std::sync::Arc;

use bgae_core::autodiff::{SparseOperand, Tape, Var};
use bgae_core::losses::LossConfig;
use bgae_core::model::{FusionMode, Model, Variant, ViewInputs};
use bgae_core::rng::{derived, seeded};
use bgae_core::sparse::CsrMatrix;
use bgae_core::training::{loss_and_gradients, Batch, TrainingData};
use bgae_core::Edge;
use ndarray::Array2;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Relative error with a small absolute floor so vanishing gradients do
/// not divide by zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Matrix whose entries stay at least `gap` away from zero.
pub fn away_from_zero<R: Rng>(rows: usize, cols: usize, gap: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let m: f64 = rng.random_range(gap..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Largest relative error between backprop and central differences for
/// the scalar built by `build` from leaves initialised to `inputs`.
pub fn gradcheck(inputs: &[Array2<f64>], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |values: &[Array2<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.scalar(out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.backward(out).expect("backward");
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[k])
            .cloned()
            .unwrap_or_else(|| Array2::zeros(input.dim()));
        for idx in 0..input.len() {
            let mut up = inputs.to_vec();
            let mut down = inputs.to_vec();
            up[k].as_slice_mut().unwrap()[idx] += FD_STEP;
            down[k].as_slice_mut().unwrap()[idx] -= FD_STEP;
            let numeric = (eval(&up) - eval(&down)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.as_slice().unwrap()[idx], numeric));
        }
    }
    worst
}

/// Small attributed graph with its views and a fixed sampled batch.
pub struct Instance {
    pub inputs: ViewInputs,
    pub batch: Batch,
    pub num_features: usize,
}

pub fn small_instance(seed: u64, nodes: usize, features: usize) -> Instance {
    let mut rng = seeded(seed);
    // a ring leaves at least as many non-edges as edges from five nodes up
    let mut edges: Vec<Edge> = (0..nodes).map(|i| (i.min((i + 1) % nodes), i.max((i + 1) % nodes))).collect();
    edges.sort_unstable();
    edges.dedup();
    let x = random_matrix(nodes, features, &mut rng);
    let adj = bgae_core::graph::normalize_edges(nodes, &edges, true);
    let s = bgae_core::diffusion::diffuse(
        nodes,
        &edges,
        &bgae_core::DiffusionConfig {
            sparsify: bgae_core::Sparsification::None,
            ..Default::default()
        },
    )
    .unwrap();
    let inputs = ViewInputs {
        features: SparseOperand::new(CsrMatrix::from_dense(&x.view())),
        local: SparseOperand::new(adj.matrix),
        diffused: SparseOperand::new(s.matrix.clone()),
    };
    let data = TrainingData::new(inputs.clone(), nodes, edges, &s.matrix, None).unwrap();
    let batch = data.sample_batch(&LossConfig::default(), &mut derived(seed, 1)).unwrap();
    Instance {
        inputs,
        batch,
        num_features: features,
    }
}

/// Worst relative error of the full objective's parameter gradients.
pub fn model_gradcheck(variant: Variant, fusion: FusionMode, seed: u64, loss: &LossConfig) -> f64 {
    let inst = small_instance(seed, 5, 4);
    let model = Model::init(variant, fusion, inst.num_features, 3, &mut seeded(seed + 100));
    let noise = || derived(seed, 2);
    let value = |m: &Model| loss_and_gradients(m, &inst.inputs, &inst.batch, loss, &mut noise()).unwrap().0.total;
    let (_, grads) = loss_and_gradients(&model, &inst.inputs, &inst.batch, loss, &mut noise()).unwrap();
    let mut worst: f64 = 0.0;
    let count = model.named().len();
    for k in 0..count {
        let len = model.named()[k].1.len();
        for idx in 0..len {
            let mut up = model.clone();
            up.named_mut()[k].1.as_slice_mut().unwrap()[idx] += FD_STEP;
            let mut down = model.clone();
            down.named_mut()[k].1.as_slice_mut().unwrap()[idx] -= FD_STEP;
            let numeric = (value(&up) - value(&down)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads[k].as_slice().unwrap()[idx], numeric));
        }
    }
    worst
}

/// `α (I − (1−α) T)^{-1}` by Gauss–Jordan elimination with partial pivoting.
pub fn dense_ppr_oracle(t: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let n = t.nrows();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| -(1.0 - alpha) * t[[i, j]]).collect();
            row[i] += 1.0;
            row.extend((0..n).map(|j| if i == j { alpha } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    let pivot_row = a[col].clone();
                    for (v, pv) in a[r].iter_mut().zip(pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    Array2::from_shape_fn((n, n), |(i, j)| a[i][n + j])
}

/// Mann–Whitney AUC by enumerating every positive/negative pair.
pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Mean precision at each positive, with ranks counted pairwise (higher
/// score first, ties by input order).
pub fn ap_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let rank = |i: usize| {
        (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
            + 1
    };
    let positives: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    let mut total = 0.0;
    for &i in &positives {
        let r = rank(i);
        let hits = positives.iter().filter(|&&j| rank(j) <= r).count();
        total += hits as f64 / r as f64;
    }
    total / positives.len() as f64
}

/// Best accuracy over every injective map from predicted ids to class ids.
pub fn acc_oracle(pred: &[usize], truth: &[usize]) -> f64 {
    let mut p_ids: Vec<usize> = pred.to_vec();
    p_ids.sort_unstable();
    p_ids.dedup();
    let mut t_ids: Vec<usize> = truth.to_vec();
    t_ids.sort_unstable();
    t_ids.dedup();
    fn search(k: usize, p_ids: &[usize], t_ids: &[usize], used: &mut Vec<bool>, map: &mut Vec<Option<usize>>, pred: &[usize], truth: &[usize], best: &mut usize) {
        if k == p_ids.len() {
            let hits = pred
                .iter()
                .zip(truth)
                .filter(|(p, t)| {
                    let slot = p_ids.binary_search(p).unwrap();
                    map[slot] == Some(**t)
                })
                .count();
            *best = (*best).max(hits);
            return;
        }
        // this predicted id may also stay unmatched
        map[k] = None;
        search(k + 1, p_ids, t_ids, used, map, pred, truth, best);
        for (ti, &t) in t_ids.iter().enumerate() {
            if !used[ti] {
                used[ti] = true;
                map[k] = Some(t);
                search(k + 1, p_ids, t_ids, used, map, pred, truth, best);
                used[ti] = false;
            }
        }
        map[k] = None;
    }
    let mut best = 0;
    search(0, &p_ids, &t_ids, &mut vec![false; t_ids.len()], &mut vec![None; p_ids.len()], pred, truth, &mut best);
    best as f64 / pred.len() as f64
}

/// ARI from the four pair-agreement counts over all unordered pairs.
pub fn ari_oracle(pred: &[usize], truth: &[usize]) -> f64 {
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    let denom = (a + b) * (b + d) + (a + c) * (c + d);
    if denom == 0.0 {
        1.0
    } else {
        2.0 * (a * d - b * c) / denom
    }
}

/// NMI from joint and marginal frequencies counted label by label.
pub fn nmi_oracle(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let uniq = |v: &[usize]| {
        let mut u = v.to_vec();
        u.sort_unstable();
        u.dedup();
        u
    };
    let (pu, tu) = (uniq(pred), uniq(truth));
    if pu.len() == 1 && tu.len() == 1 {
        return 1.0;
    }
    let count = |f: &dyn Fn(usize) -> bool| (0..pred.len()).filter(|&i| f(i)).count() as f64;
    let h = |ids: &[usize], v: &[usize]| -> f64 {
        ids.iter()
            .map(|&k| {
                let p = count(&|i| v[i] == k) / n;
                -p * p.ln()
            })
            .sum()
    };
    let mut mi = 0.0;
    for &p in &pu {
        for &t in &tu {
            let joint = count(&|i| pred[i] == p && truth[i] == t);
            if joint > 0.0 {
                let pp = count(&|i| pred[i] == p);
                let tt = count(&|i| truth[i] == t);
                mi += joint / n * (joint * n / (pp * tt)).ln();
            }
        }
    }
    let denom = 0.5 * (h(&pu, pred) + h(&tu, truth));
    if denom == 0.0 {
        0.0
    } else {
        mi / denom
    }
}

/// Random undirected simple graph given as sorted `(i, j)` pairs with `i < j`.
pub fn random_graph<R: Rng>(nodes: usize, p: f64, rng: &mut R) -> Vec<Edge> {
    let mut edges = Vec::new();
    for i in 0..nodes {
        for j in i + 1..nodes {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

pub fn arc<T>(v: T) -> Arc<T> {
    Arc::new(v)
}

/// Closed-form KL of a random 4-dimensional Gaussian against N(0, I) and
/// its Monte-Carlo estimate `E[log q − log p]` from `samples` draws.
pub fn kl_closed_and_sampled<R: Rng>(rng: &mut R, samples: usize) -> (f64, f64) {
    use bgae_core::losses::kl_divergence;
    use rand_distr::{Distribution, StandardNormal};
    let d = 4;
    let mu: Vec<f64> = (0..d)
        .map(|_| rng.random_range(0.5..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let log_var: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut tape = Tape::new();
    let m = tape.constant(Array2::from_shape_vec((1, d), mu.clone()).unwrap());
    let lv = tape.constant(Array2::from_shape_vec((1, d), log_var.clone()).unwrap());
    let kl = kl_divergence(&mut tape, m, lv).unwrap();
    let closed = tape.scalar(kl);
    let mut total = 0.0;
    for _ in 0..samples {
        for k in 0..d {
            let eps: f64 = StandardNormal.sample(rng);
            let z = mu[k] + (0.5 * log_var[k]).exp() * eps;
            // log q − log p with the shared 2π constants cancelled
            total += -0.5 * log_var[k] - 0.5 * eps * eps + 0.5 * z * z;
        }
    }
    (closed, total / samples as f64)
}
