//! Synthetic attributed graphs for tests and benchmarks: a planted-partition
//! (stochastic block model) generator and a latent-space generator whose
//! edges and sparse binary features both derive from hidden node positions.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DatasetBundle, Edge, SplitIds};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub num_nodes: usize,
    pub num_classes: usize,
    /// Edge probability within a class.
    pub p_in: f64,
    /// Edge probability across classes.
    pub p_out: f64,
    pub num_features: usize,
    /// Probability that a node switches on a feature from its own class block.
    pub feature_on: f64,
    /// Background probability for every other feature.
    pub feature_noise: f64,
    pub train_per_class: usize,
    pub num_val: usize,
    pub num_test: usize,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            num_nodes: 200,
            num_classes: 4,
            p_in: 0.12,
            p_out: 0.01,
            num_features: 64,
            feature_on: 0.3,
            feature_noise: 0.03,
            train_per_class: 10,
            num_val: 40,
            num_test: 80,
            seed: 0,
        }
    }
}

/// Generates a bundle; node `i` belongs to class `i % num_classes`.
pub fn stochastic_block_model(config: &SbmConfig) -> Result<DatasetBundle> {
    let SbmConfig {
        num_nodes: n,
        num_classes: c,
        p_in,
        p_out,
        num_features: f,
        feature_on,
        feature_noise,
        train_per_class,
        num_val,
        num_test,
        seed,
    } = *config;
    if c == 0 || n < c {
        return Err(Error::Config(format!("{n} nodes cannot host {c} classes")));
    }
    for (name, p) in [("p_in", p_in), ("p_out", p_out), ("feature_on", feature_on), ("feature_noise", feature_noise)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name}={p} is not a probability")));
        }
    }
    if c * train_per_class + num_val + num_test > n {
        return Err(Error::Config("split sizes exceed the node count".into()));
    }
    let mut rng = seeded(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();

    let mut edges: Vec<Edge> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let block = (f / c).max(1);
    let mut features = Array2::<f64>::zeros((n, f));
    for i in 0..n {
        let own = labels[i] * block..((labels[i] + 1) * block).min(f);
        for k in 0..f {
            let p = if own.contains(&k) { feature_on } else { feature_noise };
            if rng.random::<f64>() < p {
                features[[i, k]] = 1.0;
            }
        }
    }

    let splits = public_split(&labels, c, train_per_class, num_val, num_test, &mut rng)?;
    DatasetBundle::new(c, edges, features, labels, splits)
}

fn public_split<R: Rng + ?Sized>(
    labels: &[usize],
    classes: usize,
    train_per_class: usize,
    num_val: usize,
    num_test: usize,
    rng: &mut R,
) -> Result<SplitIds> {
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut train = Vec::new();
    let mut per_class = vec![0usize; classes];
    let mut rest = Vec::new();
    for &i in &order {
        if per_class[labels[i]] < train_per_class {
            per_class[labels[i]] += 1;
            train.push(i);
        } else {
            rest.push(i);
        }
    }
    if num_val + num_test > rest.len() {
        return Err(Error::Config("split sizes exceed the node count".into()));
    }
    let mut val = rest[..num_val].to_vec();
    let mut test = rest[num_val..num_val + num_test].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitIds { train, val, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentConfig {
    pub num_nodes: usize,
    pub num_classes: usize,
    /// Dimension of the hidden positions.
    pub latent_dim: usize,
    /// Standard deviation of class centres; node noise has unit variance.
    pub class_spread: f64,
    /// Length scale of the edge kernel `exp(−‖uᵢ−uⱼ‖²/(2ℓ²))`.
    pub length_scale: f64,
    pub mean_degree: f64,
    pub num_features: usize,
    /// Expected fraction of active features per node.
    pub feature_density: f64,
    /// Sharpness of the feature response to a node's position.
    pub feature_gain: f64,
    pub train_per_class: usize,
    pub num_val: usize,
    pub num_test: usize,
    pub seed: u64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        LatentConfig {
            num_nodes: 600,
            num_classes: 6,
            latent_dim: 8,
            class_spread: 2.0,
            length_scale: 1.0,
            mean_degree: 5.0,
            num_features: 300,
            feature_density: 0.03,
            feature_gain: 2.0,
            train_per_class: 20,
            num_val: 100,
            num_test: 200,
            seed: 0,
        }
    }
}

/// Latent-space graph: node `i` of class `i % C` sits at its class centre
/// plus unit Gaussian noise; pairs connect with probability proportional to
/// a Gaussian kernel of their distance, scaled to the requested mean degree.
pub fn latent_space_graph(config: &LatentConfig) -> Result<DatasetBundle> {
    let LatentConfig {
        num_nodes: n,
        num_classes: c,
        latent_dim: l,
        class_spread,
        length_scale,
        mean_degree,
        num_features: f,
        feature_density,
        feature_gain,
        train_per_class,
        num_val,
        num_test,
        seed,
    } = *config;
    if c == 0 || n < c || l == 0 {
        return Err(Error::Config(format!("{n} nodes cannot host {c} classes in {l} dimensions")));
    }
    if !(length_scale > 0.0) || !(mean_degree > 0.0) || !(0.0..1.0).contains(&feature_density) {
        return Err(Error::Config("length scale, degree and feature density must be positive".into()));
    }
    let mut rng = seeded(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let centres: Vec<Vec<f64>> = (0..c).map(|_| (0..l).map(|_| class_spread * normal()).collect()).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let pos: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| centres[y].iter().map(|m| m + normal()).collect())
        .collect();
    let anchors: Vec<Vec<f64>> = (0..f).map(|_| (0..l).map(|_| normal()).collect()).collect();

    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut kernel = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            kernel.push((-dist2(&pos[i], &pos[j]) / (2.0 * length_scale * length_scale)).exp());
        }
    }
    let scale = 0.5 * n as f64 * mean_degree / kernel.iter().sum::<f64>();
    let mut edges: Vec<Edge> = Vec::new();
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < (scale * kernel[k]).min(1.0) {
                edges.push((i, j));
            }
            k += 1;
        }
    }

    // feature k fires for nodes whose position aligns with anchor k
    let norm = (class_spread * class_spread + 1.0).sqrt() * (l as f64).sqrt();
    let logits = Array2::from_shape_fn((n, f), |(i, k)| {
        feature_gain * pos[i].iter().zip(&anchors[k]).map(|(x, y)| x * y).sum::<f64>() / norm
    });
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    // bisect the offset that yields the requested mean density
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let density = logits.iter().map(|&z| sigmoid(z + mid)).sum::<f64>() / logits.len().max(1) as f64;
        if density < feature_density {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let offset = 0.5 * (lo + hi);
    let features = logits.mapv(|z| if rng.random::<f64>() < sigmoid(z + offset) { 1.0 } else { 0.0 });

    let splits = public_split(&labels, c, train_per_class, num_val, num_test, &mut rng)?;
    DatasetBundle::new(c, edges, features, labels, splits)
}
