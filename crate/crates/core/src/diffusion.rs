//! Personalized PageRank diffusion.
//!
//! `S = Σ_k α(1−α)^k T^k = α(I − (1−α)T)^{-1}`, computed either by a dense
//! inverse or by a truncated power series, then optionally sparsified per
//! row (top-k or threshold).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{normalize_edges, Edge};
use crate::sparse::CsrMatrix;

pub const DEFAULT_DENSE_LIMIT: usize = 10_000;
pub const DEFAULT_SERIES_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    /// `D^{-1/2} A D^{-1/2}`
    Symmetric,
    /// `A D^{-1}`
    ColumnStochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DiffusionMethod {
    /// Dense inverse up to the dense limit, truncated series beyond it.
    Auto,
    ExactInverse,
    TruncatedSeries { order: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Sparsification {
    None,
    TopK { k: usize },
    Threshold { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub alpha: f64,
    pub method: DiffusionMethod,
    pub sparsify: Sparsification,
    pub renormalize_after_sparsify: bool,
    pub symmetrize: bool,
    pub kernel: Kernel,
    pub self_loops: bool,
    pub dense_limit: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            alpha: 0.15,
            method: DiffusionMethod::Auto,
            sparsify: Sparsification::TopK { k: 128 },
            renormalize_after_sparsify: false,
            symmetrize: false,
            kernel: Kernel::Symmetric,
            self_loops: false,
            dense_limit: DEFAULT_DENSE_LIMIT,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if let DiffusionMethod::TruncatedSeries { order } = self.method {
            if order == 0 {
                return Err(Error::Config("truncation order must be >= 1".into()));
            }
        }
        match self.sparsify {
            Sparsification::TopK { k } if k == 0 => Err(Error::Config("top-k needs k >= 1".into())),
            Sparsification::Threshold { epsilon } if !(epsilon > 0.0) => {
                Err(Error::Config("threshold needs epsilon > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// A (possibly sparsified) diffusion matrix and how it was produced.
#[derive(Debug, Clone)]
pub struct DiffusionMatrix {
    pub matrix: CsrMatrix,
    pub config: DiffusionConfig,
    /// Upper bound on the entrywise truncation error; zero for the exact inverse.
    pub approximation_bound: f64,
}

/// Smallest order `K` with `(1−α)^{K+1} < tolerance`.
pub fn order_for_tolerance(alpha: f64, tolerance: f64) -> usize {
    let mut k = 1usize;
    while (1.0 - alpha).powi(k as i32 + 1) >= tolerance {
        k += 1;
    }
    k
}

pub fn transition_matrix(num_nodes: usize, edges: &[Edge], kernel: Kernel, self_loops: bool) -> CsrMatrix {
    match kernel {
        Kernel::Symmetric => normalize_edges(num_nodes, edges, self_loops).matrix,
        Kernel::ColumnStochastic => {
            let mut degree = vec![0.0; num_nodes];
            let mut triplets = Vec::with_capacity(2 * edges.len() + num_nodes);
            for &(i, j) in edges {
                degree[i] += 1.0;
                degree[j] += 1.0;
                triplets.push((i, j, 1.0));
                triplets.push((j, i, 1.0));
            }
            if self_loops {
                for (i, d) in degree.iter_mut().enumerate() {
                    *d += 1.0;
                    triplets.push((i, i, 1.0));
                }
            }
            let a = CsrMatrix::from_triplets(num_nodes, num_nodes, triplets);
            a.map_entries(|_, c, v| v / degree[c])
        }
    }
}

/// Closed form `α(I − (1−α)T)^{-1}`, densely.
pub fn ppr_exact(transition: &CsrMatrix, alpha: f64, dense_limit: usize) -> Result<DiffusionMatrix> {
    let n = transition.nrows();
    if n > dense_limit {
        return Err(Error::DenseTooLarge {
            nodes: n,
            limit: dense_limit,
        });
    }
    let dense = ppr_exact_dense(transition, alpha)?;
    let matrix = CsrMatrix::from_rows(
        n,
        (0..n)
            .map(|r| {
                (0..n)
                    .filter_map(|c| {
                        // round-off can leave tiny negatives far from the source
                        let v = dense[(r, c)].max(0.0);
                        (v != 0.0).then_some((c, v))
                    })
                    .collect()
            })
            .collect(),
    );
    Ok(DiffusionMatrix {
        matrix,
        config: DiffusionConfig {
            alpha,
            method: DiffusionMethod::ExactInverse,
            sparsify: Sparsification::None,
            ..DiffusionConfig::default()
        },
        approximation_bound: 0.0,
    })
}

fn ppr_exact_dense(transition: &CsrMatrix, alpha: f64) -> Result<DMatrix<f64>> {
    let n = transition.nrows();
    let mut system = DMatrix::<f64>::identity(n, n);
    for (r, c, v) in transition.iter() {
        system[(r, c)] -= (1.0 - alpha) * v;
    }
    let inverse = if transition.is_symmetric() {
        // I − (1−α)T is SPD for a symmetric T with spectrum in [−1, 1]
        match system.clone().cholesky() {
            Some(chol) => chol.inverse(),
            None => system
                .lu()
                .try_inverse()
                .ok_or_else(|| Error::Solver("I - (1-alpha)T is singular".into()))?,
        }
    } else {
        system
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Solver("I - (1-alpha)T is singular".into()))?
    };
    Ok(inverse * alpha)
}

/// One row of `Σ_{k=0}^{K} α(1−α)^k T^k`, as a dense vector.
fn series_row(transition: &CsrMatrix, alpha: f64, order: usize, row: usize) -> Vec<f64> {
    let n = transition.nrows();
    let mut walk = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut acc = vec![0.0; n];
    walk[row] = 1.0;
    acc[row] = alpha;
    let mut theta = alpha;
    for _ in 0..order {
        transition.vecmat_into(&walk, &mut next);
        std::mem::swap(&mut walk, &mut next);
        theta *= 1.0 - alpha;
        for (a, &w) in acc.iter_mut().zip(&walk) {
            *a += theta * w;
        }
    }
    acc
}

/// Truncated power series `S_K`. Rows are computed independently (in
/// parallel) with a fixed summation order, so the result is deterministic.
pub fn ppr_truncated(transition: &CsrMatrix, alpha: f64, order: usize) -> Result<DiffusionMatrix> {
    if order == 0 {
        return Err(Error::Config("truncation order must be >= 1".into()));
    }
    let config = DiffusionConfig {
        alpha,
        method: DiffusionMethod::TruncatedSeries { order },
        sparsify: Sparsification::None,
        ..DiffusionConfig::default()
    };
    let rows = truncated_rows(transition, alpha, order, |dense| dense_to_entries(&dense));
    Ok(DiffusionMatrix {
        matrix: CsrMatrix::from_rows(transition.ncols(), rows),
        config,
        approximation_bound: (1.0 - alpha).powi(order as i32 + 1),
    })
}

fn truncated_rows<F>(transition: &CsrMatrix, alpha: f64, order: usize, finish: F) -> Vec<Vec<(usize, f64)>>
where
    F: Fn(Vec<f64>) -> Vec<(usize, f64)> + Sync,
{
    (0..transition.nrows())
        .into_par_iter()
        .map(|r| finish(series_row(transition, alpha, order, r)))
        .collect()
}

fn dense_to_entries(row: &[f64]) -> Vec<(usize, f64)> {
    row.iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(c, &v)| (c, v))
        .collect()
}

/// Applies a row-local sparsification to sorted `(col, value)` entries.
fn sparsify_row(entries: &[(usize, f64)], mode: Sparsification, renormalize: bool) -> Vec<(usize, f64)> {
    let mut kept: Vec<(usize, f64)> = match mode {
        Sparsification::None => entries.to_vec(),
        Sparsification::Threshold { epsilon } => entries.iter().copied().filter(|&(_, v)| v >= epsilon).collect(),
        Sparsification::TopK { k } => {
            if k >= entries.len() {
                entries.to_vec()
            } else {
                let mut order: Vec<(usize, f64)> = entries.to_vec();
                // largest first, ties to the smaller column
                order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                order.truncate(k);
                order.sort_by_key(|&(c, _)| c);
                order
            }
        }
    };
    if renormalize {
        let before: f64 = entries.iter().map(|&(_, v)| v).sum();
        let after: f64 = kept.iter().map(|&(_, v)| v).sum();
        if after > 0.0 {
            let scale = before / after;
            kept.iter_mut().for_each(|(_, v)| *v *= scale);
        }
    }
    kept
}

pub fn sparsify(s: &DiffusionMatrix, mode: Sparsification, renormalize: bool, symmetrize: bool) -> DiffusionMatrix {
    let m = &s.matrix;
    let rows = (0..m.nrows())
        .map(|r| {
            let (cols, vals) = m.row(r);
            let entries: Vec<(usize, f64)> = cols.iter().copied().zip(vals.iter().copied()).collect();
            sparsify_row(&entries, mode, renormalize)
        })
        .collect();
    let mut matrix = CsrMatrix::from_rows(m.ncols(), rows);
    if symmetrize {
        matrix = matrix.symmetrized();
    }
    DiffusionMatrix {
        matrix,
        config: DiffusionConfig {
            sparsify: mode,
            renormalize_after_sparsify: renormalize,
            symmetrize,
            ..s.config
        },
        approximation_bound: s.approximation_bound,
    }
}

/// Builds the configured diffusion matrix for an edge list.
///
/// The truncated-series path sparsifies each row as soon as it is computed,
/// so memory stays proportional to the sparsified output.
pub fn diffuse(num_nodes: usize, edges: &[Edge], config: &DiffusionConfig) -> Result<DiffusionMatrix> {
    config.validate()?;
    let transition = transition_matrix(num_nodes, edges, config.kernel, config.self_loops);
    let method = match config.method {
        DiffusionMethod::Auto if num_nodes <= config.dense_limit => DiffusionMethod::ExactInverse,
        DiffusionMethod::Auto => DiffusionMethod::TruncatedSeries {
            order: order_for_tolerance(config.alpha, DEFAULT_SERIES_TOLERANCE),
        },
        other => other,
    };
    let (matrix, bound) = match method {
        DiffusionMethod::ExactInverse => {
            let exact = ppr_exact(&transition, config.alpha, config.dense_limit)?;
            let s = sparsify(&exact, config.sparsify, config.renormalize_after_sparsify, false);
            (s.matrix, 0.0)
        }
        DiffusionMethod::TruncatedSeries { order } => {
            let rows = truncated_rows(&transition, config.alpha, order, |dense| {
                sparsify_row(&dense_to_entries(&dense), config.sparsify, config.renormalize_after_sparsify)
            });
            (CsrMatrix::from_rows(num_nodes, rows), (1.0 - config.alpha).powi(order as i32 + 1))
        }
        DiffusionMethod::Auto => unreachable!("resolved above"),
    };
    let matrix = if config.symmetrize { matrix.symmetrized() } else { matrix };
    log::debug!("diffusion: N={num_nodes} nnz={} bound={bound:e}", matrix.nnz());
    Ok(DiffusionMatrix {
        matrix,
        config: DiffusionConfig { method, ..*config },
        approximation_bound: bound,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    num_nodes: usize,
    nnz: usize,
    approximation_bound: f64,
    config: DiffusionConfig,
}

impl DiffusionMatrix {
    /// Writes `row\tcol\tweight` lines to `tsv` and a JSON sidecar next to it.
    pub fn write(&self, tsv: &Path, sidecar: &Path) -> Result<()> {
        let file = fs::File::create(tsv).map_err(|e| Error::io(tsv, e))?;
        let mut out = BufWriter::new(file);
        for (r, c, v) in self.matrix.iter() {
            writeln!(out, "{r}\t{c}\t{v}").map_err(|e| Error::io(tsv, e))?;
        }
        out.flush().map_err(|e| Error::io(tsv, e))?;
        let meta = Sidecar {
            num_nodes: self.matrix.nrows(),
            nnz: self.matrix.nnz(),
            approximation_bound: self.approximation_bound,
            config: self.config,
        };
        let body = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
        fs::write(sidecar, body + "\n").map_err(|e| Error::io(sidecar, e))
    }

    pub fn read(tsv: &Path, sidecar: &Path) -> Result<Self> {
        let text = fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
        let meta: Sidecar = serde_json::from_str(&text).map_err(|e| Error::json(sidecar, e))?;
        let body = fs::read_to_string(tsv).map_err(|e| Error::io(tsv, e))?;
        let mut triplets = Vec::with_capacity(meta.nnz);
        for (idx, line) in body.lines().enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || Error::parse(tsv, idx + 1, "expected row<TAB>col<TAB>weight");
            if cols.len() != 3 {
                return Err(bad());
            }
            let r: usize = cols[0].parse().map_err(|_| bad())?;
            let c: usize = cols[1].parse().map_err(|_| bad())?;
            let v: f64 = cols[2].parse().map_err(|_| bad())?;
            if r >= meta.num_nodes || c >= meta.num_nodes {
                return Err(Error::parse(tsv, idx + 1, "index out of range"));
            }
            triplets.push((r, c, v));
        }
        Ok(DiffusionMatrix {
            matrix: CsrMatrix::from_triplets(meta.num_nodes, meta.num_nodes, triplets),
            config: meta.config,
            approximation_bound: meta.approximation_bound,
        })
    }
}
