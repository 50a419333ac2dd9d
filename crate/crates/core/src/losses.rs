//! Training objective: dual reconstruction BCE (+ KL for the variational
//! encoder) and the sigmoid-normalized cross-covariance loss.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Edge;
use crate::model::ViewEmbedding;

/// Floor applied to every logarithm argument.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the covariance loss.
    pub beta: f64,
    /// Weight of the off-diagonal (redundancy) covariance term.
    pub lambda: f64,
    /// Positive diffusion pairs sampled per iteration; `None` matches the
    /// number of positive adjacency edges.
    pub edge_batch: Option<usize>,
    pub diffusion_targets: DiffusionTargets,
}

/// How diffusion pairs enter the second BCE term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffusionTargets {
    /// Positives drawn with probability proportional to `s_ij` and target 1;
    /// uniform negatives with target 0. In expectation this is the soft-target
    /// BCE with the weights carried by the sampling distribution.
    #[default]
    Sampled,
    /// Positives drawn proportional to `s_ij` with soft target `s_ij`;
    /// uniform negatives with target 0.
    Soft,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 1.0,
            lambda: 5e-3,
            edge_batch: None,
            diffusion_targets: DiffusionTargets::Sampled,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("lambda", self.lambda)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.edge_batch == Some(0) {
            return Err(Error::Config("edge_batch must be positive".into()));
        }
        Ok(())
    }
}

fn log_clamped(tape: &mut Tape, x: Var) -> Result<Var> {
    let c = tape.clamp_min(x, LOG_FLOOR)?;
    tape.log(c)
}

fn one_minus(tape: &mut Tape, x: Var) -> Result<Var> {
    let neg = tape.scale(x, -1.0)?;
    tape.add_scalar(neg, 1.0)
}

/// `c_ℓm = σ(|Σ_b (z_bℓ − z̄_ℓ)(z'_bm − z̄'_m)|)`, a `d×d` matrix with
/// entries in `[0.5, 1)`.
pub fn covariance_entries(tape: &mut Tape, z_local: Var, z_diffused: Var) -> Result<Var> {
    let (l, r) = (tape.shape(z_local), tape.shape(z_diffused));
    if l != r {
        return Err(Error::Shape {
            op: "covariance_entries",
            left: l,
            right: r,
        });
    }
    if l.0 < 2 {
        return Err(Error::InvalidInput(format!("covariance needs at least 2 rows, got {}", l.0)));
    }
    let a = tape.center_columns(z_local)?;
    let b = tape.center_columns(z_diffused)?;
    let at = tape.transpose(a)?;
    let cross = tape.matmul(at, b)?;
    let mag = tape.abs(cross)?;
    tape.sigmoid(mag)
}

/// Frozen covariance matrix, for inspection outside a training step.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(pub Array2<f64>);

impl CovarianceMatrix {
    pub fn compute(z_local: &Array2<f64>, z_diffused: &Array2<f64>) -> Result<Self> {
        let mut tape = Tape::new();
        let a = tape.constant(z_local.clone());
        let b = tape.constant(z_diffused.clone());
        let c = covariance_entries(&mut tape, a, b)?;
        Ok(CovarianceMatrix(tape.value(c).clone()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CovarianceTerms {
    /// `−(1/N) Σ_m log c_mm`
    pub diagonal: Var,
    /// `−(λ/(N(N−1))) Σ_{ℓ≠m} log(1 − c_ℓm)`
    pub off_diagonal: Var,
    pub total: Var,
}

/// Covariance loss with the normalizers `1/N` and `λ/(N(N−1))`, where `N`
/// is the number of nodes the covariance was taken over.
pub fn covariance_loss(tape: &mut Tape, c: Var, lambda: f64, num_nodes: usize) -> Result<CovarianceTerms> {
    let (d, d2) = tape.shape(c);
    if d != d2 {
        return Err(Error::Shape {
            op: "covariance_loss",
            left: (d, d2),
            right: (d2, d),
        });
    }
    if num_nodes < 2 {
        return Err(Error::InvalidInput("covariance loss needs N >= 2".into()));
    }
    let n = num_nodes as f64;
    let diag = tape.sum_log_diagonal(c, LOG_FLOOR)?;
    let diagonal = tape.scale(diag, -1.0 / n)?;
    let off = tape.sum_log_one_minus_off_diagonal(c, LOG_FLOOR)?;
    let off_diagonal = tape.scale(off, -lambda / (n * (n - 1.0)))?;

    let total = tape.add(diagonal, off_diagonal)?;
    Ok(CovarianceTerms {
        diagonal,
        off_diagonal,
        total,
    })
}

/// Sampled pairs with their (possibly soft) targets.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub pairs: Arc<Vec<Edge>>,
    /// `P×1` targets in `[0, 1]`.
    pub targets: Array2<f64>,
}

impl PairSample {
    pub fn new(pairs: Vec<Edge>, targets: Vec<f64>) -> Self {
        let n = targets.len();
        PairSample {
            pairs: Arc::new(pairs),
            targets: Array2::from_shape_vec((n, 1), targets).expect("one target per pair"),
        }
    }

    /// Binary positives followed by binary negatives.
    pub fn binary(pos: &[Edge], neg: &[Edge]) -> Self {
        let pairs: Vec<Edge> = pos.iter().chain(neg).copied().collect();
        let targets = std::iter::repeat_n(1.0, pos.len()).chain(std::iter::repeat_n(0.0, neg.len())).collect();
        Self::new(pairs, targets)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Mean binary cross-entropy of `σ(zᵢᵀzⱼ)` against the sample's targets.
pub fn bce(tape: &mut Tape, z: Var, sample: &PairSample) -> Result<Var> {
    if sample.is_empty() {
        return Err(Error::InvalidInput("BCE over an empty sample".into()));
    }
    let p = crate::model::decode_edges(tape, z, Arc::clone(&sample.pairs))?;
    let t = tape.constant(sample.targets.clone());
    let t_bar = tape.constant(sample.targets.mapv(|v| 1.0 - v));
    let log_p = log_clamped(tape, p)?;
    let q = one_minus(tape, p)?;
    let log_q = log_clamped(tape, q)?;
    let a = tape.mul(t, log_p)?;
    let b = tape.mul(t_bar, log_q)?;
    let ll = tape.add(a, b)?;
    let mean = tape.mean(ll)?;
    tape.scale(mean, -1.0)
}

/// `KL(N(μ, σ²) ‖ N(0, I))` summed over dimensions and averaged over nodes.
pub fn kl_divergence(tape: &mut Tape, mu: Var, log_var: Var) -> Result<Var> {
    let rows = tape.shape(mu).0;
    let mu2 = tape.mul(mu, mu)?;
    let var = tape.exp(log_var)?;
    let a = tape.add_scalar(log_var, 1.0)?;
    let b = tape.sub(a, mu2)?;
    let c = tape.sub(b, var)?;
    let s = tape.sum(c)?;
    tape.scale(s, -0.5 / rows as f64)
}

#[derive(Debug, Clone, Copy)]
pub struct ReconstructionTerms {
    pub bce_adjacency: Var,
    pub bce_diffusion: Var,
    pub kl_local: Option<Var>,
    pub kl_diffused: Option<Var>,
    pub total: Var,
}

/// BCE against adjacency samples + BCE against diffusion samples, plus the
/// two KL terms when the views carry variational parameters.
pub fn reconstruction_loss(
    tape: &mut Tape,
    z: Var,
    adjacency: &PairSample,
    diffusion: &PairSample,
    views: Option<(&ViewEmbedding, &ViewEmbedding)>,
) -> Result<ReconstructionTerms> {
    let bce_adjacency = bce(tape, z, adjacency)?;
    let bce_diffusion = bce(tape, z, diffusion)?;
    let mut total = tape.add(bce_adjacency, bce_diffusion)?;
    let mut kls = [None, None];
    if let Some((local, diffused)) = views {
        for (slot, view) in kls.iter_mut().zip([local, diffused]) {
            if let (Some(mu), Some(lv)) = (view.mu, view.log_var) {
                let kl = kl_divergence(tape, mu, lv)?;
                total = tape.add(total, kl)?;
                *slot = Some(kl);
            }
        }
    }
    Ok(ReconstructionTerms {
        bce_adjacency,
        bce_diffusion,
        kl_local: kls[0],
        kl_diffused: kls[1],
        total,
    })
}

/// `recon + β·cov`
pub fn total_loss(tape: &mut Tape, recon: Var, cov: Var, beta: f64) -> Result<Var> {
    let weighted = tape.scale(cov, beta)?;
    tape.add(recon, weighted)
}

/// Per-iteration loss components, as logged to CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub bce_a: f64,
    pub bce_s: f64,
    pub kl_local: f64,
    pub kl_diffused: f64,
    pub cov_diag: f64,
    pub cov_offdiag: f64,
    pub total: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "iteration,bce_a,bce_s,kl_local,kl_diffused,cov_diag,cov_offdiag,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration,
            self.bce_a,
            self.bce_s,
            self.kl_local,
            self.kl_diffused,
            self.cov_diag,
            self.cov_offdiag,
            self.total
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::sigmoid;
    use ndarray::array;

    #[test]
    fn hand_covariance_d1() {
        let z = array![[1.0], [-1.0]];
        let c = CovarianceMatrix::compute(&z, &z).unwrap();
        assert!((c.0[[0, 0]] - sigmoid(2.0)).abs() < 1e-15);
        assert!((c.0[[0, 0]] - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn constant_column_gives_half() {
        let a = array![[1.0, 2.0], [3.0, -1.0], [0.0, 0.5]];
        let b = array![[1.0, 7.0], [2.0, 7.0], [4.0, 7.0]];
        let c = CovarianceMatrix::compute(&a, &b).unwrap();
        assert_eq!(c.0[[0, 1]], 0.5);
        assert_eq!(c.0[[1, 1]], 0.5);
    }

    #[test]
    fn covariance_needs_two_rows() {
        let z = array![[1.0, 2.0]];
        assert!(CovarianceMatrix::compute(&z, &z).is_err());
    }

    #[test]
    fn hand_covariance_loss_d1() {
        let mut tape = Tape::new();
        let z = tape.param(array![[1.0], [-1.0]]);
        let c = covariance_entries(&mut tape, z, z).unwrap();
        let terms = covariance_loss(&mut tape, c, 5e-3, 2).unwrap();
        let want = -0.5 * sigmoid(2.0).ln();
        assert!((tape.scalar(terms.total) - want).abs() < 1e-15);
        assert!((tape.scalar(terms.total) - 0.0634).abs() < 1e-4);
        assert_eq!(tape.scalar(terms.off_diagonal), 0.0);
    }

    #[test]
    fn covariance_loss_closed_form_limit() {
        // diagonal at 1 (saturated), off-diagonal exactly 0.5
        let d = 3;
        let n = 10usize;
        let lambda = 0.2;
        let mut tape = Tape::new();
        let c = tape.constant(Array2::from_shape_fn((d, d), |(i, j)| if i == j { 1.0 } else { 0.5 }));
        let terms = covariance_loss(&mut tape, c, lambda, n).unwrap();
        assert_eq!(tape.scalar(terms.diagonal), 0.0);
        let want = -(lambda / (n * (n - 1)) as f64) * (d * (d - 1)) as f64 * 0.5f64.ln();
        assert!((tape.scalar(terms.off_diagonal) - want).abs() < 1e-15);
        let mut tape = Tape::new();
        let c = tape.constant(Array2::from_elem((d, d), 0.9));
        let zero_lambda = covariance_loss(&mut tape, c, 0.0, n).unwrap();
        assert_eq!(tape.scalar(zero_lambda.off_diagonal), 0.0);
    }

    #[test]
    fn uniform_prediction_bce_is_ln2() {
        let mut tape = Tape::new();
        let z = tape.param(Array2::zeros((3, 2)));
        let s = PairSample::binary(&[(0, 1)], &[(1, 2)]);
        let l = bce(&mut tape, z, &s).unwrap();
        assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn kl_closed_form_cases() {
        let mut tape = Tape::new();
        let mu = tape.param(Array2::zeros((4, 3)));
        let lv = tape.param(Array2::zeros((4, 3)));
        let kl = kl_divergence(&mut tape, mu, lv).unwrap();
        assert_eq!(tape.scalar(kl), 0.0);

        let mut tape = Tape::new();
        let mu = tape.param(Array2::ones((1, 1)));
        let lv = tape.param(Array2::zeros((1, 1)));
        let kl = kl_divergence(&mut tape, mu, lv).unwrap();
        assert_eq!(tape.scalar(kl), 0.5);
    }

    #[test]
    fn empty_sample_is_an_error() {
        let mut tape = Tape::new();
        let z = tape.param(Array2::zeros((2, 2)));
        assert!(bce(&mut tape, z, &PairSample::binary(&[], &[])).is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        let mut tape = Tape::new();
        let r = tape.constant(array![[1.0]]);
        let c = tape.constant(array![[2.0]]);
        let t = total_loss(&mut tape, r, c, 0.5).unwrap();
        assert_eq!(tape.scalar(t), 2.0);
        let t0 = total_loss(&mut tape, r, c, 0.0).unwrap();
        assert_eq!(tape.scalar(t0), 1.0);
    }

    #[test]
    fn sweep_betas_validate() {
        for beta in [0.01, 0.1, 1.0, 10.0, 100.0, 500.0, 1000.0, 10000.0] {
            LossConfig { beta, ..LossConfig::default() }.validate().unwrap();
        }
        assert!(LossConfig { beta: -1.0, ..LossConfig::default() }.validate().is_err());
    }
}
