//! Shared single-layer GCN encoder (plain or variational), two-view fusion
//! and the inner-product edge decoder.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, SparseOperand, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Edge;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Bgae,
    Bvgae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Fixed,
    Attention,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Bgae => "bgae",
            Variant::Bvgae => "bvgae",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bgae" => Ok(Variant::Bgae),
            "bvgae" => Ok(Variant::Bvgae),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Fixed => "fixed",
            FusionMode::Attention => "attention",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(FusionMode::Fixed),
            "attention" => Ok(FusionMode::Attention),
            other => Err(Error::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limits");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Encoder weights. `weight` is `W` for BGAE and `W_mu` for BVGAE.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub variant: Variant,
    pub weight: Array2<f64>,
    pub weight_log_var: Option<Array2<f64>>,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(variant: Variant, features: usize, dim: usize, rng: &mut R) -> Self {
        let weight = glorot(features, dim, rng);
        let weight_log_var = (variant == Variant::Bvgae).then(|| glorot(features, dim, rng));
        EncoderParams {
            variant,
            weight,
            weight_log_var,
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub mode: FusionMode,
    /// `d×1` attention vectors, present only in attention mode.
    pub w_local: Option<Array2<f64>>,
    pub w_diffused: Option<Array2<f64>>,
}

impl FusionParams {
    pub fn init<R: Rng + ?Sized>(mode: FusionMode, dim: usize, rng: &mut R) -> Self {
        match mode {
            FusionMode::Fixed => FusionParams {
                mode,
                w_local: None,
                w_diffused: None,
            },
            FusionMode::Attention => FusionParams {
                mode,
                w_local: Some(glorot(dim, 1, rng)),
                w_diffused: Some(glorot(dim, 1, rng)),
            },
        }
    }
}

/// All trainable state of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub fusion: FusionParams,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(variant: Variant, fusion: FusionMode, features: usize, dim: usize, rng: &mut R) -> Self {
        Model {
            encoder: EncoderParams::init(variant, features, dim, rng),
            fusion: FusionParams::init(fusion, dim, rng),
        }
    }

    pub fn variant(&self) -> Variant {
        self.encoder.variant
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    /// Parameters in a fixed order, with stable names.
    pub fn named(&self) -> Vec<(&'static str, &Array2<f64>)> {
        let mut out = vec![("encoder.weight", &self.encoder.weight)];
        if let Some(w) = &self.encoder.weight_log_var {
            out.push(("encoder.weight_log_var", w));
        }
        if let Some(w) = &self.fusion.w_local {
            out.push(("fusion.w_local", w));
        }
        if let Some(w) = &self.fusion.w_diffused {
            out.push(("fusion.w_diffused", w));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        let mut out = vec![("encoder.weight", &mut self.encoder.weight)];
        if let Some(w) = &mut self.encoder.weight_log_var {
            out.push(("encoder.weight_log_var", w));
        }
        if let Some(w) = &mut self.fusion.w_local {
            out.push(("fusion.w_local", w));
        }
        if let Some(w) = &mut self.fusion.w_diffused {
            out.push(("fusion.w_diffused", w));
        }
        out
    }

    /// Records every parameter on the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            weight: tape.param(self.encoder.weight.clone()),
            weight_log_var: self.encoder.weight_log_var.as_ref().map(|w| tape.param(w.clone())),
            w_local: self.fusion.w_local.as_ref().map(|w| tape.param(w.clone())),
            w_diffused: self.fusion.w_diffused.as_ref().map(|w| tape.param(w.clone())),
            fusion: self.fusion.mode,
        }
    }

    /// Deterministic fused embedding (BVGAE uses the means).
    pub fn embed(&self, inputs: &ViewInputs) -> Result<Array2<f64>> {
        Ok(self.embed_all(inputs)?.fused)
    }

    pub fn embed_all(&self, inputs: &ViewInputs) -> Result<Embeddings> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let pair = encode_views::<crate::rng::Rng>(&mut tape, inputs, &bound, None)?;
        let fused = fuse(&mut tape, &pair, &bound)?;
        Ok(Embeddings {
            local: tape.value(pair.local.z).clone(),
            diffused: tape.value(pair.diffused.z).clone(),
            fused: tape.value(fused.z).clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Embeddings {
    pub local: Array2<f64>,
    pub diffused: Array2<f64>,
    pub fused: Array2<f64>,
}

/// Model parameters as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct BoundParams {
    pub weight: Var,
    pub weight_log_var: Option<Var>,
    pub w_local: Option<Var>,
    pub w_diffused: Option<Var>,
    pub fusion: FusionMode,
}

impl BoundParams {
    /// Tape variables in the same order as [`Model::named`].
    pub fn vars(&self) -> Vec<Var> {
        [Some(self.weight), self.weight_log_var, self.w_local, self.w_diffused]
            .into_iter()
            .flatten()
            .collect()
    }
}

/// The constant inputs of both views.
#[derive(Debug, Clone)]
pub struct ViewInputs {
    pub features: Arc<SparseOperand>,
    /// Normalized adjacency (view I).
    pub local: Arc<SparseOperand>,
    /// Sparsified diffusion matrix (view Ī).
    pub diffused: Arc<SparseOperand>,
}

/// One view's latent output; `mu`/`log_var` are set for BVGAE.
#[derive(Debug, Clone, Copy)]
pub struct ViewEmbedding {
    pub z: Var,
    pub mu: Option<Var>,
    pub log_var: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct EmbeddingPair {
    pub local: ViewEmbedding,
    pub diffused: ViewEmbedding,
}

/// `X·W` (and `X·W_logvar`), shared by both views.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    mean: Var,
    log_var: Option<Var>,
}

pub fn project_features(tape: &mut Tape, features: &Arc<SparseOperand>, params: &BoundParams) -> Result<Projection> {
    let mean = tape.sparse_matmul(features, params.weight)?;
    let log_var = match params.weight_log_var {
        Some(w) => Some(tape.sparse_matmul(features, w)?),
        None => None,
    };
    Ok(Projection { mean, log_var })
}

/// Propagates a shared projection over one view. With `rng = None` the
/// variational encoder returns its mean.
pub fn encode<R: Rng + ?Sized>(
    tape: &mut Tape,
    view: &Arc<SparseOperand>,
    projection: &Projection,
    rng: Option<&mut R>,
) -> Result<ViewEmbedding> {
    let mean = tape.sparse_matmul(view, projection.mean)?;
    let Some(lv_proj) = projection.log_var else {
        return Ok(ViewEmbedding {
            z: mean,
            mu: None,
            log_var: None,
        });
    };
    let log_var = tape.sparse_matmul(view, lv_proj)?;
    let z = match rng {
        Some(rng) => tape.reparameterize(mean, log_var, rng)?,
        None => mean,
    };
    Ok(ViewEmbedding {
        z,
        mu: Some(mean),
        log_var: Some(log_var),
    })
}

/// Encodes both views with one set of weights.
pub fn encode_views<R: Rng>(
    tape: &mut Tape,
    inputs: &ViewInputs,
    params: &BoundParams,
    mut rng: Option<&mut R>,
) -> Result<EmbeddingPair> {
    let projection = project_features(tape, &inputs.features, params)?;
    let local = encode(tape, &inputs.local, &projection, rng.as_deref_mut())?;
    let diffused = encode(tape, &inputs.diffused, &projection, rng.as_deref_mut())?;
    Ok(EmbeddingPair { local, diffused })
}

#[derive(Debug, Clone, Copy)]
pub struct Fused {
    pub z: Var,
    /// Per-node weight of the local view (`N×1`), attention mode only.
    pub phi_local: Option<Var>,
}

/// Fixed mode averages the views; attention mode weights node `i` by
/// `φᵢ = softmax(LeakyReLU(w₁ᵀzᵢ^I), LeakyReLU(w₂ᵀzᵢ^Ī))₀`.
pub fn fuse(tape: &mut Tape, pair: &EmbeddingPair, params: &BoundParams) -> Result<Fused> {
    let (zl, zd) = (pair.local.z, pair.diffused.z);
    if tape.shape(zl) != tape.shape(zd) {
        return Err(Error::Shape {
            op: "fuse",
            left: tape.shape(zl),
            right: tape.shape(zd),
        });
    }
    match params.fusion {
        FusionMode::Fixed => {
            let sum = tape.add(zl, zd)?;
            Ok(Fused {
                z: tape.scale(sum, 0.5)?,
                phi_local: None,
            })
        }
        FusionMode::Attention => {
            let (w1, w2) = params
                .w_local
                .zip(params.w_diffused)
                .ok_or_else(|| Error::Config("attention fusion without attention weights".into()))?;
            let s1 = tape.matmul(zl, w1)?;
            let s1 = tape.leaky_relu(s1, LEAKY_SLOPE)?;
            let s2 = tape.matmul(zd, w2)?;
            let s2 = tape.leaky_relu(s2, LEAKY_SLOPE)?;
            // two-way softmax == sigmoid of the logit difference
            let diff = tape.sub(s1, s2)?;
            let phi = tape.sigmoid(diff)?;
            let neg = tape.scale(phi, -1.0)?;
            let phi_bar = tape.add_scalar(neg, 1.0)?;
            let a = tape.scale_rows(zl, phi)?;
            let b = tape.scale_rows(zd, phi_bar)?;
            Ok(Fused {
                z: tape.add(a, b)?,
                phi_local: Some(phi),
            })
        }
    }
}

/// `σ(zᵢᵀzⱼ)` per pair, on the tape.
pub fn decode_edges(tape: &mut Tape, z: Var, pairs: Arc<Vec<Edge>>) -> Result<Var> {
    let logits = tape.row_dot(z, pairs)?;
    tape.sigmoid(logits)
}

/// Edge probabilities from a frozen embedding.
pub fn edge_scores(z: &Array2<f64>, pairs: &[Edge]) -> Vec<f64> {
    pairs
        .iter()
        .map(|&(i, j)| sigmoid(z.row(i).dot(&z.row(j))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CsrMatrix;
    use ndarray::array;

    fn operand(m: Array2<f64>) -> Arc<SparseOperand> {
        SparseOperand::new(CsrMatrix::from_dense(&m.view()))
    }

    fn fixed_model(weight: Array2<f64>) -> Model {
        Model {
            encoder: EncoderParams {
                variant: Variant::Bgae,
                weight,
                weight_log_var: None,
            },
            fusion: FusionParams {
                mode: FusionMode::Fixed,
                w_local: None,
                w_diffused: None,
            },
        }
    }

    #[test]
    fn identity_chain() {
        let inputs = ViewInputs {
            features: operand(Array2::eye(2)),
            local: operand(Array2::eye(2)),
            diffused: operand(Array2::eye(2)),
        };
        let e = fixed_model(Array2::eye(2)).embed_all(&inputs).unwrap();
        assert_eq!(e.local, Array2::<f64>::eye(2));
    }

    #[test]
    fn k2_propagation_by_hand() {
        let inputs = ViewInputs {
            features: operand(Array2::eye(2)),
            local: operand(array![[0.5, 0.5], [0.5, 0.5]]),
            diffused: operand(Array2::eye(2)),
        };
        let e = fixed_model(Array2::eye(2)).embed_all(&inputs).unwrap();
        assert_eq!(e.local, array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn views_share_the_encoder() {
        let adj = array![[0.5, 0.5], [0.5, 0.5]];
        let inputs = ViewInputs {
            features: operand(array![[1.0, 2.0], [0.0, 1.0]]),
            local: operand(adj.clone()),
            diffused: operand(adj),
        };
        let mut rng = crate::rng::seeded(0);
        let model = Model::init(Variant::Bgae, FusionMode::Fixed, 2, 3, &mut rng);
        let e = model.embed_all(&inputs).unwrap();
        assert_eq!(e.local, e.diffused);
        assert_eq!(e.fused, e.local);
    }

    #[test]
    fn attention_with_zero_weights_is_even() {
        let mut tape = Tape::new();
        let zl = tape.param(array![[1.0, 2.0], [3.0, -1.0]]);
        let zd = tape.param(array![[0.0, 1.0], [2.0, 2.0]]);
        let bound = BoundParams {
            weight: zl,
            weight_log_var: None,
            w_local: Some(tape.param(Array2::zeros((2, 1)))),
            w_diffused: Some(tape.param(Array2::zeros((2, 1)))),
            fusion: FusionMode::Attention,
        };
        let pair = EmbeddingPair {
            local: ViewEmbedding { z: zl, mu: None, log_var: None },
            diffused: ViewEmbedding { z: zd, mu: None, log_var: None },
        };
        let fused = fuse(&mut tape, &pair, &bound).unwrap();
        let phi = tape.value(fused.phi_local.unwrap());
        assert!(phi.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn attention_hand_softmax() {
        let mut tape = Tape::new();
        let zl = tape.param(array![[1.0, 0.0]]);
        let zd = tape.param(array![[0.0, 1.0]]);
        let bound = BoundParams {
            weight: zl,
            weight_log_var: None,
            w_local: Some(tape.param(array![[1.0], [0.0]])),
            w_diffused: Some(tape.param(array![[1.0], [0.0]])),
            fusion: FusionMode::Attention,
        };
        let pair = EmbeddingPair {
            local: ViewEmbedding { z: zl, mu: None, log_var: None },
            diffused: ViewEmbedding { z: zd, mu: None, log_var: None },
        };
        let fused = fuse(&mut tape, &pair, &bound).unwrap();
        let phi = tape.value(fused.phi_local.unwrap())[[0, 0]];
        let e = std::f64::consts::E;
        assert!((phi - e / (e + 1.0)).abs() < 1e-15);
        assert!((phi - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn decoder_values() {
        let z = array![[0.0, 0.0], [1.0, 1.0], [1.0, 1.0]];
        let s = edge_scores(&z, &[(0, 1), (1, 2), (2, 1)]);
        assert_eq!(s[0], 0.5);
        assert!((s[1] - 0.8808).abs() < 1e-4);
        assert_eq!(s[1].to_bits(), s[2].to_bits());
    }

    #[test]
    fn bvgae_mean_path_is_deterministic() {
        let mut rng = crate::rng::seeded(2);
        let inputs = ViewInputs {
            features: operand(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]),
            local: operand(Array2::eye(3)),
            diffused: operand(Array2::eye(3)),
        };
        let model = Model::init(Variant::Bvgae, FusionMode::Attention, 2, 4, &mut rng);
        assert_eq!(model.named().len(), 4);
        let a = model.embed(&inputs).unwrap();
        let b = model.embed(&inputs).unwrap();
        assert_eq!(a, b);
    }
}
