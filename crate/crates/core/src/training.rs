//! Full-batch training loop with per-epoch edge sampling and early stopping.

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::eval::ranking::auc;
use crate::graph::{sample_negative_edges, Edge, EdgeIndex};
use crate::losses::{covariance_entries, DiffusionTargets, covariance_loss, reconstruction_loss, total_loss, LossConfig, LossRecord, PairSample};
use crate::model::{edge_scores, encode_views, fuse, BoundParams, Model, ViewInputs};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{derived, Rng};
use crate::sparse::CsrMatrix;

/// RNG stream ids under the run seed.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_SAMPLING: u64 = 1;
pub const STREAM_NOISE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            max_epochs: 400,
            patience: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// Everything a run reads but never mutates.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub inputs: ViewInputs,
    pub num_nodes: usize,
    /// Positive adjacency edges seen during training.
    pub train_edges: Vec<Edge>,
    train_index: EdgeIndex,
    /// Diffusion entries clamped to `[0, 1]`, used as soft BCE targets.
    targets: CsrMatrix,
    /// Off-diagonal support of `targets` with a sampler proportional to weight.
    support: Vec<Edge>,
    support_sampler: Option<WeightedIndex<f64>>,
    /// Fixed validation pairs; `None` in embedding mode.
    pub validation: Option<(Vec<Edge>, Vec<Edge>)>,
}

impl TrainingData {
    pub fn new(
        inputs: ViewInputs,
        num_nodes: usize,
        train_edges: Vec<Edge>,
        diffusion: &CsrMatrix,
        validation: Option<(Vec<Edge>, Vec<Edge>)>,
    ) -> Result<Self> {
        let targets = diffusion.map_entries(|_, _, v| v.clamp(0.0, 1.0));
        let (support, weights): (Vec<Edge>, Vec<f64>) = targets
            .iter()
            .filter(|&(r, c, v)| r != c && v > 0.0)
            .map(|(r, c, v)| ((r, c), v))
            .unzip();
        let support_sampler = if support.is_empty() {
            None
        } else {
            Some(WeightedIndex::new(&weights).map_err(|e| Error::InvalidInput(format!("diffusion weights: {e}")))?)
        };
        let train_index = EdgeIndex::new(num_nodes, &train_edges);
        Ok(TrainingData {
            inputs,
            num_nodes,
            train_edges,
            train_index,
            targets,
            support,
            support_sampler,
            validation,
        })
    }

    pub fn diffusion_targets(&self) -> &CsrMatrix {
        &self.targets
    }

    /// Draws one iteration's adjacency and diffusion samples.
    pub fn sample_batch(&self, loss: &LossConfig, rng: &mut Rng) -> Result<Batch> {
        let neg = sample_negative_edges(
            &self.train_index,
            self.train_edges.len(),
            &EdgeIndex::empty(self.num_nodes),
            rng,
        )?;
        let adjacency = PairSample::binary(&self.train_edges, &neg);

        let soft = loss.diffusion_targets == DiffusionTargets::Soft;
        let count = loss.edge_batch.unwrap_or(self.train_edges.len()).max(1);
        let mut pairs = Vec::with_capacity(2 * count);
        let mut targets = Vec::with_capacity(2 * count);
        if let Some(sampler) = &self.support_sampler {
            for _ in 0..count {
                let (i, j) = self.support[sampler.sample(rng)];
                pairs.push((i, j));
                targets.push(if soft { self.targets.get(i, j) } else { 1.0 });
            }
        }
        if self.num_nodes >= 2 {
            // uniform non-self pairs
            for _ in 0..count {
                let i = rng.random_range(0..self.num_nodes);
                let mut j = rng.random_range(0..self.num_nodes - 1);
                if j >= i {
                    j += 1;
                }
                pairs.push((i, j));
                targets.push(0.0);
            }
        }
        Ok(Batch {
            adjacency,
            diffusion: PairSample::new(pairs, targets),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub adjacency: PairSample,
    pub diffusion: PairSample,
}

/// One forward pass of the full objective on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub params: BoundParams,
    pub loss: Var,
    pub bce_a: Var,
    pub bce_s: Var,
    pub kl_local: Option<Var>,
    pub kl_diffused: Option<Var>,
    pub cov_diag: Var,
    pub cov_offdiag: Var,
}

impl Objective {
    pub fn record(&self, tape: &Tape, iteration: usize) -> LossRecord {
        let opt = |v: Option<Var>| v.map(|v| tape.scalar(v)).unwrap_or(0.0);
        LossRecord {
            iteration,
            bce_a: tape.scalar(self.bce_a),
            bce_s: tape.scalar(self.bce_s),
            kl_local: opt(self.kl_local),
            kl_diffused: opt(self.kl_diffused),
            cov_diag: tape.scalar(self.cov_diag),
            cov_offdiag: tape.scalar(self.cov_offdiag),
            total: tape.scalar(self.loss),
        }
    }
}

/// Records `L = L_recon + β·L_cov` for `model` on `tape`. `noise` drives the
/// variational samples and is ignored by the plain encoder.
pub fn objective(
    tape: &mut Tape,
    model: &Model,
    inputs: &ViewInputs,
    batch: &Batch,
    loss: &LossConfig,
    noise: &mut Rng,
) -> Result<Objective> {
    let params = model.bind(tape);
    let pair = encode_views(tape, inputs, &params, Some(noise))?;
    let fused = fuse(tape, &pair, &params)?;
    let recon = reconstruction_loss(
        tape,
        fused.z,
        &batch.adjacency,
        &batch.diffusion,
        Some((&pair.local, &pair.diffused)),
    )?;
    let n = tape.shape(pair.local.z).0;
    let c = covariance_entries(tape, pair.local.z, pair.diffused.z)?;
    let cov = covariance_loss(tape, c, loss.lambda, n)?;
    let total = total_loss(tape, recon.total, cov.total, loss.beta)?;
    Ok(Objective {
        params,
        loss: total,
        bce_a: recon.bce_adjacency,
        bce_s: recon.bce_diffusion,
        kl_local: recon.kl_local,
        kl_diffused: recon.kl_diffused,
        cov_diag: cov.diagonal,
        cov_offdiag: cov.off_diagonal,
    })
}

/// Loss value and per-parameter gradients (in [`Model::named`] order).
pub fn loss_and_gradients(
    model: &Model,
    inputs: &ViewInputs,
    batch: &Batch,
    loss: &LossConfig,
    noise: &mut Rng,
) -> Result<(LossRecord, Vec<Array2<f64>>)> {
    let mut tape = Tape::new();
    let obj = objective(&mut tape, model, inputs, batch, loss, noise)?;
    let record = obj.record(&tape, 0);
    if !record.total.is_finite() {
        return Ok((record, Vec::new()));
    }
    tape.backward(obj.loss)?;
    let grads = obj
        .params
        .vars()
        .into_iter()
        .map(|v| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Array2::zeros(tape.shape(v)))
        })
        .collect();
    Ok((record, grads))
}

#[derive(Debug, Clone)]
pub struct RunState {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Validation AUC (link prediction) or negated training loss (embedding).
    pub best_metric: f64,
    pub history: Vec<LossRecord>,
    pub metric_history: Vec<f64>,
    pub stopped_early: bool,
    pub rng: Rng,
}

/// Trains `model` in place and leaves it at the best recorded snapshot.
pub fn train(data: &TrainingData, model: &mut Model, loss: &LossConfig, config: &TrainConfig) -> Result<RunState> {
    loss.validate()?;
    config.validate()?;
    let mut sampling = derived(config.seed, STREAM_SAMPLING);
    let mut noise = derived(config.seed, STREAM_NOISE);
    let mut adam = Adam::new(config.adam);

    let mut history = Vec::new();
    let mut metric_history = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;
    let mut stopped_early = false;
    let mut epochs_run = 0;

    for epoch in 0..config.max_epochs {
        let batch = data.sample_batch(loss, &mut sampling)?;
        let (mut record, grads) = loss_and_gradients(model, &data.inputs, &batch, loss, &mut noise)?;
        record.iteration = epoch;
        if !record.total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                last_finite: epoch.checked_sub(1),
            });
        }
        let before = model.clone();
        {
            let mut params = model.named_mut();
            let grad_refs: Vec<&Array2<f64>> = grads.iter().collect();
            adam.step(&mut params, &grad_refs)?;
        }
        epochs_run = epoch + 1;
        history.push(record);

        let (metric, snapshot) = match &data.validation {
            Some((pos, neg)) => {
                let z = model.embed(&data.inputs)?;
                (validation_auc(&z, pos, neg)?, None)
            }
            None => (-record.total, Some(before)),
        };
        metric_history.push(metric);
        log::debug!("epoch {epoch}: loss={:.6} metric={metric:.6}", record.total);

        let improved = best.as_ref().is_none_or(|(_, m, _)| metric > *m);
        if improved {
            best = Some((epoch, metric, snapshot.unwrap_or_else(|| model.clone())));
        } else if let Some((best_epoch, _, _)) = &best {
            if epoch - best_epoch >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, best_metric, snapshot) = best.expect("at least one epoch ran");
    *model = snapshot;
    Ok(RunState {
        epochs_run,
        best_epoch,
        best_metric,
        history,
        metric_history,
        stopped_early,
        rng: sampling,
    })
}

fn validation_auc(z: &Array2<f64>, pos: &[Edge], neg: &[Edge]) -> Result<f64> {
    let mut scores = edge_scores(z, pos);
    scores.extend(edge_scores(z, neg));
    let labels: Vec<bool> = std::iter::repeat_n(true, pos.len()).chain(std::iter::repeat_n(false, neg.len())).collect();
    auc(&scores, &labels)
}
