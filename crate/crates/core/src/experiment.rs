//! End-to-end runs: diffusion (cached on disk), training, evaluation and
//! the β sweep.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::SparseOperand;
use crate::diffusion::{diffuse, DiffusionConfig, DiffusionMatrix};
use crate::error::{Error, Result};
use crate::eval::{
    accuracy, auc, average_precision, clustering_metrics, kmeans, logistic_head, KMeansConfig, LogisticConfig,
};
use crate::graph::{normalize_edges, split_edges, DatasetBundle, Edge, EdgeSplit, SplitFractions};
use crate::losses::LossConfig;
use crate::model::{edge_scores, FusionMode, Model, Variant, ViewInputs};
use crate::rng::derived;
use crate::sparse::CsrMatrix;
use crate::training::{train, RunState, TrainConfig, TrainingData, STREAM_INIT};

/// Environment variable overriding the diffusion cache directory.
pub const CACHE_ENV: &str = "BGAE_CACHE_DIR";

/// β values swept by default.
pub const DEFAULT_BETAS: [f64; 8] = [0.01, 0.1, 1.0, 10.0, 100.0, 500.0, 1000.0, 10000.0];

/// β of the main-table runs; the sweep reports performance relative to it.
pub const BASELINE_BETA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Hidden-edge link prediction scored by test AUC/AP.
    LinkPred,
    /// Clustering and node classification on embeddings of the full graph.
    Embed,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::LinkPred => "linkpred",
            Task::Embed => "embed",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linkpred" => Ok(Task::LinkPred),
            "embed" => Ok(Task::Embed),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub task: Task,
    pub variant: Variant,
    pub fusion: FusionMode,
    pub dim: usize,
    pub diffusion: DiffusionConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Scale feature rows to unit L1 norm before encoding.
    pub normalize_features: bool,
    /// Add self-loops before the GCN normalization of the adjacency view.
    pub adjacency_self_loops: bool,
    pub split: SplitFractions,
    /// Seed of the edge split; `None` uses the training seed.
    pub split_seed: Option<u64>,
    pub kmeans: KMeansConfig,
    pub logistic: LogisticConfig,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::new(),
            task: Task::LinkPred,
            variant: Variant::Bgae,
            fusion: FusionMode::Fixed,
            dim: 512,
            diffusion: DiffusionConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            normalize_features: false,
            adjacency_self_loops: true,
            split: SplitFractions::default(),
            split_seed: None,
            kmeans: KMeansConfig::default(),
            logistic: LogisticConfig::default(),
            output: None,
        }
    }
}

impl ExperimentConfig {
    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dim == 0 {
            problems.push("dim must be >= 1".to_string());
        }
        for check in [self.diffusion.validate(), self.loss.validate(), self.train.validate()] {
            match check {
                Err(Error::Config(msg)) => problems.push(msg),
                Err(e) => problems.push(e.to_string()),
                Ok(()) => {}
            }
        }
        let f = self.split;
        if [f.train, f.val, f.test].iter().any(|v| !(*v >= 0.0)) || ((f.train + f.val + f.test) - 1.0).abs() > 1e-9 {
            problems.push("split fractions must be nonnegative and sum to 1".to_string());
        }
        if self.kmeans.restarts == 0 || self.kmeans.max_iter == 0 {
            problems.push("k-means needs at least one restart and one iteration".to_string());
        }
        if !(self.logistic.c > 0.0) || self.logistic.max_iter == 0 {
            problems.push("logistic head needs c > 0 and max_iter >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let body = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&body))
    }

    pub fn dataset_id(&self) -> String {
        self.dataset
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "in-memory".to_string())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub metrics: BTreeMap<String, f64>,
    pub dataset: String,
    pub seed: u64,
    pub config_hash: String,
    pub wall_seconds: f64,
}

impl MetricsReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// Graph, views and targets for one run, before any parameters exist.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub inputs: ViewInputs,
    /// Edges the model may see: training edges or the full edge set.
    pub graph_edges: Vec<Edge>,
    pub split: Option<EdgeSplit>,
    pub diffusion: DiffusionMatrix,
    pub diffusion_cached: bool,
}

/// Where diffusion matrices are cached: `$BGAE_CACHE_DIR`, else a
/// directory under the system temp dir.
pub fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("bgae-cache"))
}

/// Cache key over the exact graph the diffusion is computed on and the
/// diffusion settings.
pub fn diffusion_key(num_nodes: usize, edges: &[Edge], config: &DiffusionConfig) -> String {
    let mut h = Sha256::new();
    h.update((num_nodes as u64).to_le_bytes());
    for &(i, j) in edges {
        h.update((i as u64).to_le_bytes());
        h.update((j as u64).to_le_bytes());
    }
    h.update(serde_json::to_vec(config).expect("config serializes"));
    hex(&h.finalize())[..32].to_string()
}

/// Loads the diffusion matrix from `dir` or computes and stores it.
/// Returns the matrix and whether it came from the cache.
pub fn cached_diffusion(
    dir: Option<&Path>,
    num_nodes: usize,
    edges: &[Edge],
    config: &DiffusionConfig,
) -> Result<(DiffusionMatrix, bool)> {
    let Some(dir) = dir else {
        return Ok((diffuse(num_nodes, edges, config)?, false));
    };
    let key = diffusion_key(num_nodes, edges, config);
    let tsv = dir.join(format!("{key}.tsv"));
    let sidecar = dir.join(format!("{key}.json"));
    if tsv.is_file() && sidecar.is_file() {
        match DiffusionMatrix::read(&tsv, &sidecar) {
            Ok(s) if s.matrix.nrows() == num_nodes => {
                log::info!("diffusion cache hit {}", tsv.display());
                return Ok((s, true));
            }
            Ok(_) | Err(_) => log::warn!("ignoring unreadable cache entry {}", tsv.display()),
        }
    }
    let s = diffuse(num_nodes, edges, config)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    // write under unique names, then rename, so concurrent runs never see a half file
    let tag = format!("{}.{:?}", std::process::id(), std::thread::current().id()).replace(['(', ')'], "");
    let tmp_tsv = dir.join(format!("{key}.tsv.{tag}"));
    let tmp_side = dir.join(format!("{key}.json.{tag}"));
    s.write(&tmp_tsv, &tmp_side)?;
    fs::rename(&tmp_tsv, &tsv).map_err(|e| Error::io(&tsv, e))?;
    fs::rename(&tmp_side, &sidecar).map_err(|e| Error::io(&sidecar, e))?;
    Ok((s, false))
}

/// Builds both views. Link prediction hides validation and test edges
/// from the adjacency view and from the diffusion.
pub fn prepare(config: &ExperimentConfig, bundle: &DatasetBundle, cache: Option<&Path>) -> Result<Prepared> {
    config.validate()?;
    let n = bundle.num_nodes();
    let (graph_edges, split) = match config.task {
        Task::LinkPred => {
            let split = split_edges(bundle, config.split, config.split_seed.unwrap_or(config.train.seed))?;
            (split.train_pos.clone(), Some(split))
        }
        Task::Embed => (bundle.edges().to_vec(), None),
    };
    let adjacency = normalize_edges(n, &graph_edges, config.adjacency_self_loops);
    let (diffusion, diffusion_cached) = cached_diffusion(cache, n, &graph_edges, &config.diffusion)?;
    let features = if config.normalize_features {
        bundle.row_normalized_features()
    } else {
        bundle.features().clone()
    };
    let inputs = ViewInputs {
        features: SparseOperand::new(CsrMatrix::from_dense(&features.view())),
        local: SparseOperand::new(adjacency.matrix),
        diffused: SparseOperand::new(diffusion.matrix.clone()),
    };
    Ok(Prepared {
        inputs,
        graph_edges,
        split,
        diffusion,
        diffusion_cached,
    })
}

/// Initializes and trains a model on prepared views.
pub fn train_model(config: &ExperimentConfig, bundle: &DatasetBundle, prepared: &Prepared) -> Result<(Model, RunState)> {
    let validation = prepared
        .split
        .as_ref()
        .map(|s| (s.val_pos.clone(), s.val_neg.clone()));
    let data = TrainingData::new(
        prepared.inputs.clone(),
        bundle.num_nodes(),
        prepared.graph_edges.clone(),
        &prepared.diffusion.matrix,
        validation,
    )?;
    let mut init = derived(config.train.seed, STREAM_INIT);
    let mut model = Model::init(config.variant, config.fusion, bundle.num_features(), config.dim, &mut init);
    let run = train(&data, &mut model, &config.loss, &config.train)?;
    Ok((model, run))
}

/// Task metrics for a trained model.
pub fn evaluate(
    config: &ExperimentConfig,
    bundle: &DatasetBundle,
    prepared: &Prepared,
    model: &Model,
) -> Result<BTreeMap<String, f64>> {
    let z = model.embed(&prepared.inputs)?;
    let mut metrics = BTreeMap::new();
    match config.task {
        Task::LinkPred => {
            let split = prepared
                .split
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("link prediction needs an edge split".into()))?;
            let mut scores = edge_scores(&z, &split.test_pos);
            scores.extend(edge_scores(&z, &split.test_neg));
            let labels: Vec<bool> = (0..scores.len()).map(|k| k < split.test_pos.len()).collect();
            metrics.insert("auc".into(), auc(&scores, &labels)?);
            metrics.insert("ap".into(), average_precision(&scores, &labels)?);
        }
        Task::Embed => {
            let truth = bundle.labels();
            let clusters = kmeans(&z, bundle.num_classes(), &config.kmeans, config.train.seed)?;
            let scores = clustering_metrics(&clusters.assignments, truth)?;
            metrics.insert("acc".into(), scores.acc);
            metrics.insert("nmi".into(), scores.nmi);
            metrics.insert("ari".into(), scores.ari);

            let ids = bundle.masks().to_ids();
            if !ids.train.is_empty() && !ids.test.is_empty() {
                let rows = |list: &[usize]| z.select(ndarray::Axis(0), list);
                let train_y: Vec<usize> = ids.train.iter().map(|&i| truth[i]).collect();
                let test_y: Vec<usize> = ids.test.iter().map(|&i| truth[i]).collect();
                let head = logistic_head(
                    &rows(&ids.train),
                    &train_y,
                    &rows(&ids.test),
                    bundle.num_classes(),
                    &config.logistic,
                )?;
                metrics.insert("accuracy".into(), accuracy(&head.predictions, &test_y));
                metrics.insert("head_converged".into(), if head.converged { 1.0 } else { 0.0 });
            } else {
                log::warn!("bundle has no train/test node split; skipping classification");
            }
        }
    }
    Ok(metrics)
}

/// One complete run and its artifacts.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: MetricsReport,
    pub model: Model,
    pub state: RunState,
    pub diffusion_cached: bool,
}

/// diffuse → train → evaluate.
pub fn run_pipeline(config: &ExperimentConfig, bundle: &DatasetBundle, cache: Option<&Path>) -> Result<PipelineRun> {
    let start = Instant::now();
    let prepared = prepare(config, bundle, cache)?;
    let (model, state) = train_model(config, bundle, &prepared)?;
    let mut metrics = evaluate(config, bundle, &prepared, &model)?;
    if config.task == Task::LinkPred {
        metrics.insert("val_auc".into(), state.best_metric);
    }
    let report = MetricsReport {
        task: config.task,
        metrics,
        dataset: config.dataset_id(),
        seed: config.train.seed,
        config_hash: config.hash(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(PipelineRun {
        report,
        model,
        state,
        diffusion_cached: prepared.diffusion_cached,
    })
}

/// One β point. Missing metrics belong to tasks that were not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub seed: u64,
    pub auc: Option<f64>,
    pub nmi: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// `(β, error message)` for every failed point.
    pub failures: Vec<(f64, String)>,
}

/// Runs every `(β, task)` pair; the run at index `i` of `betas` uses seed
/// `config.train.seed + i`. All points share one edge split. Failed points
/// are logged and left out.
pub fn sweep(
    config: &ExperimentConfig,
    bundle: &DatasetBundle,
    betas: &[f64],
    tasks: &[Task],
    workers: usize,
    cache: Option<&Path>,
) -> Result<SweepOutcome> {
    if betas.is_empty() {
        return Err(Error::Config("sweep needs at least one beta".into()));
    }
    if tasks.is_empty() {
        return Err(Error::Config("sweep needs at least one task".into()));
    }
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let jobs: Vec<(usize, f64, Task)> = betas
        .iter()
        .enumerate()
        .flat_map(|(i, &b)| tasks.iter().map(move |&t| (i, b, t)))
        .collect();
    let results: Vec<(usize, Task, Result<MetricsReport>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, beta, task)| {
                let mut cfg = config.clone();
                cfg.task = task;
                cfg.loss.beta = beta;
                cfg.train.seed = config.train.seed + i as u64;
                cfg.split_seed = Some(config.split_seed.unwrap_or(config.train.seed));
                let out = run_pipeline(&cfg, bundle, cache).map(|r| r.report);
                (i, task, out)
            })
            .collect()
    });

    let mut rows: Vec<Option<SweepRow>> = betas
        .iter()
        .enumerate()
        .map(|(i, &beta)| {
            Some(SweepRow {
                beta,
                seed: config.train.seed + i as u64,
                auc: None,
                nmi: None,
                accuracy: None,
            })
        })
        .collect();
    let mut failures = Vec::new();
    for (i, task, result) in results {
        match result {
            Ok(report) => {
                if let Some(row) = rows[i].as_mut() {
                    match task {
                        Task::LinkPred => row.auc = report.get("auc"),
                        Task::Embed => {
                            row.nmi = report.get("nmi");
                            row.accuracy = report.get("accuracy");
                        }
                    }
                }
            }
            Err(e) => {
                log::error!("sweep point beta={} task={task} failed: {e}", betas[i]);
                failures.push((betas[i], e.to_string()));
                rows[i] = None;
            }
        }
    }
    Ok(SweepOutcome {
        rows: rows.into_iter().flatten().collect(),
        failures,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn relative(v: Option<f64>, base: Option<f64>) -> Option<f64> {
    match (v, base) {
        (Some(v), Some(b)) if b != 0.0 => Some(100.0 * (v - b) / b),
        _ => None,
    }
}

/// Sweep table with percentage change against the baseline-β row (or the
/// first row when the baseline is absent).
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let base = rows
        .iter()
        .find(|r| r.beta == BASELINE_BETA)
        .or_else(|| rows.first());
    let mut out = String::from("beta,seed,auc,nmi,accuracy,auc_rel_pct,nmi_rel_pct,accuracy_rel_pct\n");
    for r in rows {
        let rel = |f: fn(&SweepRow) -> Option<f64>| fmt_opt(relative(f(r), base.and_then(f)));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.beta,
            r.seed,
            fmt_opt(r.auc),
            fmt_opt(r.nmi),
            fmt_opt(r.accuracy),
            rel(|r| r.auc),
            rel(|r| r.nmi),
            rel(|r| r.accuracy),
        ));
    }
    out
}
