//! `bgae`: validate datasets, precompute diffusion, train, evaluate and
//! sweep β from the command line.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bgae_core::checkpoint;
use bgae_core::diffusion::{diffuse, DiffusionMethod, Kernel, Sparsification};
use bgae_core::experiment::{self, cache_dir, sweep_csv, ExperimentConfig, MetricsReport, Task, DEFAULT_BETAS};
use bgae_core::losses::{DiffusionTargets, LossRecord};
use bgae_core::synth::{latent_space_graph, stochastic_block_model, LatentConfig, SbmConfig};
use bgae_core::{load_bundle, save_bundle, Error, FusionMode, Variant};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "bgae", version, about = "Barlow graph auto-encoders")]
struct Cli {
    /// Log progress to stderr (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset bundle and print its statistics.
    Validate { dataset: PathBuf },
    /// Compute the diffusion matrix of the full graph and write it as TSV.
    Diffuse {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        diffusion: DiffusionArgs,
        /// Output TSV; a JSON sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint, loss log and run manifest.
    Train(RunArgs),
    /// Score a trained checkpoint.
    Evaluate {
        /// Directory written by `train` or `pipeline`.
        #[arg(long)]
        run: PathBuf,
        /// Dataset to evaluate on; defaults to the one recorded in the manifest.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Append a metrics row to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Diffuse, train and evaluate in one go.
    Pipeline(RunArgs),
    /// Run the pipeline for a list of β values and tabulate the results.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated β values.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BETAS.to_vec())]
        betas: Vec<f64>,
        /// Tasks run at every β.
        #[arg(long, value_delimiter = ',', default_values = ["linkpred", "embed"])]
        tasks: Vec<TaskArg>,
        /// Worker threads; defaults to the number of available cores.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write a synthetic bundle: a stochastic block model or a latent-space graph.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SynthKind::Sbm)]
        kind: SynthKind,
        #[arg(long, default_value_t = 200)]
        nodes: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 0.12)]
        p_in: f64,
        #[arg(long, default_value_t = 0.01)]
        p_out: f64,
        #[arg(long, default_value_t = 64)]
        features: usize,
        #[arg(long, default_value_t = 10)]
        train_per_class: usize,
        #[arg(long, default_value_t = 40)]
        val: usize,
        #[arg(long, default_value_t = 80)]
        test: usize,
        /// Spread of the class centres (latent graphs only).
        #[arg(long, default_value_t = 1.3)]
        spread: f64,
        /// Target mean degree (latent graphs only).
        #[arg(long, default_value_t = 5.0)]
        mean_degree: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Sbm,
    Latent,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Linkpred,
    Embed,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Linkpred => Task::LinkPred,
            TaskArg::Embed => Task::Embed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Bgae,
    Bvgae,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Fixed,
    Attention,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Auto,
    Exact,
    Series,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Symmetric,
    ColumnStochastic,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetsArg {
    Sampled,
    Soft,
}

#[derive(Args, Clone, Default)]
struct DiffusionArgs {
    /// Teleport probability.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    diffusion_method: Option<MethodArg>,
    /// Series order for `--diffusion-method series`.
    #[arg(long)]
    series_order: Option<usize>,
    /// Keep the k largest entries per row.
    #[arg(long, conflicts_with_all = ["threshold", "dense_diffusion"])]
    topk: Option<usize>,
    /// Drop entries below this value.
    #[arg(long, conflicts_with = "dense_diffusion")]
    threshold: Option<f64>,
    /// Keep every entry.
    #[arg(long)]
    dense_diffusion: bool,
    /// Rescale each row to sum 1 after sparsification.
    #[arg(long)]
    renormalize: bool,
    /// Replace S by (S + Sᵀ)/2 after sparsification.
    #[arg(long)]
    symmetrize: bool,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
}

impl DiffusionArgs {
    fn apply(&self, cfg: &mut bgae_core::DiffusionConfig) {
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        let order = self.series_order;
        match self.diffusion_method {
            Some(MethodArg::Auto) => cfg.method = DiffusionMethod::Auto,
            Some(MethodArg::Exact) => cfg.method = DiffusionMethod::ExactInverse,
            Some(MethodArg::Series) => {
                let order = order.unwrap_or_else(|| {
                    bgae_core::diffusion::order_for_tolerance(cfg.alpha, bgae_core::diffusion::DEFAULT_SERIES_TOLERANCE)
                });
                cfg.method = DiffusionMethod::TruncatedSeries { order };
            }
            None => {
                if let Some(order) = order {
                    cfg.method = DiffusionMethod::TruncatedSeries { order };
                }
            }
        }
        if let Some(k) = self.topk {
            cfg.sparsify = Sparsification::TopK { k };
        }
        if let Some(epsilon) = self.threshold {
            cfg.sparsify = Sparsification::Threshold { epsilon };
        }
        if self.dense_diffusion {
            cfg.sparsify = Sparsification::None;
        }
        if self.renormalize {
            cfg.renormalize_after_sparsify = true;
        }
        if self.symmetrize {
            cfg.symmetrize = true;
        }
        match self.kernel {
            Some(KernelArg::Symmetric) => cfg.kernel = Kernel::Symmetric,
            Some(KernelArg::ColumnStochastic) => cfg.kernel = Kernel::ColumnStochastic,
            None => {}
        }
    }
}

/// Flags shared by `train`, `pipeline` and `sweep`. Unset flags keep the
/// value from `--config` (or the built-in default).
#[derive(Args, Clone)]
struct RunArgs {
    /// Dataset bundle directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Start from the configuration stored in this JSON file (a run
    /// manifest or a bare experiment config).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    #[command(flatten)]
    diffusion: DiffusionArgs,
    /// Weight of the covariance loss.
    #[arg(long)]
    beta: Option<f64>,
    /// Weight of the off-diagonal covariance term.
    #[arg(long)]
    lambda: Option<f64>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Inverse-time learning-rate decay per step.
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of the edge split (defaults to --seed).
    #[arg(long)]
    split_seed: Option<u64>,
    /// Positive diffusion pairs per iteration.
    #[arg(long)]
    edge_batch: Option<usize>,
    #[arg(long, value_enum)]
    diffusion_targets: Option<TargetsArg>,
    /// Scale feature rows to unit L1 norm.
    #[arg(long)]
    normalize_features: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recompute the diffusion matrix instead of using the cache.
    #[arg(long)]
    no_cache: bool,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => read_config(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if cfg.dataset.as_os_str().is_empty() {
            return Err(Error::Config("--dataset is required".into()));
        }
        if let Some(t) = self.task {
            cfg.task = t.into();
        }
        if let Some(v) = self.variant {
            cfg.variant = match v {
                VariantArg::Bgae => Variant::Bgae,
                VariantArg::Bvgae => Variant::Bvgae,
            };
        }
        if let Some(f) = self.fusion {
            cfg.fusion = match f {
                FusionArg::Fixed => FusionMode::Fixed,
                FusionArg::Attention => FusionMode::Attention,
            };
        }
        self.diffusion.apply(&mut cfg.diffusion);
        if let Some(b) = self.beta {
            cfg.loss.beta = b;
        }
        if let Some(l) = self.lambda {
            cfg.loss.lambda = l;
        }
        if self.edge_batch.is_some() {
            cfg.loss.edge_batch = self.edge_batch;
        }
        if let Some(t) = self.diffusion_targets {
            cfg.loss.diffusion_targets = match t {
                TargetsArg::Sampled => DiffusionTargets::Sampled,
                TargetsArg::Soft => DiffusionTargets::Soft,
            };
        }
        if let Some(d) = self.dim {
            cfg.dim = d;
        }
        if let Some(v) = self.lr {
            cfg.train.adam.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.train.adam.weight_decay = v;
        }
        if let Some(v) = self.lr_decay {
            cfg.train.adam.lr_decay = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.max_epochs = v;
            cfg.train.patience = cfg.train.patience.min(v);
        }
        if let Some(v) = self.patience {
            cfg.train.patience = v;
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if self.split_seed.is_some() {
            cfg.split_seed = self.split_seed;
        }
        if self.normalize_features {
            cfg.normalize_features = true;
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn cache(&self) -> Option<PathBuf> {
        (!self.no_cache).then(cache_dir)
    }
}

/// Everything needed to replay or evaluate a run.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    config: ExperimentConfig,
    config_hash: String,
    version: String,
    epochs_run: usize,
    best_epoch: usize,
    best_metric: f64,
    stopped_early: bool,
    diffusion_cached: bool,
    wall_seconds: f64,
}

const PARAMS_BIN: &str = "params.bin";
const PARAMS_JSON: &str = "params.json";
const MANIFEST: &str = "manifest.json";
const LOSS_CSV: &str = "loss.csv";
const METRICS: &str = "metrics.json";

fn read_config(path: &Path) -> Result<ExperimentConfig, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(m) = serde_json::from_str::<RunManifest>(&text) {
        return Ok(m.config);
    }
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let body = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

fn output_dir(cfg: &ExperimentConfig) -> Result<PathBuf, Error> {
    let dir = cfg.output.clone().unwrap_or_else(|| {
        PathBuf::from("runs").join(format!("{}-{}-seed{}", cfg.dataset_id(), cfg.task, cfg.train.seed))
    });
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<(), Error> {
    let mut body = String::from(LossRecord::CSV_HEADER);
    body.push('\n');
    for r in history {
        body.push_str(&r.csv_row());
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Trains per `args`, writes checkpoint, loss log and manifest. Returns
/// the output directory and the pipeline result.
fn train_and_save(args: &RunArgs) -> Result<(PathBuf, experiment::PipelineRun), Error> {
    let cfg = args.config()?;
    let bundle = load_bundle(&cfg.dataset)?;
    let dir = output_dir(&cfg)?;
    let cache = args.cache();
    let start = Instant::now();
    let run = experiment::run_pipeline(&cfg, &bundle, cache.as_deref())?;
    checkpoint::save(&run.model, &dir.join(PARAMS_BIN), &dir.join(PARAMS_JSON))?;
    write_loss_csv(&dir.join(LOSS_CSV), &run.state.history)?;
    let manifest = RunManifest {
        config_hash: cfg.hash(),
        config: cfg,
        version: env!("CARGO_PKG_VERSION").to_string(),
        epochs_run: run.state.epochs_run,
        best_epoch: run.state.best_epoch,
        best_metric: run.state.best_metric,
        stopped_early: run.state.stopped_early,
        diffusion_cached: run.diffusion_cached,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    log::info!(
        "trained {} epochs (best {} with metric {:.4}); artifacts in {}",
        manifest.epochs_run,
        manifest.best_epoch,
        manifest.best_metric,
        dir.display()
    );
    Ok((dir, run))
}

fn append_csv(path: &Path, report: &MetricsReport) -> Result<(), Error> {
    let fresh = !path.exists();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    if fresh {
        out.push_str("dataset,task,seed,config_hash,metric,value\n");
    }
    for (name, value) in &report.metrics {
        out.push_str(&format!(
            "{},{},{},{},{name},{value}\n",
            report.dataset, report.task, report.seed, report.config_hash
        ));
    }
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

fn print_json<T: Serialize>(value: &T) {
    let body = serde_json::to_string_pretty(value).expect("value serializes");
    // a closed pipe (`| head`) is not an error
    let _ = writeln!(std::io::stdout().lock(), "{body}");
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Validate { dataset } => {
            let bundle = load_bundle(&dataset)?;
            println!("{}", bundle.summary());
            let ids = bundle.masks().to_ids();
            println!(
                "split: {} train, {} val, {} test nodes",
                ids.train.len(),
                ids.val.len(),
                ids.test.len()
            );
        }
        Command::Diffuse { dataset, diffusion, out } => {
            let bundle = load_bundle(&dataset)?;
            let mut cfg = bgae_core::DiffusionConfig::default();
            diffusion.apply(&mut cfg);
            let s = diffuse(bundle.num_nodes(), bundle.edges(), &cfg)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let sidecar = out.with_extension("json");
            s.write(&out, &sidecar)?;
            println!(
                "wrote {} entries to {} (truncation bound {:e})",
                s.matrix.nnz(),
                out.display(),
                s.approximation_bound
            );
        }
        Command::Train(args) => {
            let (dir, run) = train_and_save(&args)?;
            println!(
                "epochs {} best epoch {} metric {:.6} -> {}",
                run.state.epochs_run,
                run.state.best_epoch,
                run.state.best_metric,
                dir.display()
            );
        }
        Command::Evaluate { run, dataset, csv } => {
            let manifest_path = run.join(MANIFEST);
            let mut cfg = read_config(&manifest_path)?;
            if let Some(d) = dataset {
                cfg.dataset = d;
            }
            let bundle = load_bundle(&cfg.dataset)?;
            let model = checkpoint::load(&run.join(PARAMS_BIN), &run.join(PARAMS_JSON))?;
            let start = Instant::now();
            let prepared = experiment::prepare(&cfg, &bundle, Some(&cache_dir()))?;
            let metrics = experiment::evaluate(&cfg, &bundle, &prepared, &model)?;
            let report = MetricsReport {
                task: cfg.task,
                metrics,
                dataset: cfg.dataset_id(),
                seed: cfg.train.seed,
                config_hash: cfg.hash(),
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            write_json(&run.join(METRICS), &report)?;
            if let Some(csv) = csv {
                append_csv(&csv, &report)?;
            }
            print_json(&report);
        }
        Command::Pipeline(args) => {
            let (dir, run) = train_and_save(&args)?;
            write_json(&dir.join(METRICS), &run.report)?;
            print_json(&run.report);
        }
        Command::Sweep {
            run,
            betas,
            tasks,
            workers,
        } => {
            let cfg = run.config()?;
            let bundle = load_bundle(&cfg.dataset)?;
            let dir = output_dir(&cfg)?;
            let workers = workers
                .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
                .max(1);
            let tasks: Vec<Task> = tasks.into_iter().map(Task::from).collect();
            let cache = run.cache();
            let outcome = experiment::sweep(&cfg, &bundle, &betas, &tasks, workers, cache.as_deref())?;
            let table = sweep_csv(&outcome.rows);
            let path = dir.join("sweep.csv");
            fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
            if !outcome.failures.is_empty() {
                let log_path = dir.join("sweep_failures.txt");
                let body: String = outcome
                    .failures
                    .iter()
                    .map(|(b, e)| format!("beta={b}: {e}\n"))
                    .collect();
                fs::write(&log_path, body).map_err(|e| Error::io(&log_path, e))?;
                eprintln!("{} sweep point(s) failed; see {}", outcome.failures.len(), log_path.display());
            }
            print!("{table}");
        }
        Command::Synth {
            out,
            kind,
            nodes,
            classes,
            p_in,
            p_out,
            features,
            train_per_class,
            val,
            test,
            spread,
            mean_degree,
            seed,
        } => {
            let bundle = match kind {
                SynthKind::Sbm => stochastic_block_model(&SbmConfig {
                    num_nodes: nodes,
                    num_classes: classes,
                    p_in,
                    p_out,
                    num_features: features,
                    train_per_class,
                    num_val: val,
                    num_test: test,
                    seed,
                    ..SbmConfig::default()
                })?,
                SynthKind::Latent => latent_space_graph(&LatentConfig {
                    num_nodes: nodes,
                    num_classes: classes,
                    class_spread: spread,
                    mean_degree,
                    num_features: features,
                    train_per_class,
                    num_val: val,
                    num_test: test,
                    seed,
                    ..LatentConfig::default()
                })?,
            };
            save_bundle(&bundle, &out)?;
            println!("{} -> {}", bundle.summary(), out.display());
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse { .. }
        | Error::Validation(_)
        | Error::Config(_)
        | Error::InvalidInput(_)
        | Error::Shape { .. }
        | Error::InsufficientNonEdges { .. }
        | Error::GraphTooSmall(_)
        | Error::DenseTooLarge { .. } => 2,
        Error::Divergence { .. } | Error::NonFinite { .. } | Error::NonFiniteGradient { .. } => 3,
        Error::Io { .. } | Error::Json { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
