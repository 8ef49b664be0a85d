//! Train-source and adapt commands as library functions.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use petal_core::autodiff::BnMode;
use petal_core::bench::{make_source_dataset, SyntheticDataset};
use petal_core::engine::{evaluate, run_lifelong, AdaptState, PetalConfig, RunReport, SegmentSummary};
use petal_core::metrics::MetricMeans;
use petal_core::model::MlpClassifier;
use petal_core::swag::SwagDiagPosterior;
use petal_core::train::train_source;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{
    model_from_checkpoint, model_to_checkpoint, posterior_from_checkpoint, posterior_to_checkpoint, Checkpoint,
};
use crate::config::ExperimentConfig;

pub const MODEL_FILE: &str = "model.ptta";
pub const POSTERIOR_FILE: &str = "posterior.ptta";
pub const TRAIN_SUMMARY_FILE: &str = "train.json";
pub const RUNS_DIR: &str = "runs";

/// Worker threads for augmentation forwards: `PETAL_THREADS` if set, else
/// the available parallelism.
pub fn thread_budget() -> anyhow::Result<usize> {
    match std::env::var("PETAL_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("PETAL_THREADS={v:?} is not a count"))?;
            Ok(n.max(1))
        }
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

pub fn train_data(cfg: &ExperimentConfig) -> SyntheticDataset {
    make_source_dataset(cfg.dataset.train_seed, cfg.dataset.train_per_class)
}

pub fn test_data(cfg: &ExperimentConfig) -> SyntheticDataset {
    make_source_dataset(cfg.dataset.test_seed, cfg.dataset.test_per_class)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epoch_losses: Vec<f64>,
    pub swag_iterates: u64,
    pub clean_test: MetricMeans,
}

/// The loaded source model (at the posterior mean) and its posterior.
#[derive(Debug, Clone)]
pub struct SourceArtifacts {
    pub model: MlpClassifier,
    pub posterior: SwagDiagPosterior,
}

/// Trains, writes both checkpoints and the training summary into `out_dir`.
pub fn cmd_train_source(cfg: &ExperimentConfig) -> anyhow::Result<TrainSummary> {
    cfg.validate()?;
    let trained = train_source(&cfg.train, &train_data(cfg)).context("source training failed")?;
    let test = test_data(cfg);
    let clean_test = evaluate(&trained.model, test.images(), test.labels(), BnMode::Eval)?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    model_to_checkpoint(&trained.model).save(&cfg.out_dir.join(MODEL_FILE))?;
    posterior_to_checkpoint(&trained.posterior).save(&cfg.out_dir.join(POSTERIOR_FILE))?;
    let summary =
        TrainSummary { epoch_losses: trained.epoch_losses, swag_iterates: trained.posterior.iterates(), clean_test };
    write_json(&cfg.out_dir.join(TRAIN_SUMMARY_FILE), &summary)?;
    Ok(summary)
}

pub fn load_source(dir: &Path) -> anyhow::Result<SourceArtifacts> {
    let model_path = dir.join(MODEL_FILE);
    let post_path = dir.join(POSTERIOR_FILE);
    let model = model_from_checkpoint(
        &Checkpoint::load(&model_path).with_context(|| format!("loading {}", model_path.display()))?,
    )?;
    let posterior = posterior_from_checkpoint(
        &Checkpoint::load(&post_path).with_context(|| format!("loading {}", post_path.display()))?,
        &model,
    )?;
    Ok(SourceArtifacts { model, posterior })
}

/// One (method, seed) run as written to `<method>/seed-<seed>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub method: String,
    pub seed: u64,
    /// Segment labels in arrival order.
    pub schedule: Vec<String>,
    pub batch_size: usize,
    pub segments: Vec<SegmentSummary>,
    pub overall: Option<MetricMeans>,
    pub restored_mean: f64,
    pub engine: PetalConfig,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub file: RunFile,
    pub report: RunReport,
    pub final_state: AdaptState,
}

pub fn run_method(
    cfg: &ExperimentConfig,
    source: &SourceArtifacts,
    test: &SyntheticDataset,
    method: &str,
    seed: u64,
    threads: usize,
) -> anyhow::Result<RunOutcome> {
    let engine = cfg.adapt.resolve(method)?;
    if source.model.sizes() != cfg.train.sizes.as_slice() {
        bail!("checkpoint sizes {:?} differ from configured sizes {:?}", source.model.sizes(), cfg.train.sizes);
    }
    let schedule = cfg.schedule.build()?;
    let mut state = AdaptState::new(&source.model, &source.posterior, &engine, seed)?.with_threads(threads);
    let report = run_lifelong(&mut state, &schedule, test, &source.posterior, &engine, seed)
        .with_context(|| format!("method {method}, seed {seed}"))?;
    let file = RunFile {
        method: method.to_string(),
        seed,
        schedule: schedule.segments.iter().map(|s| s.spec.label()).collect(),
        batch_size: schedule.batch_size,
        segments: report.segments.clone(),
        overall: report.overall,
        restored_mean: report.restored_mean,
        engine,
        config: cfg.clone(),
    };
    Ok(RunOutcome { file, report, final_state: state })
}

pub fn run_dir(out_dir: &Path, method: &str) -> PathBuf {
    out_dir.join(RUNS_DIR).join(method)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-batch CSV: step, segment, error, nll, brier, loss, restored.
pub fn write_batches_csv(path: &Path, report: &RunReport) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["step", "segment", "error", "nll", "brier", "loss", "restored"])?;
    for b in &report.batches {
        w.write_record([
            b.step.to_string(),
            b.segment.to_string(),
            b.error.to_string(),
            b.nll.to_string(),
            b.brier.to_string(),
            opt(b.loss),
            b.restored.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_run(out_dir: &Path, outcome: &RunOutcome) -> anyhow::Result<PathBuf> {
    let dir = run_dir(out_dir, &outcome.file.method);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = format!("seed-{}", outcome.file.seed);
    write_json(&dir.join(format!("{stem}.json")), &outcome.file)?;
    write_batches_csv(&dir.join(format!("{stem}.csv")), &outcome.report)?;
    Ok(dir)
}

/// Every configured method on every seed; progress goes to `log`.
pub fn cmd_adapt(cfg: &ExperimentConfig, log: &mut dyn Write) -> anyhow::Result<Vec<RunFile>> {
    cfg.validate()?;
    let source = load_source(cfg.checkpoint_dir())?;
    let test = test_data(cfg);
    let threads = thread_budget()?;
    let mut files = Vec::new();
    for method in &cfg.methods {
        for &seed in &cfg.seeds {
            let started = Instant::now();
            let outcome = run_method(cfg, &source, &test, method, seed, threads)?;
            write_run(&cfg.out_dir, &outcome)?;
            let err = outcome.file.overall.map(|m| m.error).unwrap_or(f64::NAN);
            writeln!(log, "{method:>14} seed {seed}: error {err:6.2}%  ({:.2?})", started.elapsed())?;
            files.push(outcome.file);
        }
    }
    Ok(files)
}
