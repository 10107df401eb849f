//! Experiment orchestration: resolved run configs, the training/evaluation
//! regimes, command implementations, and the run manifest that records
//! everything needed to reproduce a run.

use crate::analysis::{dump_attention, error_report, gate_contribution, Grouping};
use crate::checkpoint::{self, AnyCheckpoint};
use crate::data::{
    load_dataset, majority_class, synth_generate, write_dataset, Dataset, PoiCounts, Split,
    SynthConfig,
};
use crate::error::{DataError, Error};
use crate::matrix::{Precision, Scalar};
use crate::metrics::{compute_metrics, summarize, MetricSummary, Metrics};
use crate::models::{GateMode, Granularity, ModelConfig, ModelKind, ModelParams};
use crate::train::{predict_split, run_seeds, Checkpoint, SeedRun, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const RUN_CONFIG_SCHEMA: &str = "mmfuse-run.v1";

/// Which records train and which records evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Train and evaluate on everything, imputing missing images.
    #[default]
    All,
    /// Keep only genuinely-paired records in every split.
    PairedAll,
    /// Train on paired records only; evaluate on all records.
    PairedTrain,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::All, Regime::PairedAll, Regime::PairedTrain];

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::All => "all",
            Regime::PairedAll => "paired-all",
            Regime::PairedTrain => "paired-train",
        }
    }
}

impl clap::ValueEnum for Regime {
    fn value_variants<'a>() -> &'a [Self] {
        &Regime::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Regime::ALL
            .iter()
            .find(|r| r.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown regime {s:?} (expected all|paired-all|paired-train)"))
    }
}

/// A fully resolved experiment configuration. Feature widths and the class
/// count come from the dataset header at run time; everything else is
/// explicit here so the manifest echo pins the whole run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    pub model: ModelKind,
    pub dataset: PathBuf,
    #[serde(default)]
    pub regime: Regime,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    /// Fused hidden width.
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    /// Attention projection width; defaults to the hidden width.
    #[serde(default)]
    pub proj_dim: Option<usize>,
    #[serde(default = "default_gate_mode")]
    pub gate_mode: GateMode,
    #[serde(default = "default_granularity")]
    pub granularity: Granularity,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_schema() -> String {
    RUN_CONFIG_SCHEMA.to_string()
}
fn default_precision() -> Precision {
    Precision::Single
}
fn default_hidden() -> usize {
    200
}
fn default_gate_mode() -> GateMode {
    GateMode::Vector
}
fn default_granularity() -> Granularity {
    Granularity::Sequence
}

impl RunConfig {
    pub fn new(model: ModelKind, dataset: PathBuf) -> Self {
        RunConfig {
            schema: default_schema(),
            model,
            dataset,
            regime: Regime::All,
            precision: default_precision(),
            hidden_dim: default_hidden(),
            proj_dim: None,
            gate_mode: default_gate_mode(),
            granularity: default_granularity(),
            train: TrainConfig::default(),
            out: None,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, Error> {
        let cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if cfg.schema != RUN_CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "config schema {:?} is not {RUN_CONFIG_SCHEMA:?}",
                cfg.schema
            )));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.train.validate().map_err(Error::Config)?;
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Model config for a dataset header.
    pub fn model_config(&self, data: &Dataset) -> ModelConfig {
        ModelConfig {
            d_t: data.header.d_t,
            d_v: data.header.d_v,
            d: self.hidden_dim,
            d_proj: self.proj_dim,
            classes: data.header.classes.len(),
            dropout: self.train.dropout,
            gate_mode: self.gate_mode,
            granularity: self.granularity,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactHash {
    pub path: String,
    pub sha256: String,
}

/// Written atomically at the end of a run; the config echo plus seeds fully
/// determine the artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<ArtifactHash>,
    pub wall_clock_secs: f64,
}

/// Per-seed metrics file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsFile {
    pub format: String,
    pub model: ModelKind,
    pub regime: Regime,
    pub seed: Option<u64>,
    pub metrics: Metrics,
}

/// Cross-seed summary file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryFile {
    pub format: String,
    pub model: ModelKind,
    pub regime: Regime,
    pub seeds: Vec<u64>,
    pub summary: MetricSummary,
    pub per_seed: Vec<SeedScore>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
}

pub struct TrainArtifacts {
    pub out_dir: PathBuf,
    pub summary: MetricSummary,
    pub per_seed_metrics: Vec<(u64, Metrics)>,
    pub manifest_path: PathBuf,
}

fn ensure_out_dir(out: &Path, force: bool) -> Result<(), Error> {
    if out.exists() {
        let non_empty = std::fs::read_dir(out)?.next().is_some();
        if non_empty && !force {
            return Err(Error::OutputExists { path: out.display().to_string() });
        }
    }
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Apply regime filtering for training and evaluation views of a dataset.
pub fn regime_views(data: &Dataset, regime: Regime) -> (Dataset, Dataset) {
    match regime {
        Regime::All => (data.clone(), data.clone()),
        Regime::PairedAll => {
            let filtered = data.filter_paired(&Split::ALL);
            (filtered.clone(), filtered)
        }
        Regime::PairedTrain => (data.filter_paired(&[Split::Train]), data.clone()),
    }
}

/// Generate a synthetic dataset directory.
pub fn cmd_synth(cfg: &SynthConfig, out: &Path, force: bool) -> Result<Dataset, Error> {
    ensure_out_dir(out, force)?;
    let data = synth_generate(cfg)?;
    write_dataset(out, &data)?;
    log::info!(
        "wrote synthetic dataset: {} train / {} dev / {} test records",
        data.split_len(Split::Train),
        data.split_len(Split::Dev),
        data.split_len(Split::Test)
    );
    Ok(data)
}

/// Load and validate a dataset directory, returning a one-line summary.
pub fn cmd_ingest_validate(dir: &Path) -> Result<String, Error> {
    let data = load_dataset(dir)?;
    let mut parts = Vec::new();
    for split in Split::ALL {
        parts.push(format!(
            "{} {} ({} paired)",
            data.split_len(split),
            split.as_str(),
            data.paired_count(split)
        ));
    }
    Ok(format!(
        "valid MMFV1 dataset: d_t={} d_v={} granularity={:?} classes={} | {}",
        data.header.d_t,
        data.header.d_v,
        data.header.granularity,
        data.header.classes.len(),
        parts.join(", ")
    ))
}

/// Train (or directly evaluate, for the majority model) under a config.
pub fn cmd_train(config: &RunConfig, force: bool) -> Result<TrainArtifacts, Error> {
    config.validate()?;
    let started = Instant::now();
    let out = config
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory configured".into()))?;
    ensure_out_dir(&out, force)?;

    let data = load_dataset(&config.dataset)?;
    let (train_view, eval_view) = regime_views(&data, config.regime);
    for split in [Split::Train, Split::Dev] {
        if train_view.split_len(split) == 0 {
            return Err(Error::Data(DataError::EmptySplit {
                split: format!("{} (after regime {})", split.as_str(), config.regime.as_str()),
            }));
        }
    }
    let model_cfg = config.model_config(&data);
    model_cfg.validate().map_err(Error::Config)?;

    let mut artifact_paths: Vec<PathBuf> = Vec::new();
    let seeds = config.train.effective_seeds();
    let (per_seed, summary) = if config.model == ModelKind::Majority {
        majority_run(config, &model_cfg, &train_view, &eval_view, &out, &mut artifact_paths)?
    } else {
        match config.precision {
            Precision::Single => trainable_run::<f32>(
                config,
                &model_cfg,
                &train_view,
                &eval_view,
                &out,
                &mut artifact_paths,
            )?,
            Precision::Double => trainable_run::<f64>(
                config,
                &model_cfg,
                &train_view,
                &eval_view,
                &out,
                &mut artifact_paths,
            )?,
        }
    };

    let summary_file = SummaryFile {
        format: "summary.v1".to_string(),
        model: config.model,
        regime: config.regime,
        seeds: seeds.clone(),
        summary: summary.clone(),
        per_seed: per_seed
            .iter()
            .map(|(seed, m)| SeedScore {
                seed: *seed,
                macro_f1: m.macro_f1,
                macro_precision: m.macro_precision,
                macro_recall: m.macro_recall,
            })
            .collect(),
    };
    let summary_path = out.join("summary.json");
    write_json_atomic(&summary_path, &summary_file)?;
    artifact_paths.push(summary_path);

    let mut artifacts = Vec::new();
    for p in &artifact_paths {
        artifacts.push(ArtifactHash {
            path: p.strip_prefix(&out).unwrap_or(p).display().to_string(),
            sha256: sha256_file(p)?,
        });
    }
    let manifest = RunManifest {
        format: "run-manifest.v1".to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: RunConfig { out: Some(out.clone()), ..config.clone() },
        seeds,
        artifacts,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    let manifest_path = out.join("run_manifest.json");
    write_json_atomic(&manifest_path, &manifest)?;
    log::info!(
        "run complete: mean macro F1 {:.4} (+/- {:.4})",
        manifest_f1(&summary),
        summary.std_f1
    );
    Ok(TrainArtifacts {
        out_dir: out,
        summary,
        per_seed_metrics: per_seed,
        manifest_path,
    })
}

fn manifest_f1(s: &MetricSummary) -> f64 {
    s.mean_f1
}

fn majority_run(
    config: &RunConfig,
    model_cfg: &ModelConfig,
    train_view: &Dataset,
    eval_view: &Dataset,
    out: &Path,
    artifacts: &mut Vec<PathBuf>,
) -> Result<(Vec<(u64, Metrics)>, MetricSummary), Error> {
    let counts = train_view.label_counts(Split::Train);
    let class = majority_class(&counts);
    let golds: Vec<usize> = eval_view.split(Split::Test).map(|r| r.label).collect();
    let preds = vec![class; golds.len()];
    let metrics = compute_metrics(&preds, &golds, eval_view.header.classes.names())?;

    let ckpt = Checkpoint::<f32> {
        kind: ModelKind::Majority,
        model_config: model_cfg.clone(),
        train_config: config.train.clone(),
        params: ModelParams::Majority { class },
        average_image: None,
        classes: eval_view.header.classes.clone(),
        best_epoch: 0,
        best_dev_loss: 0.0,
    };
    let ckpt_path = out.join("checkpoint.mmck");
    checkpoint::save(&ckpt_path, &ckpt)?;
    artifacts.push(ckpt_path);

    let metrics_path = out.join("metrics.json");
    write_json_atomic(
        &metrics_path,
        &MetricsFile {
            format: "metrics.v1".to_string(),
            model: config.model,
            regime: config.regime,
            seed: None,
            metrics: metrics.clone(),
        },
    )?;
    artifacts.push(metrics_path);
    let summary = summarize(std::slice::from_ref(&metrics));
    Ok((vec![(0, metrics)], summary))
}

fn trainable_run<F: Scalar>(
    config: &RunConfig,
    model_cfg: &ModelConfig,
    train_view: &Dataset,
    eval_view: &Dataset,
    out: &Path,
    artifacts: &mut Vec<PathBuf>,
) -> Result<(Vec<(u64, Metrics)>, MetricSummary), Error> {
    let (runs, summary): (Vec<SeedRun<F>>, MetricSummary) =
        run_seeds::<F>(config.model, train_view, eval_view, model_cfg, &config.train)
            .map_err(Error::Train)?;
    let mut per_seed = Vec::new();
    for run in &runs {
        let ckpt_path = out.join(format!("checkpoint_seed_{}.mmck", run.seed));
        checkpoint::save(&ckpt_path, &run.checkpoint)?;
        artifacts.push(ckpt_path);
        let metrics_path = out.join(format!("metrics_seed_{}.json", run.seed));
        write_json_atomic(
            &metrics_path,
            &MetricsFile {
                format: "metrics.v1".to_string(),
                model: config.model,
                regime: config.regime,
                seed: Some(run.seed),
                metrics: run.metrics.clone(),
            },
        )?;
        artifacts.push(metrics_path);
        let history_path = out.join(format!("history_seed_{}.json", run.seed));
        write_json_atomic(&history_path, &run.history)?;
        artifacts.push(history_path);
        per_seed.push((run.seed, run.metrics.clone()));
    }
    Ok((per_seed, summary))
}

/// Evaluate a checkpoint against a dataset under a regime.
pub fn cmd_evaluate(
    ckpt_path: &Path,
    data_dir: &Path,
    regime: Regime,
    out: &Path,
    force: bool,
) -> Result<Metrics, Error> {
    ensure_out_dir(out, force)?;
    let data = load_dataset(data_dir)?;
    let (_, eval_view) = regime_views(&data, regime);
    let loaded = checkpoint::load(ckpt_path)?;
    let metrics = match &loaded {
        AnyCheckpoint::Single(c) => evaluate_checkpoint(c, &eval_view)?,
        AnyCheckpoint::Double(c) => evaluate_checkpoint(c, &eval_view)?,
    };
    write_json_atomic(
        &out.join("metrics.json"),
        &MetricsFile {
            format: "metrics.v1".to_string(),
            model: loaded.kind(),
            regime,
            seed: None,
            metrics: metrics.clone(),
        },
    )?;
    Ok(metrics)
}

/// Predictions and metrics for a checkpoint over a dataset's test split.
pub fn evaluate_checkpoint<F: Scalar>(
    ckpt: &Checkpoint<F>,
    data: &Dataset,
) -> Result<Metrics, Error> {
    let (preds, golds) = checkpoint_predictions(ckpt, data, Split::Test)?;
    Ok(compute_metrics(&preds, &golds, ckpt.classes.names())?)
}

fn checkpoint_predictions<F: Scalar>(
    ckpt: &Checkpoint<F>,
    data: &Dataset,
    split: Split,
) -> Result<(Vec<usize>, Vec<usize>), Error> {
    if let ModelParams::Majority { class } = &ckpt.params {
        let golds: Vec<usize> = data.split(split).map(|r| r.label).collect();
        return Ok((vec![*class; golds.len()], golds));
    }
    predict_split::<F>(
        &ckpt.params,
        &ckpt.model_config,
        data,
        split,
        ckpt.average_image.as_ref(),
    )
    .map_err(Error::Train)
}

pub enum Analysis {
    Gate { grouping: Grouping },
    Attention,
    Errors,
}

/// Dispatch one analysis over a checkpoint and dataset split, writing the
/// report under `out`.
pub fn cmd_analyze(
    ckpt_path: &Path,
    data_dir: &Path,
    split: Split,
    analysis: Analysis,
    out: &Path,
    force: bool,
) -> Result<PathBuf, Error> {
    ensure_out_dir(out, force)?;
    let data = load_dataset(data_dir)?;
    let loaded = checkpoint::load(ckpt_path)?;
    match loaded {
        AnyCheckpoint::Single(c) => analyze_typed(&c, &data, split, analysis, out),
        AnyCheckpoint::Double(c) => analyze_typed(&c, &data, split, analysis, out),
    }
}

fn analyze_typed<F: Scalar>(
    ckpt: &Checkpoint<F>,
    data: &Dataset,
    split: Split,
    analysis: Analysis,
    out: &Path,
) -> Result<PathBuf, Error> {
    match analysis {
        Analysis::Gate { grouping } => {
            let report =
                gate_contribution(ckpt, data, split, grouping).map_err(Error::Train)?;
            let path = out.join("gate_report.json");
            write_json_atomic(&path, &report)?;
            Ok(path)
        }
        Analysis::Attention => {
            let records = dump_attention(ckpt, data, split).map_err(Error::Train)?;
            let path = out.join("attention.jsonl");
            let mut body = String::new();
            for r in &records {
                body.push_str(&serde_json::to_string(r)?);
                body.push('\n');
            }
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, body)?;
            std::fs::rename(&tmp, &path)?;
            Ok(path)
        }
        Analysis::Errors => {
            let (preds, golds) = checkpoint_predictions(ckpt, data, split)?;
            let ids: Vec<String> = data.split(split).map(|r| r.id.clone()).collect();
            let metrics = compute_metrics(&preds, &golds, ckpt.classes.names())?;
            let report = error_report(&metrics, &preds, &golds, &ids, ckpt.classes.names());
            let path = out.join("errors.json");
            write_json_atomic(&path, &report)?;
            Ok(path)
        }
    }
}

/// The majority baseline over the bundled (or a supplied) statistics
/// fixture: expand the test counts into gold labels, predict the train
/// majority everywhere, and report macro metrics.
pub fn cmd_baseline(counts: &PoiCounts, out: Option<&Path>, force: bool) -> Result<Metrics, Error> {
    let catalog = counts.catalog()?;
    let train = counts.tweet_counts(Split::Train);
    let test = counts.tweet_counts(Split::Test);
    let class = majority_class(&train);
    let golds: Vec<usize> = test
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat(c).take(n))
        .collect();
    let preds = vec![class; golds.len()];
    let metrics = compute_metrics(&preds, &golds, catalog.names())?;
    if let Some(out) = out {
        ensure_out_dir(out, force)?;
        write_json_atomic(
            &out.join("metrics.json"),
            &MetricsFile {
                format: "metrics.v1".to_string(),
                model: ModelKind::Majority,
                regime: Regime::All,
                seed: None,
                metrics: metrics.clone(),
            },
        )?;
    }
    Ok(metrics)
}
