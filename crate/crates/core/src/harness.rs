//! Run configuration, the experiment grid and the segments sweep.
//!
//! Grid and run configs are JSON. Relative corpus paths resolve against the
//! directory holding the config file.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_documents, load_conversations, load_documents, load_wiki, split_corpus, Conversation, CorpusSplits,
    SegDocument, CONVERSATIONAL_SPLIT, STRUCTURED_SPLIT,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_corpus, EvalReport, DEFAULT_THRESHOLD};
use crate::losses::LossSpec;
use crate::models::{HierarchicalConfig, ModelConfig};
use crate::par::{self, Execution};
use crate::training::{finetune, train, Checkpoint, TrainConfig};
use crate::util::stable_hash;

pub const DEFAULT_SEGMENTS: usize = 5;
pub const MIN_SEGMENTS: usize = 2;
pub const MAX_SEGMENTS: usize = 10;

pub const GRID_HEADER: [&str; 11] = [
    "task_id",
    "model",
    "loss",
    "pretrain",
    "finetune",
    "test",
    "precision",
    "recall",
    "f1",
    "epochs",
    "seed",
];
pub const SWEEP_HEADER: [&str; 4] = ["segments", "precision", "recall", "f1"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// Conversations as JSONL; chunked into documents of K segments.
    Chat,
    /// Sectioned text, a file or a directory of files.
    Wiki,
    /// Labeled documents as JSONL.
    Docs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRef {
    pub path: PathBuf,
    pub format: CorpusFormat,
    /// Train / dev / test ratios; by default 80/10/10 for wiki and 60/20/20
    /// otherwise.
    #[serde(default)]
    pub split: Option<[f64; 3]>,
}

impl CorpusRef {
    pub fn new(path: impl Into<PathBuf>, format: CorpusFormat) -> Self {
        CorpusRef {
            path: path.into(),
            format,
            split: None,
        }
    }

    fn ratios(&self) -> [f64; 3] {
        self.split.unwrap_or(match self.format {
            CorpusFormat::Wiki => STRUCTURED_SPLIT,
            CorpusFormat::Chat | CorpusFormat::Docs => CONVERSATIONAL_SPLIT,
        })
    }

    fn resolve(&mut self, base: &Path) {
        if self.path.is_relative() {
            self.path = base.join(&self.path);
        }
    }

    fn check_exists(&self, key: &str) -> Result<()> {
        if self.path.exists() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{key}: path {} does not exist",
                self.path.display()
            )))
        }
    }

    /// Documents of this corpus; chat input is chunked with `segments`.
    pub fn load(&self, segments: usize, seed: u64) -> Result<Vec<SegDocument>> {
        match self.format {
            CorpusFormat::Chat => build_documents(&load_conversations(&self.path)?, segments, seed),
            CorpusFormat::Wiki => load_wiki(&self.path),
            CorpusFormat::Docs => load_documents(&self.path),
        }
    }

    pub fn load_splits(&self, segments: usize, seed: u64) -> Result<CorpusSplits> {
        let docs = self.load(segments, seed)?;
        split_corpus(&docs, self.ratios(), seed)
    }
}

fn default_segments() -> usize {
    DEFAULT_SEGMENTS
}

fn default_epochs() -> usize {
    TrainConfig::default().epochs
}

fn default_batch_size() -> usize {
    TrainConfig::default().batch_size
}

fn default_clip_norm() -> f32 {
    TrainConfig::default().clip_norm
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_model() -> ModelConfig {
    ModelConfig::Hierarchical(HierarchicalConfig::default())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::path_io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn check_segments(k: usize) -> Result<()> {
    if k < MIN_SEGMENTS {
        return Err(Error::Config(format!(
            "segments must be at least {MIN_SEGMENTS}, got {k}"
        )));
    }
    Ok(())
}

/// A single training run: one corpus, one model, one loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusRef,
    /// Segments per document when chunking conversations.
    #[serde(default = "default_segments")]
    pub segments: usize,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub lr: Option<f32>,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f32,
    #[serde(default)]
    pub loss: LossSpec,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.check_exists("corpus.path")?;
        check_segments(self.segments)?;
        self.model.validate()?;
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            clip_norm: self.clip_norm,
            seed: self.seed,
            loss: self.loss,
            threshold: self.threshold,
            execution: self.execution,
        }
    }
}

/// Parse and validate a run config; absent optional fields take defaults.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let mut cfg: RunConfig = read_json(path)?;
    cfg.corpus.resolve(path.parent().unwrap_or(Path::new("")));
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridTask {
    pub task_id: String,
    #[serde(default)]
    pub pretrain: Option<String>,
    #[serde(default)]
    pub finetune: Option<String>,
    pub test: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridModel {
    pub name: String,
    pub config: ModelConfig,
    /// Learning rate for this model; the grid-wide value when absent.
    #[serde(default)]
    pub lr: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridLoss {
    pub name: String,
    pub loss: LossSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub corpora: BTreeMap<String, CorpusRef>,
    pub tasks: Vec<GridTask>,
    pub models: Vec<GridModel>,
    pub losses: Vec<GridLoss>,
    #[serde(default = "default_segments")]
    pub segments: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub lr: Option<f32>,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f32,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
    /// Cells evaluated concurrently.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

fn unique<'a>(what: &str, names: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::Config(format!("duplicate {what} {n:?}")));
        }
    }
    Ok(())
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() || self.models.is_empty() || self.losses.is_empty() {
            return Err(Error::Config("grid needs at least one task, model and loss".into()));
        }
        unique("task_id", self.tasks.iter().map(|t| t.task_id.as_str()))?;
        unique("model name", self.models.iter().map(|m| m.name.as_str()))?;
        unique("loss name", self.losses.iter().map(|l| l.name.as_str()))?;
        for t in &self.tasks {
            for (role, name) in [
                ("pretrain", t.pretrain.as_ref()),
                ("finetune", t.finetune.as_ref()),
                ("test", Some(&t.test)),
            ] {
                if let Some(name) = name {
                    if !self.corpora.contains_key(name) {
                        return Err(Error::Config(format!(
                            "task {}: {role} corpus {name:?} is not defined",
                            t.task_id
                        )));
                    }
                }
            }
        }
        for (name, c) in &self.corpora {
            c.check_exists(&format!("corpora.{name}"))?;
        }
        check_segments(self.segments)?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        for m in &self.models {
            m.config.validate()?;
            self.train_config(m, &self.losses[0], 0).validate()?;
        }
        for l in &self.losses {
            l.loss.validate()?;
        }
        Ok(())
    }

    fn train_config(&self, model: &GridModel, loss: &GridLoss, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: model.lr.or(self.lr),
            clip_norm: self.clip_norm,
            seed,
            loss: loss.loss,
            threshold: self.threshold,
            execution: Execution::Parallel,
        }
    }
}

pub fn load_grid(path: &Path) -> Result<GridSpec> {
    let mut spec: GridSpec = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    for c in spec.corpora.values_mut() {
        c.resolve(&base);
    }
    spec.validate()?;
    Ok(spec)
}

/// Seed of one grid cell, independent of the rest of the grid.
pub fn cell_seed(base: u64, task_id: &str, model: &str, loss: &str) -> u64 {
    stable_hash(&[
        &base.to_le_bytes(),
        task_id.as_bytes(),
        model.as_bytes(),
        loss.as_bytes(),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub task_id: String,
    pub model: String,
    pub loss: String,
    pub pretrain: Option<String>,
    pub finetune: Option<String>,
    pub test: String,
    /// `None` when the cell hit a non-finite loss.
    pub report: Option<EvalReport>,
    pub epochs: usize,
    pub seed: u64,
}

fn metric(v: f64) -> String {
    format!("{v:.6}")
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// Write grid rows under the fixed header.
pub fn write_grid_csv<W: Write>(w: W, rows: &[GridRow]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(GRID_HEADER)?;
    for r in rows {
        let (p, rc, f) = match &r.report {
            Some(rep) => (metric(rep.precision), metric(rep.recall), metric(rep.f1)),
            None => ("failed".into(), "failed".into(), "failed".into()),
        };
        out.write_record([
            r.task_id.clone(),
            r.model.clone(),
            r.loss.clone(),
            r.pretrain.clone().unwrap_or_else(|| "-".into()),
            r.finetune.clone().unwrap_or_else(|| "-".into()),
            r.test.clone(),
            p,
            rc,
            f,
            r.epochs.to_string(),
            r.seed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

struct Cell<'a> {
    task: &'a GridTask,
    model: &'a GridModel,
    loss: &'a GridLoss,
}

fn run_cell(spec: &GridSpec, corpora: &BTreeMap<String, CorpusSplits>, cell: &Cell<'_>) -> Result<GridRow> {
    let seed = cell_seed(spec.seed, &cell.task.task_id, &cell.model.name, &cell.loss.name);
    let cfg = spec.train_config(cell.model, cell.loss, seed);
    let config = &cell.model.config;
    let split = |name: &str| &corpora[name];
    let test = split(&cell.task.test);

    let outcome = (|| -> Result<EvalReport> {
        let pretrained: Option<Checkpoint> = match &cell.task.pretrain {
            Some(p) => Some(train(config, &split(p).train, &split(p).dev, &cfg)?.0),
            None => None,
        };
        let model = match (&cell.task.finetune, pretrained) {
            (Some(f), Some(ckpt)) => finetune(&ckpt, config, &split(f).dev, &[], &cfg)?.0,
            (Some(f), None) => train(config, &split(f).dev, &[], &cfg)?.0,
            (None, Some(ckpt)) => ckpt,
            (None, None) => train(config, &test.train, &test.dev, &cfg)?.0,
        };
        evaluate_corpus(&model, &test.test, spec.threshold, cfg.execution)
    })();

    let report = match outcome {
        Ok(r) => Some(r),
        Err(Error::NonFinite(msg)) => {
            log::warn!(
                "cell {}/{}/{} failed: {msg}",
                cell.task.task_id,
                cell.model.name,
                cell.loss.name
            );
            None
        }
        Err(e) => return Err(e),
    };
    Ok(GridRow {
        task_id: cell.task.task_id.clone(),
        model: cell.model.name.clone(),
        loss: cell.loss.name.clone(),
        pretrain: cell.task.pretrain.clone(),
        finetune: cell.task.finetune.clone(),
        test: cell.task.test.clone(),
        report,
        epochs: spec.epochs,
        seed,
    })
}

/// Run every (task, model, loss) cell and return rows in declared order.
/// All corpora load before any training starts.
pub fn run_grid_rows(spec: &GridSpec) -> Result<Vec<GridRow>> {
    spec.validate()?;
    let mut corpora = BTreeMap::new();
    for (name, c) in &spec.corpora {
        let splits = c
            .load_splits(spec.segments, spec.seed)
            .map_err(|e| Error::Config(format!("corpus {name:?}: {e}")))?;
        corpora.insert(name.clone(), splits);
    }
    let mut cells = Vec::new();
    for task in &spec.tasks {
        for model in &spec.models {
            for loss in &spec.losses {
                cells.push(Cell { task, model, loss });
            }
        }
    }
    let exec = if spec.workers > 1 {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    let rows = par::with_workers(spec.workers, || par::map(exec, &cells, |c| run_cell(spec, &corpora, c)));
    rows.into_iter().collect()
}

/// Run the grid and write its CSV to `output`.
pub fn run_grid(spec: &GridSpec, output: &Path) -> Result<Vec<GridRow>> {
    let rows = run_grid_rows(spec)?;
    let f = std::fs::File::create(output).map_err(|e| Error::path_io(output, e))?;
    write_grid_csv(std::io::BufWriter::new(f), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub segments: usize,
    pub report: EvalReport,
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for r in rows {
        out.write_record([
            r.segments.to_string(),
            metric(r.report.precision),
            metric(r.report.recall),
            metric(r.report.f1),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// For each K in `segments`: chunk, split 60/20/20, train from scratch and
/// score the test split. Every K is checked for enough data up front.
pub fn sweep_segments(
    conversations: &[Conversation],
    segments: std::ops::RangeInclusive<usize>,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    let (lo, hi) = (*segments.start(), *segments.end());
    if lo < MIN_SEGMENTS || hi > MAX_SEGMENTS || lo > hi {
        return Err(Error::Config(format!(
            "segment range {lo}..={hi} must lie within {MIN_SEGMENTS}..={MAX_SEGMENTS}"
        )));
    }
    model.validate()?;
    cfg.validate()?;
    let mut splits = Vec::new();
    for k in segments {
        let docs = build_documents(conversations, k, cfg.seed)
            .and_then(|d| split_corpus(&d, CONVERSATIONAL_SPLIT, cfg.seed))
            .map_err(|e| {
                Error::Config(format!(
                    "K = {k}: {} conversations are not enough ({e})",
                    conversations.len()
                ))
            })?;
        splits.push((k, docs));
    }
    let mut rows = Vec::new();
    for (k, s) in splits {
        let (m, _) = train(model, &s.train, &s.dev, cfg)?;
        let report = evaluate_corpus(&m, &s.test, cfg.threshold, cfg.execution)?;
        log::info!("K = {k}: f1 {:.4}", report.f1);
        rows.push(SweepRow { segments: k, report });
    }
    Ok(rows)
}
