//! Mini-batch training, fine-tuning and checkpoint persistence.

mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::corpus::SegDocument;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_corpus, EvalReport, DEFAULT_THRESHOLD};
use crate::losses::LossSpec;
use crate::models::{EncodedDoc, ModelConfig, SegModel};
use crate::numerics::{adam_step, clip_global_norm, AdamConfig, AdamState, Gradients, Graph};
use crate::par::{self, Execution};
use crate::util::derive_seed;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};

/// Saved model state: architecture, vocabulary and parameters.
pub type Checkpoint = SegModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Documents per optimizer step.
    pub batch_size: usize,
    /// Adam step size; the family default when absent.
    pub lr: Option<f32>,
    pub clip_norm: f32,
    pub seed: u64,
    pub loss: LossSpec,
    /// Decision threshold for the per-epoch dev evaluation.
    pub threshold: f64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            lr: None,
            clip_norm: 5.0,
            seed: 0,
            loss: LossSpec::Ce,
            threshold: DEFAULT_THRESHOLD,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("lr must be positive, got {lr}")));
            }
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        self.loss.validate()
    }

    pub fn learning_rate(&self, config: &ModelConfig) -> f32 {
        self.lr.unwrap_or(match config {
            ModelConfig::Hierarchical(_) => 5e-3,
            ModelConfig::CrossSegment(_) => 1e-3,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-break training loss over the epoch.
    pub train_loss: f64,
    pub dev: Option<EvalReport>,
}

/// Train a fresh model on `train` and return the final-epoch parameters.
pub fn train(
    config: &ModelConfig,
    train: &[SegDocument],
    dev: &[SegDocument],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    cfg.validate()?;
    let usable = usable_documents(train)?;
    let usable: Vec<SegDocument> = usable.into_iter().cloned().collect();
    let mut model = SegModel::initialize(*config, &usable, derive_seed(cfg.seed, "init"))?;
    let history = run_epochs(&mut model, &usable, dev, cfg)?;
    Ok((model, history))
}

/// Continue training `ckpt` on new documents with its own vocabulary;
/// words it never saw map to UNK. `expected` must describe the same
/// architecture as the checkpoint.
pub fn finetune(
    ckpt: &Checkpoint,
    expected: &ModelConfig,
    train: &[SegDocument],
    dev: &[SegDocument],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    cfg.validate()?;
    if ckpt.config.family() != expected.family() {
        return Err(Error::ModelConfig(format!(
            "family mismatch: checkpoint is {}, run expects {}",
            ckpt.config.family(),
            expected.family()
        )));
    }
    if ckpt.config != *expected {
        return Err(Error::ModelConfig(format!(
            "architecture mismatch: checkpoint {:?}, run expects {expected:?}",
            ckpt.config
        )));
    }
    let usable: Vec<SegDocument> = usable_documents(train)?.into_iter().cloned().collect();
    let mut model = ckpt.clone();
    let history = run_epochs(&mut model, &usable, dev, cfg)?;
    Ok((model, history))
}

fn usable_documents(docs: &[SegDocument]) -> Result<Vec<&SegDocument>> {
    let mut out = Vec::with_capacity(docs.len());
    for d in docs {
        if d.len() < 2 {
            log::warn!(
                "skipping document {}: {} sentence(s), need at least 2",
                d.doc_id,
                d.len()
            );
        } else {
            out.push(d);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("no training document has at least 2 sentences"));
    }
    Ok(out)
}

struct Example {
    ids: EncodedDoc,
    labels: Vec<u8>,
}

fn run_epochs(
    model: &mut SegModel,
    docs: &[SegDocument],
    dev: &[SegDocument],
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    let mut examples = Vec::with_capacity(docs.len());
    for d in docs {
        match model.encode(d) {
            Ok(ids) => examples.push(Example {
                ids,
                labels: d.gap_labels().to_vec(),
            }),
            Err(e) => log::warn!("skipping document {}: {e}", d.doc_id),
        }
    }
    if examples.is_empty() {
        return Err(Error::invalid("every training document was skipped"));
    }
    let adam = AdamConfig::with_lr(cfg.learning_rate(&model.config));
    let mut state = AdamState::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = crate::corpus::shuffled_indices(examples.len(), derive_seed(cfg.seed, &format!("epoch{epoch}")));
        let mut loss_sum = 0.0;
        let mut breaks = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let n: usize = batch.iter().map(|e| e.labels.len()).sum();
            let (loss, mut grads) = batch_gradients(model, &batch, &cfg.loss, n, cfg.execution)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss {loss} in epoch {epoch}")));
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam_step(&mut model.params, &grads, &mut state, &adam)?;
            loss_sum += loss * n as f64;
            breaks += n;
        }
        let train_loss = loss_sum / breaks as f64;
        let dev = if dev.is_empty() {
            None
        } else {
            Some(evaluate_corpus(model, dev, cfg.threshold, cfg.execution)?)
        };
        log::info!(
            "epoch {}: train loss {train_loss:.6}{}",
            epoch + 1,
            dev.map(|r| format!(", dev F1 {:.4}", r.f1)).unwrap_or_default()
        );
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            dev,
        });
    }
    Ok(history)
}

/// Mean per-break loss of `model` over the usable documents of `docs`.
pub fn corpus_loss(model: &SegModel, docs: &[SegDocument], loss: &LossSpec, exec: Execution) -> Result<f64> {
    loss.validate()?;
    let usable = usable_documents(docs)?;
    let examples: Vec<Example> = usable
        .iter()
        .map(|d| {
            Ok(Example {
                ids: model.encode(d)?,
                labels: d.gap_labels().to_vec(),
            })
        })
        .collect::<Result<_>>()?;
    let per_doc = par::map(exec, &examples, |ex| -> Result<f64> {
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g);
        let (l, _) = model.document_loss(&mut g, &bound, &ex.ids, &ex.labels, loss, 1.0)?;
        Ok(f64::from(g.value(l).item()))
    });
    let breaks: usize = examples.iter().map(|e| e.labels.len()).sum();
    let mut total = 0.0;
    for l in per_doc {
        total += l?;
    }
    Ok(total / breaks as f64)
}

/// Mean per-break loss of a batch and its gradient. Documents are
/// differentiated independently and summed in batch order.
fn batch_gradients(
    model: &SegModel,
    batch: &[&Example],
    loss: &LossSpec,
    breaks: usize,
    exec: Execution,
) -> Result<(f64, Gradients)> {
    let scale = 1.0 / breaks as f64;
    let parts = par::map(exec, batch, |ex| -> Result<(f64, Gradients)> {
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g);
        let (l, _) = model.document_loss(&mut g, &bound, &ex.ids, &ex.labels, loss, scale)?;
        Ok((f64::from(g.value(l).item()), g.backward(l)?))
    });
    let mut total = 0.0;
    let mut sum: Option<Gradients> = None;
    for part in parts {
        let (l, grads) = part?;
        total += l;
        match &mut sum {
            None => sum = Some(grads),
            Some(acc) => {
                for (name, g) in grads {
                    if let Some(a) = acc.get_mut(&name) {
                        a.add_assign(&g);
                    }
                }
            }
        }
    }
    Ok((total, sum.unwrap_or_default()))
}
