//! The two segmentation model families and their shared plumbing.
//!
//! A [`SegModel`] bundles an architecture config, the vocabulary its
//! embedding rows are indexed by, and the parameter tensors. Both families
//! emit one end-of-segment probability per candidate break of a document.

mod cross_segment;
mod hierarchical;
mod lstm;

use serde::{Deserialize, Serialize};

use crate::corpus::{encode_word, train_wordpiece, SegDocument, Vocabulary};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::numerics::{seeded_init, BoundParams, Graph, Init, ParamStore, Var};
use crate::util::derive_seed;

pub use cross_segment::{cross_segment_forward, extract_context};
pub use hierarchical::{encode_sentence, hier_forward};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchicalConfig {
    pub vocab_size: usize,
    pub emb_dim: usize,
    /// Per-direction width of the sentence encoder.
    pub hidden_dim: usize,
    /// Per-direction width of the document-level encoder.
    pub doc_hidden_dim: usize,
}

impl Default for HierarchicalConfig {
    fn default() -> Self {
        HierarchicalConfig {
            vocab_size: 8000,
            emb_dim: 64,
            hidden_dim: 128,
            doc_hidden_dim: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossSegmentConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_seq: usize,
    /// Word-piece tokens taken from each side of a candidate break.
    pub context: usize,
}

impl Default for CrossSegmentConfig {
    fn default() -> Self {
        CrossSegmentConfig {
            vocab_size: 8000,
            model_dim: 128,
            layers: 4,
            heads: 4,
            ff_dim: 512,
            max_seq: 128,
            context: 62,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelConfig {
    Hierarchical(HierarchicalConfig),
    CrossSegment(CrossSegmentConfig),
}

impl ModelConfig {
    pub fn family(&self) -> &'static str {
        match self {
            ModelConfig::Hierarchical(_) => "hierarchical",
            ModelConfig::CrossSegment(_) => "cross_segment",
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            ModelConfig::Hierarchical(c) => c.vocab_size,
            ModelConfig::CrossSegment(c) => c.vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::ModelConfig(format!("{name} must be positive")))
            } else {
                Ok(())
            }
        };
        match *self {
            ModelConfig::Hierarchical(c) => {
                positive("emb_dim", c.emb_dim)?;
                positive("hidden_dim", c.hidden_dim)?;
                positive("doc_hidden_dim", c.doc_hidden_dim)?;
                if c.vocab_size <= crate::corpus::SPECIAL_TOKENS.len() {
                    return Err(Error::ModelConfig(format!(
                        "vocab_size {} leaves no room beyond the special tokens",
                        c.vocab_size
                    )));
                }
            }
            ModelConfig::CrossSegment(c) => {
                positive("model_dim", c.model_dim)?;
                positive("layers", c.layers)?;
                positive("heads", c.heads)?;
                positive("ff_dim", c.ff_dim)?;
                positive("context", c.context)?;
                if c.vocab_size <= crate::corpus::SPECIAL_TOKENS.len() {
                    return Err(Error::ModelConfig(format!(
                        "vocab_size {} leaves no room beyond the special tokens",
                        c.vocab_size
                    )));
                }
                if c.model_dim % c.heads != 0 {
                    return Err(Error::ModelConfig(format!(
                        "heads ({}) must divide model_dim ({})",
                        c.heads, c.model_dim
                    )));
                }
                if 2 * c.context + 3 > c.max_seq {
                    return Err(Error::ModelConfig(format!(
                        "2*context+3 = {} exceeds max_seq ({})",
                        2 * c.context + 3,
                        c.max_seq
                    )));
                }
            }
        }
        Ok(())
    }

    /// Name, shape and initialization of every parameter.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>, Init)> {
        match self {
            ModelConfig::Hierarchical(c) => hierarchical::param_specs(c),
            ModelConfig::CrossSegment(c) => cross_segment::param_specs(c),
        }
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.param_specs()
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }
}

fn uniform_fan_in(fan_in: usize) -> Init {
    Init::Uniform(1.0 / (fan_in as f32).sqrt())
}

/// Deterministic parameters for `config`; each tensor draws from its own
/// stream derived from `seed` and its name.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut store = ParamStore::new();
    for (name, shape, init) in config.param_specs() {
        let t = seeded_init(&shape, init, derive_seed(seed, &name))?;
        store.insert(name, t);
    }
    Ok(store)
}

/// Token ids of a document, one list per sentence.
pub type EncodedDoc = Vec<Vec<u32>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SegModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
}

impl SegModel {
    /// Fresh model whose vocabulary is built from `docs`.
    pub fn initialize(config: ModelConfig, docs: &[SegDocument], seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = build_vocabulary(&config, docs)?;
        let params = init_model(&config, seed)?;
        Ok(SegModel { config, vocab, params })
    }

    pub fn encode(&self, doc: &SegDocument) -> Result<EncodedDoc> {
        doc.sentences
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut ids = Vec::new();
                match self.config {
                    ModelConfig::Hierarchical(_) => {
                        ids.extend(s.word_tokens.iter().map(|w| self.vocab.id_or_unk(w)));
                    }
                    ModelConfig::CrossSegment(_) => {
                        for w in &s.word_tokens {
                            encode_word(&self.vocab, w, &mut ids);
                        }
                    }
                }
                if ids.is_empty() {
                    return Err(Error::invalid(format!("{}: sentence {i} is empty", doc.doc_id)));
                }
                Ok(ids)
            })
            .collect()
    }

    /// End-of-segment probability for each of the `n - 1` candidate breaks,
    /// as an `(n-1) × 2` softmax node (column 1 is the boundary class).
    pub fn gap_probabilities(&self, g: &mut Graph<'_>, bound: &BoundParams, doc: &EncodedDoc) -> Result<Var> {
        if doc.len() < 2 {
            return Err(Error::invalid(format!(
                "a document needs at least 2 sentences, got {}",
                doc.len()
            )));
        }
        match &self.config {
            ModelConfig::Hierarchical(c) => {
                let probs = hier_forward(g, bound, c, doc)?;
                g.slice(probs, 0, 0, doc.len() - 1)
            }
            ModelConfig::CrossSegment(c) => {
                let mut rows = Vec::with_capacity(doc.len() - 1);
                for gap in 0..doc.len() - 1 {
                    let ids = extract_context(doc, gap, c.context)?;
                    let mask = vec![false; ids.len()];
                    rows.push(cross_segment_forward(g, bound, c, &ids, &mask)?);
                }
                g.concat(&rows, 0)
            }
        }
    }

    /// Per-sentence end-of-segment probabilities. The hierarchical family
    /// scores every sentence; the cross-segment family reports 1 for the
    /// final sentence, which closes the document.
    pub fn predict_document(&self, doc: &SegDocument) -> Result<Vec<f64>> {
        let ids = self.encode(doc)?;
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let mut out: Vec<f64> = match &self.config {
            ModelConfig::Hierarchical(c) => {
                let probs = hier_forward(&mut g, &bound, c, &ids)?;
                return Ok(column1(g.value(probs).data()));
            }
            ModelConfig::CrossSegment(_) => {
                let probs = self.gap_probabilities(&mut g, &bound, &ids)?;
                column1(g.value(probs).data())
            }
        };
        out.push(1.0);
        Ok(out)
    }

    /// Sum of per-break losses of one document times `scale`.
    pub fn document_loss(
        &self,
        g: &mut Graph<'_>,
        bound: &BoundParams,
        doc: &EncodedDoc,
        labels: &[u8],
        loss: &LossSpec,
        scale: f64,
    ) -> Result<(Var, Var)> {
        let probs = self.gap_probabilities(g, bound, doc)?;
        if labels.len() != doc.len() - 1 {
            return Err(Error::invalid(format!(
                "{} gap labels for a {}-sentence document",
                labels.len(),
                doc.len()
            )));
        }
        let l = g.map_sum(probs, |i, p| {
            if i % 2 == 0 {
                return (0.0, 0.0);
            }
            let (v, d) = loss.value_and_grad(f64::from(p), labels[i / 2]);
            (v * scale, d * scale)
        })?;
        Ok((l, probs))
    }
}

fn column1(data: &[f32]) -> Vec<f64> {
    data.chunks(2).map(|r| f64::from(r[1])).collect()
}

fn build_vocabulary(config: &ModelConfig, docs: &[SegDocument]) -> Result<Vocabulary> {
    let words = docs.iter().flat_map(|d| {
        d.sentences
            .iter()
            .flat_map(|s| s.word_tokens.iter().map(String::as_str))
    });
    match config {
        ModelConfig::Hierarchical(c) => Ok(Vocabulary::from_frequencies(words, c.vocab_size)),
        ModelConfig::CrossSegment(c) => train_wordpiece(words, c.vocab_size),
    }
}
