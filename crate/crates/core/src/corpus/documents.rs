//! Labeled segmentation documents, conversation chunking and corpus splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::formats::Conversation;
use super::tokenize::word_tokenize;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    pub word_tokens: Vec<String>,
}

impl Sentence {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let word_tokens = word_tokenize(&text);
        Sentence { text, word_tokens }
    }
}

/// Sentences with end-of-segment labels (1 marks the last sentence of a
/// segment).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegDocument {
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
    pub labels: Vec<u8>,
    /// Origin of each segment (conversation or file id); may be empty for
    /// documents loaded from labeled JSONL.
    pub source_ids: Vec<String>,
}

impl SegDocument {
    /// Build a document from ordered segments of raw sentences. Sentences
    /// without any token are dropped; segments left empty are dropped.
    pub fn from_segments(doc_id: String, segments: Vec<Vec<String>>, source_ids: Vec<String>) -> Result<Self> {
        let mut sentences = Vec::new();
        let mut labels = Vec::new();
        let mut kept_sources = Vec::new();
        for (i, seg) in segments.into_iter().enumerate() {
            let seg: Vec<Sentence> = seg
                .into_iter()
                .map(Sentence::new)
                .filter(|s| !s.word_tokens.is_empty())
                .collect();
            if seg.is_empty() {
                continue;
            }
            let n = seg.len();
            sentences.extend(seg);
            labels.extend((0..n).map(|j| u8::from(j + 1 == n)));
            if let Some(src) = source_ids.get(i) {
                kept_sources.push(src.clone());
            }
        }
        if sentences.is_empty() {
            return Err(Error::invalid(format!("document `{doc_id}` has no sentences")));
        }
        Ok(SegDocument {
            doc_id,
            sentences,
            labels,
            source_ids: kept_sources,
        })
    }

    /// Build a document from sentence texts and their labels.
    pub fn from_labeled(doc_id: String, sentences: Vec<String>, labels: Vec<u8>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::invalid(format!("document `{doc_id}` has no sentences")));
        }
        if sentences.len() != labels.len() {
            return Err(Error::invalid(format!(
                "document `{doc_id}`: {} sentences but {} labels",
                sentences.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::invalid(format!("document `{doc_id}`: labels must be 0 or 1")));
        }
        if labels.last() != Some(&1) {
            return Err(Error::invalid(format!("document `{doc_id}`: final label must be 1")));
        }
        let sentences: Vec<Sentence> = sentences.into_iter().map(Sentence::new).collect();
        if let Some(i) = sentences.iter().position(|s| s.word_tokens.is_empty()) {
            return Err(Error::invalid(format!("document `{doc_id}`: sentence {i} is empty")));
        }
        Ok(SegDocument {
            doc_id,
            sentences,
            labels,
            source_ids: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn segment_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Sentence count of each segment.
    pub fn segment_lengths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut run = 0;
        for &l in &self.labels {
            run += 1;
            if l == 1 {
                out.push(run);
                run = 0;
            }
        }
        if run > 0 {
            out.push(run);
        }
        out
    }

    /// Labels of the `n - 1` candidate breaks (gap `g` follows sentence `g`).
    pub fn gap_labels(&self) -> &[u8] {
        &self.labels[..self.labels.len().saturating_sub(1)]
    }
}

pub(crate) fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Chunk conversations into documents of `segments` conversations each.
///
/// Conversations are shuffled by `seed`; each consecutive group of
/// `segments` becomes one document and the remainder is dropped.
pub fn build_documents(conversations: &[Conversation], segments: usize, seed: u64) -> Result<Vec<SegDocument>> {
    if segments < 2 {
        return Err(Error::invalid(format!(
            "segments per document must be >= 2, got {segments}"
        )));
    }
    if conversations.len() < segments {
        return Err(Error::invalid(format!(
            "{} conversations cannot fill a document of {segments} segments",
            conversations.len()
        )));
    }
    let order = shuffled_indices(conversations.len(), seed);
    let mut docs = Vec::with_capacity(order.len() / segments);
    for (d, group) in order.chunks_exact(segments).enumerate() {
        let mut segs = Vec::with_capacity(segments);
        let mut ids = Vec::with_capacity(segments);
        for &ci in group {
            let conv = &conversations[ci];
            conv.validate()?;
            segs.push(conv.sentences());
            ids.push(conv.id.clone());
        }
        let doc = SegDocument::from_segments(format!("doc{d:05}"), segs, ids)?;
        if doc.segment_count() != segments {
            return Err(Error::invalid(format!(
                "document {d}: a conversation produced no tokenizable sentence"
            )));
        }
        docs.push(doc);
    }
    Ok(docs)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplits {
    pub train: Vec<SegDocument>,
    pub dev: Vec<SegDocument>,
    pub test: Vec<SegDocument>,
}

/// Default ratios for chat-derived corpora.
pub const CONVERSATIONAL_SPLIT: [f64; 3] = [0.6, 0.2, 0.2];
/// Default ratios for sectioned corpora.
pub const STRUCTURED_SPLIT: [f64; 3] = [0.8, 0.1, 0.1];

/// Shuffle by `seed`, then take `floor(r_dev·N)` dev documents,
/// `floor(r_test·N)` test documents and the remainder for training.
pub fn split_corpus(docs: &[SegDocument], ratios: [f64; 3], seed: u64) -> Result<CorpusSplits> {
    if ratios.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::invalid(format!("split ratios must be positive, got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios must sum to 1, got {total}")));
    }
    let n = docs.len();
    // tolerance keeps e.g. 0.29 * 100 from flooring to 28
    let take = |r: f64| (r * n as f64 + 1e-9).floor() as usize;
    let (n_dev, n_test) = (take(ratios[1]), take(ratios[2]));
    let n_train = n.saturating_sub(n_dev + n_test);
    if n_train == 0 || n_dev == 0 || n_test == 0 {
        return Err(Error::invalid(format!(
            "split of {n} documents by {ratios:?} leaves an empty split ({n_train}/{n_dev}/{n_test})"
        )));
    }
    let order = shuffled_indices(n, seed);
    let pick = |range: &[usize]| range.iter().map(|&i| docs[i].clone()).collect::<Vec<_>>();
    Ok(CorpusSplits {
        dev: pick(&order[..n_dev]),
        test: pick(&order[n_dev..n_dev + n_test]),
        train: pick(&order[n_dev + n_test..]),
    })
}
