//! Hierarchical Bi-LSTM: a word-level sentence encoder with max pooling
//! feeding a document-level Bi-LSTM and a 2-way softmax per sentence.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{BoundParams, Graph, Init, Var};

use super::{lstm, uniform_fan_in, HierarchicalConfig};

const LAYERS: usize = 2;
const EMB_SCALE: f32 = 1.0;

pub(super) fn param_specs(c: &HierarchicalConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut specs = vec![(
        "embedding".to_string(),
        vec![c.vocab_size, c.emb_dim],
        Init::Uniform(EMB_SCALE),
    )];
    specs.extend(lstm::param_specs("sent", LAYERS, c.emb_dim, c.hidden_dim));
    specs.extend(lstm::param_specs("doc", LAYERS, 2 * c.hidden_dim, c.doc_hidden_dim));
    let d = 2 * c.doc_hidden_dim;
    specs.push(("out.w".to_string(), vec![d, 2], uniform_fan_in(d)));
    specs.push(("out.b".to_string(), vec![1, 2], Init::Zeros));
    specs
}

/// Sentence embeddings (`1 × 2·hidden` each) for a batch of equal-length
/// sentences.
fn encode_batch(g: &mut Graph<'_>, bound: &BoundParams, c: &HierarchicalConfig, sents: &[&[u32]]) -> Result<Vec<Var>> {
    let steps = sents[0].len();
    let batch = sents.len();
    let mut ids = Vec::with_capacity(steps * batch);
    for t in 0..steps {
        ids.extend(sents.iter().map(|s| s[t]));
    }
    let emb = bound.var("embedding")?;
    let x = g.gather_rows(emb, &ids)?;
    let top = lstm::bilstm(g, bound, "sent", LAYERS, x, steps, batch, c.hidden_dim)?;
    let mut out = Vec::with_capacity(batch);
    for b in 0..batch {
        let rows: Vec<u32> = (0..steps).map(|t| (t * batch + b) as u32).collect();
        let seq = if batch == 1 { top } else { g.gather_rows(top, &rows)? };
        out.push(g.max_axis0(seq)?);
    }
    Ok(out)
}

/// Max-pooled top-layer Bi-LSTM states of one sentence, width `2·hidden`.
pub fn encode_sentence(g: &mut Graph<'_>, bound: &BoundParams, c: &HierarchicalConfig, ids: &[u32]) -> Result<Var> {
    if ids.is_empty() {
        return Err(Error::invalid("encode_sentence: empty sentence"));
    }
    Ok(encode_batch(g, bound, c, &[ids])?[0])
}

/// Per-sentence class probabilities, an `n × 2` softmax node whose column
/// 1 is the end-of-segment probability.
pub fn hier_forward(g: &mut Graph<'_>, bound: &BoundParams, c: &HierarchicalConfig, doc: &[Vec<u32>]) -> Result<Var> {
    if doc.len() < 2 {
        return Err(Error::invalid(format!(
            "hier_forward: a document needs at least 2 sentences, got {}",
            doc.len()
        )));
    }
    if let Some(i) = doc.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("hier_forward: sentence {i} is empty")));
    }
    // sentences of equal length share one batched encoder pass
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in doc.iter().enumerate() {
        by_len.entry(s.len()).or_default().push(i);
    }
    let mut embeddings: Vec<Option<Var>> = vec![None; doc.len()];
    for idx in by_len.values() {
        let sents: Vec<&[u32]> = idx.iter().map(|&i| doc[i].as_slice()).collect();
        for (&i, e) in idx.iter().zip(encode_batch(g, bound, c, &sents)?) {
            embeddings[i] = Some(e);
        }
    }
    let embeddings: Vec<Var> = embeddings
        .into_iter()
        .map(|e| e.expect("every sentence encoded"))
        .collect();
    let seq = g.concat(&embeddings, 0)?;
    let top = lstm::bilstm(g, bound, "doc", LAYERS, seq, doc.len(), 1, c.doc_hidden_dim)?;
    let w = bound.var("out.w")?;
    let b = bound.var("out.b")?;
    let logits = g.matmul(top, w)?;
    let logits = g.add_row(logits, b)?;
    g.softmax(logits)
}
