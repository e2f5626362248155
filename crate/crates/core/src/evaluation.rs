//! Boundary decisions and precision / recall / F1 over candidate breaks.

use serde::{Deserialize, Serialize};

use crate::corpus::SegDocument;
use crate::error::{Error, Result};
use crate::models::SegModel;
use crate::par::{self, Execution};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Decisions for the `n - 1` candidate breaks of an `n`-sentence document:
/// 1 iff `p >= threshold`. The final sentence is not a candidate.
pub fn predict_boundaries(probabilities: &[f64], threshold: f64) -> Vec<u8> {
    let n = probabilities.len().saturating_sub(1);
    probabilities[..n].iter().map(|&p| u8::from(p >= threshold)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        EvalReport {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    /// Pool the counts of two reports.
    pub fn merge(&self, other: &EvalReport) -> EvalReport {
        EvalReport::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)
    }
}

pub fn prf1(predictions: &[u8], gold: &[u8]) -> Result<EvalReport> {
    if predictions.len() != gold.len() {
        return Err(Error::invalid(format!(
            "prf1: {} predictions but {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in predictions.iter().zip(gold) {
        match (p == 1, g == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(EvalReport::from_counts(tp, fp, fn_))
}

/// Micro-averaged report: counts pooled over every candidate break of
/// every document before the metrics are derived.
pub fn evaluate_corpus(model: &SegModel, docs: &[SegDocument], threshold: f64, exec: Execution) -> Result<EvalReport> {
    if docs.is_empty() {
        return Err(Error::invalid("evaluate_corpus: empty corpus"));
    }
    let per_doc = par::map(exec, docs, |d| -> Result<EvalReport> {
        if d.len() < 2 {
            return Ok(EvalReport::default());
        }
        let probs = model.predict_document(d)?;
        prf1(&predict_boundaries(&probs, threshold), d.gap_labels())
    });
    let mut total = EvalReport::default();
    for r in per_doc {
        total = total.merge(&r?);
    }
    Ok(total)
}
