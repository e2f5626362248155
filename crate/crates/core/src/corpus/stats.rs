use serde::Serialize;

use super::documents::SegDocument;
use crate::error::{Error, Result};

/// Population statistics of a document corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetProfile {
    pub documents: usize,
    pub sentences: usize,
    pub segments: usize,
    /// Words per sentence.
    pub sentence_len_mean: f64,
    pub sentence_len_std: f64,
    /// Sentences per segment.
    pub segment_len_mean: f64,
    pub segment_len_std: f64,
    /// Fraction of candidate breaks (all gaps but the document end) that
    /// are true boundaries.
    pub boundary_rate: f64,
}

fn mean_std(xs: impl Iterator<Item = usize> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().map(|x| x as f64).sum::<f64>() / n;
    let var = xs.map(|x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn corpus_stats(docs: &[SegDocument]) -> Result<DatasetProfile> {
    let sentences: usize = docs.iter().map(SegDocument::len).sum();
    if sentences == 0 {
        return Err(Error::invalid("corpus_stats: corpus has no sentences"));
    }
    let words = docs
        .iter()
        .flat_map(|d| d.sentences.iter().map(|s| s.word_tokens.len()));
    let (sentence_len_mean, sentence_len_std) = mean_std(words);
    let seg_lens: Vec<usize> = docs.iter().flat_map(SegDocument::segment_lengths).collect();
    let (segment_len_mean, segment_len_std) = mean_std(seg_lens.iter().copied());
    let gaps: usize = docs.iter().map(|d| d.gap_labels().len()).sum();
    let internal: usize = docs
        .iter()
        .map(|d| d.gap_labels().iter().filter(|&&l| l == 1).count())
        .sum();
    Ok(DatasetProfile {
        documents: docs.len(),
        sentences,
        segments: seg_lens.len(),
        sentence_len_mean,
        sentence_len_std,
        segment_len_mean,
        segment_len_std,
        boundary_rate: if gaps == 0 { 0.0 } else { internal as f64 / gaps as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(sentences: &[&str], labels: &[u8]) -> SegDocument {
        SegDocument::from_labeled(
            "d".into(),
            sentences.iter().map(|s| s.to_string()).collect(),
            labels.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn population_statistics() {
        let d = doc(&["a b", "a b c d", "a b c", "x y z"], &[0, 1, 0, 1]);
        let p = corpus_stats(&[d]).unwrap();
        assert!((p.sentence_len_mean - 3.0).abs() < 1e-12);
        assert!((p.sentence_len_std - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(p.segments, 2);
        assert!((p.segment_len_mean - 2.0).abs() < 1e-12);
        assert!((p.boundary_rate - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_sentence_and_empty() {
        let p = corpus_stats(&[doc(&["one two"], &[1])]).unwrap();
        assert_eq!(p.sentence_len_std, 0.0);
        assert!(corpus_stats(&[]).is_err());
    }
}
