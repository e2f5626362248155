//! Word-piece inventory: frequency-merge training and greedy longest-match
//! encoding. Continuation pieces carry a `##` prefix.

use std::collections::{BTreeSet, HashMap};

use super::tokenize::word_tokenize;
use super::vocab::{Vocabulary, SPECIAL_TOKENS, UNK};
use crate::error::{Error, Result};

const CONT: &str = "##";

fn symbols(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| if i == 0 { c.to_string() } else { format!("{CONT}{c}") })
        .collect()
}

fn merged(left: &str, right: &str) -> String {
    format!("{left}{}", right.strip_prefix(CONT).unwrap_or(right))
}

/// Learn a word-piece vocabulary of at most `vocab_size` entries.
///
/// Starts from the specials plus every observed character (word-initial
/// and `##` continuation forms), then repeatedly merges the most frequent
/// adjacent pair, breaking ties by the lexicographically smallest pair,
/// until the size is reached or no pair occurs more than once.
pub fn train_wordpiece<'a, I>(sentences: I, vocab_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut freq: HashMap<String, u64> = HashMap::new();
    for s in sentences {
        for w in word_tokenize(s) {
            *freq.entry(w).or_default() += 1;
        }
    }
    if freq.is_empty() {
        return Err(Error::invalid("train_wordpiece: empty corpus"));
    }
    // sorted for a deterministic merge application order
    let mut words: Vec<(Vec<String>, u64)> = freq.into_iter().map(|(w, c)| (symbols(&w), c)).collect();
    words.sort();

    let alphabet: BTreeSet<&String> = words.iter().flat_map(|(s, _)| s.iter()).collect();
    let needed = alphabet.len() + SPECIAL_TOKENS.len();
    if vocab_size < needed {
        return Err(Error::invalid(format!(
            "vocab_size {vocab_size} is below the {needed} entries needed for specials and characters"
        )));
    }
    let mut vocab = Vocabulary::new();
    for sym in alphabet {
        vocab.insert(sym);
    }

    while vocab.len() < vocab_size {
        let mut pairs: HashMap<(&str, &str), u64> = HashMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
            }
        }
        let best = pairs
            .into_iter()
            .filter(|&(_, c)| c >= 2)
            .min_by(|(pa, ca), (pb, cb)| cb.cmp(ca).then_with(|| pa.cmp(pb)));
        let Some(((l, r), _)) = best else {
            break;
        };
        let (l, r) = (l.to_string(), r.to_string());
        let token = merged(&l, &r);
        for (syms, _) in words.iter_mut() {
            apply_merge(syms, &l, &r, &token);
        }
        vocab.insert(&token);
    }
    Ok(vocab)
}

fn apply_merge(syms: &mut Vec<String>, l: &str, r: &str, token: &str) {
    if syms.len() < 2 {
        return;
    }
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
            out.push(token.to_string());
            i += 2;
        } else {
            out.push(std::mem::take(&mut syms[i]));
            i += 1;
        }
    }
    *syms = out;
}

/// Encode one word by greedy longest match from the left; a word with any
/// unmatched remainder becomes a single [`UNK`].
pub fn encode_word(vocab: &Vocabulary, word: &str, out: &mut Vec<u32>) {
    let chars: Vec<(usize, char)> = word.char_indices().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let from = chars[start].0;
        let mut found = None;
        for end in (start + 1..=chars.len()).rev() {
            let to = chars.get(end).map_or(word.len(), |c| c.0);
            let piece = &word[from..to];
            let id = if start == 0 {
                vocab.get(piece)
            } else {
                vocab.get(&format!("{CONT}{piece}"))
            };
            if let Some(id) = id {
                found = Some((id, end));
                break;
            }
        }
        match found {
            Some((id, end)) => {
                pieces.push(id);
                start = end;
            }
            None => {
                out.push(UNK);
                return;
            }
        }
    }
    out.extend(pieces);
}

/// Word-piece ids for `text`, word by word.
pub fn wordpiece_encode(vocab: &Vocabulary, text: &str) -> Vec<u32> {
    let mut out = Vec::new();
    for w in word_tokenize(text) {
        encode_word(vocab, &w, &mut out);
    }
    out
}
