//! Synthetic topic-structured chat corpora.
//!
//! Each topic owns a disjoint pool of pseudo-words and all topics share one
//! common pool. A sentence draws each word from its conversation's topic
//! pool with probability `1 - shared_fraction`, otherwise from the shared
//! pool.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::formats::{Conversation, Turn};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub topics: usize,
    pub conversations: usize,
    /// Words per sentence: rounded normal clipped to `[min_len, max_len]`.
    pub mean_len: f64,
    pub std_len: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Sentences (one per turn) per conversation, uniform in the range.
    pub min_turns: usize,
    pub max_turns: usize,
    pub shared_fraction: f64,
    pub topic_vocab: usize,
    pub shared_vocab: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            topics: 6,
            conversations: 300,
            mean_len: 12.0,
            std_len: 3.0,
            min_len: 3,
            max_len: 16,
            min_turns: 2,
            max_turns: 4,
            shared_fraction: 0.2,
            topic_vocab: 3,
            shared_vocab: 60,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(format!("synth: {m}")));
        if self.topics < 2 {
            return fail(format!("need at least 2 topics, got {}", self.topics));
        }
        if self.conversations < self.topics {
            return fail(format!(
                "{} conversations cannot cover {} topics",
                self.conversations, self.topics
            ));
        }
        if !(0.0..1.0).contains(&self.shared_fraction) {
            return fail(format!(
                "shared_fraction must lie in [0, 1), got {}",
                self.shared_fraction
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail(format!(
                "bad sentence length bounds [{}, {}]",
                self.min_len, self.max_len
            ));
        }
        if self.min_turns == 0 || self.min_turns > self.max_turns {
            return fail(format!(
                "bad conversation length bounds [{}, {}]",
                self.min_turns, self.max_turns
            ));
        }
        if !(self.std_len >= 0.0) || !self.mean_len.is_finite() {
            return fail("sentence length distribution must be finite with std >= 0".into());
        }
        if self.topic_vocab == 0 || (self.shared_fraction > 0.0 && self.shared_vocab == 0) {
            return fail("word pools must be nonempty".into());
        }
        Ok(())
    }

    /// Topic of conversation `i`.
    pub fn topic_of(&self, i: usize) -> usize {
        i % self.topics
    }
}

/// Word pools for a configuration: one per topic, then the shared pool.
pub fn word_pools(cfg: &SynthConfig) -> Vec<Vec<String>> {
    const ONSETS: &[&str] = &[
        "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr",
    ];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f70_91c5);
    let mut seen = HashSet::new();
    let mut word = |rng: &mut ChaCha8Rng| loop {
        let syllables = rng.random_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| {
                let o = ONSETS[rng.random_range(0..ONSETS.len())];
                let v = VOWELS[rng.random_range(0..VOWELS.len())];
                format!("{o}{v}")
            })
            .collect();
        if seen.insert(w.clone()) {
            return w;
        }
    };
    let mut pools: Vec<Vec<String>> = (0..cfg.topics)
        .map(|_| (0..cfg.topic_vocab).map(|_| word(&mut rng)).collect())
        .collect();
    pools.push((0..cfg.shared_vocab).map(|_| word(&mut rng)).collect());
    pools
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<Conversation>> {
    cfg.validate()?;
    let pools = word_pools(cfg);
    let shared = &pools[cfg.topics];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lengths = Normal::new(cfg.mean_len, cfg.std_len).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(cfg.conversations);
    for i in 0..cfg.conversations {
        let pool = &pools[cfg.topic_of(i)];
        let turns = rng.random_range(cfg.min_turns..=cfg.max_turns);
        let mut conv = Conversation {
            id: format!("synth{i:05}"),
            turns: Vec::with_capacity(turns),
        };
        for t in 0..turns {
            let len = (lengths.sample(&mut rng).round().max(0.0) as usize).clamp(cfg.min_len, cfg.max_len);
            let words: Vec<&str> = (0..len)
                .map(|_| {
                    let from = if rng.random_bool(cfg.shared_fraction) {
                        shared
                    } else {
                        pool
                    };
                    from[rng.random_range(0..from.len())].as_str()
                })
                .collect();
            conv.turns.push(Turn {
                speaker: if t % 2 == 0 { "A" } else { "B" }.to_string(),
                text: words.join(" "),
            });
        }
        out.push(conv);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn small() -> SynthConfig {
        SynthConfig {
            topics: 3,
            conversations: 30,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        assert_eq!(synth_generate(&small()).unwrap(), synth_generate(&small()).unwrap());
        let other = SynthConfig { seed: 12, ..small() };
        assert_ne!(synth_generate(&small()).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn disjoint_pools_without_shared_words() {
        let cfg = SynthConfig {
            shared_fraction: 0.0,
            ..small()
        };
        let convs = synth_generate(&cfg).unwrap();
        let mut topic_of_word: HashMap<String, usize> = HashMap::new();
        for (i, c) in convs.iter().enumerate() {
            for t in &c.turns {
                for w in t.text.split_whitespace() {
                    let topic = *topic_of_word.entry(w.to_string()).or_insert(cfg.topic_of(i));
                    assert_eq!(topic, cfg.topic_of(i), "{w} appears under two topics");
                }
            }
        }
    }

    #[test]
    fn lengths_respect_bounds() {
        let cfg = SynthConfig {
            mean_len: 5.0,
            std_len: 10.0,
            min_len: 2,
            max_len: 7,
            ..small()
        };
        for c in synth_generate(&cfg).unwrap() {
            assert!((cfg.min_turns..=cfg.max_turns).contains(&c.turns.len()));
            for t in &c.turns {
                let n = t.text.split_whitespace().count();
                assert!((2..=7).contains(&n), "{n}");
            }
        }
    }

    #[test]
    fn invalid_parameters() {
        for bad in [
            SynthConfig { topics: 1, ..small() },
            SynthConfig {
                conversations: 2,
                ..small()
            },
            SynthConfig {
                shared_fraction: 1.0,
                ..small()
            },
            SynthConfig {
                min_len: 5,
                max_len: 4,
                ..small()
            },
            SynthConfig {
                min_turns: 0,
                ..small()
            },
        ] {
            assert!(synth_generate(&bad).is_err());
        }
    }
}
