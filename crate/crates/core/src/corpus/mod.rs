//! Corpus ingestion: parsing, tokenization, labeled document construction,
//! splitting, profiling and synthetic corpora.

mod documents;
mod formats;
mod stats;
mod synth;
mod tokenize;
mod vocab;
mod wordpiece;

pub(crate) use documents::shuffled_indices;
pub use documents::{
    build_documents, split_corpus, CorpusSplits, SegDocument, Sentence, CONVERSATIONAL_SPLIT, STRUCTURED_SPLIT,
};
pub use formats::{
    load_conversations, load_documents, load_wiki, parse_chat_jsonl, parse_wiki, read_chat_jsonl, read_documents_jsonl,
    save_conversations, save_documents, write_chat_jsonl, write_documents_jsonl, Conversation, Turn, SEGMENT_DELIMITER,
};
pub use stats::{corpus_stats, DatasetProfile};
pub use synth::{synth_generate, word_pools, SynthConfig};
pub use tokenize::{split_sentences, word_tokenize};
pub use vocab::{Vocabulary, CLS, PAD, SEP, SPECIAL_TOKENS, UNK};
pub use wordpiece::{encode_word, train_wordpiece, wordpiece_encode};
