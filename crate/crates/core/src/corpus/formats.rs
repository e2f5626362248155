//! Corpus file formats: sectioned plain text, chat JSONL and labeled
//! document JSONL.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::documents::SegDocument;
use super::tokenize::split_sentences;
use crate::error::{Error, Result};

/// Prefix of a line that starts a new segment in sectioned text.
pub const SEGMENT_DELIMITER: &str = "========";

/// Parse sectioned text: one sentence per line, delimiter lines open a new
/// segment, blank lines are ignored and empty segments are dropped.
pub fn parse_wiki<R: BufRead>(reader: R) -> Result<Vec<Vec<String>>> {
    let mut segments = Vec::new();
    let mut current = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.starts_with(SEGMENT_DELIMITER) {
            if !current.is_empty() {
                segments.push(std::mem::take(&mut current));
            }
            continue;
        }
        let t = line.trim();
        if !t.is_empty() {
            current.push(t.to_string());
        }
    }
    if !current.is_empty() {
        segments.push(current);
    }
    Ok(segments)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

/// One chat transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::invalid(format!("conversation `{}` has no turns", self.id)));
        }
        if let Some(i) = self.turns.iter().position(|t| t.text.trim().is_empty()) {
            return Err(Error::invalid(format!("conversation `{}`: turn {i} is empty", self.id)));
        }
        Ok(())
    }

    /// Sentences of every turn, in order.
    pub fn sentences(&self) -> Vec<String> {
        self.turns.iter().flat_map(|t| split_sentences(&t.text)).collect()
    }
}

/// Parse one chat JSONL line. `line_no` is 1-based and only used in errors.
pub fn parse_chat_jsonl(line: &str, line_no: usize) -> Result<Conversation> {
    let conv: Conversation = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    conv.validate().map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    Ok(conv)
}

pub fn read_chat_jsonl<R: BufRead>(reader: R) -> Result<Vec<Conversation>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_chat_jsonl(&line, i + 1)?);
    }
    Ok(out)
}

pub fn write_chat_jsonl<W: Write>(mut w: W, convs: &[Conversation]) -> Result<()> {
    for c in convs {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocRecord {
    doc_id: String,
    sentences: Vec<String>,
    labels: Vec<u8>,
}

pub fn read_documents_jsonl<R: BufRead>(reader: R) -> Result<Vec<SegDocument>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let rec: DocRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let doc =
            SegDocument::from_labeled(rec.doc_id, rec.sentences, rec.labels).map_err(|e| parse_err(e.to_string()))?;
        out.push(doc);
    }
    Ok(out)
}

pub fn write_documents_jsonl<W: Write>(mut w: W, docs: &[SegDocument]) -> Result<()> {
    for d in docs {
        let rec = DocRecord {
            doc_id: d.doc_id.clone(),
            sentences: d.sentences.iter().map(|s| s.text.clone()).collect(),
            labels: d.labels.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::path_io(path, e))
}

pub fn load_conversations(path: &Path) -> Result<Vec<Conversation>> {
    read_chat_jsonl(open(path)?)
}

pub fn load_documents(path: &Path) -> Result<Vec<SegDocument>> {
    read_documents_jsonl(open(path)?)
}

/// Load sectioned text. A directory yields one document per file (sorted
/// by file name); a single file yields one document.
pub fn load_wiki(path: &Path) -> Result<Vec<SegDocument>> {
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in std::fs::read_dir(path).map_err(|e| Error::path_io(path, e))? {
            let p = entry?.path();
            if p.is_file() {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    let mut docs = Vec::new();
    for f in files {
        let segments = parse_wiki(open(&f)?)?;
        if segments.is_empty() {
            log::warn!("{}: no sentences, skipped", f.display());
            continue;
        }
        let id = f
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let sources = vec![id.clone(); segments.len()];
        docs.push(SegDocument::from_segments(id, segments, sources)?);
    }
    Ok(docs)
}

pub fn save_documents(path: &Path, docs: &[SegDocument]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::path_io(path, e))?;
    write_documents_jsonl(BufWriter::new(f), docs)
}

pub fn save_conversations(path: &Path, convs: &[Conversation]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::path_io(path, e))?;
    write_chat_jsonl(BufWriter::new(f), convs)
}
