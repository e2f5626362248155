//! Checkpoint file: one line of JSON manifest, then the raw little-endian
//! `f32` payload of every parameter in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::models::{ModelConfig, SegModel};
use crate::numerics::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "topicseg-checkpoint";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    config: ModelConfig,
    vocabulary: Vocabulary,
    parameters: Vec<ParamEntry>,
    payload_bytes: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &SegModel) -> Result<()> {
    let mut parameters = Vec::with_capacity(model.params.len());
    let mut offset = 0;
    for (name, t) in model.params.iter() {
        parameters.push(ParamEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len() * 4;
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config: model.config,
        vocabulary: model.vocab.clone(),
        parameters,
        payload_bytes: offset,
    };
    serde_json::to_writer(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    let mut payload = Vec::with_capacity(offset);
    for (_, t) in model.params.iter() {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&payload)?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<SegModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("missing manifest terminator"))?;
    let (head, payload) = (&bytes[..split], &bytes[split + 1..]);

    let loose: serde_json::Value =
        serde_json::from_slice(head).map_err(|e| corrupt(format!("manifest is not JSON: {e}")))?;
    if loose.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
        return Err(corrupt(format!("not a {FORMAT} file")));
    }
    match loose.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
        Some(v) => {
            return Err(corrupt(format!(
                "unsupported checkpoint version {v} (this build reads version {CHECKPOINT_VERSION})"
            )))
        }
        None => return Err(corrupt("manifest has no version")),
    }
    let m: Manifest = serde_json::from_value(loose).map_err(|e| corrupt(format!("bad manifest: {e}")))?;

    m.config.validate()?;
    if m.vocabulary.len() > m.config.vocab_size() {
        return Err(corrupt(format!(
            "vocabulary of {} exceeds configured vocab_size {}",
            m.vocabulary.len(),
            m.config.vocab_size()
        )));
    }
    if payload.len() != m.payload_bytes {
        return Err(corrupt(format!(
            "payload is {} bytes, manifest declares {}",
            payload.len(),
            m.payload_bytes
        )));
    }
    let specs = m.config.param_specs();
    if specs.len() != m.parameters.len() {
        return Err(corrupt(format!(
            "{} parameters stored, configuration has {}",
            m.parameters.len(),
            specs.len()
        )));
    }
    let mut expected: Vec<(&String, &Vec<usize>)> = specs.iter().map(|(n, s, _)| (n, s)).collect();
    expected.sort();
    let mut params = ParamStore::new();
    let mut offset = 0;
    for (entry, (name, shape)) in m.parameters.iter().zip(expected) {
        if &entry.name != name || &entry.shape != shape {
            return Err(corrupt(format!(
                "parameter {} {:?} does not match configuration ({name} {shape:?})",
                entry.name, entry.shape
            )));
        }
        if entry.offset != offset {
            return Err(corrupt(format!(
                "parameter {} at offset {}, expected {offset}",
                entry.name, entry.offset
            )));
        }
        let n: usize = shape.iter().product();
        let end = offset + n * 4;
        if end > payload.len() {
            return Err(corrupt(format!("payload truncated inside parameter {}", entry.name)));
        }
        let data = payload[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(name.clone(), Tensor::new(shape.clone(), data)?);
        offset = end;
    }
    if offset != payload.len() {
        return Err(corrupt(format!("{} trailing payload bytes", payload.len() - offset)));
    }
    Ok(SegModel {
        config: m.config,
        vocab: m.vocabulary,
        params,
    })
}

pub fn save_checkpoint(model: &SegModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model)?;
    fs::write(path, buf).map_err(|e| Error::path_io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<SegModel> {
    let f = fs::File::open(path).map_err(|e| Error::path_io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f))
}
