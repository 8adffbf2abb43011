//! Binary checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! b"MOBCKPT\0"  u32 version  u64 header_len  header (JSON)  f64 data...
//! ```
//!
//! The header holds the model spec, caller metadata and the ordered list of
//! `(name, rows, cols)` tensors whose values follow. Batchnorm running
//! statistics are stored as `buffer.agg{i}.bn.running_{mean,var}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MOBCKPT\0";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: ModelSpec,
    metadata: serde_json::Value,
    tensors: Vec<(String, usize, usize)>,
}

fn format_err(message: impl Into<String>) -> Error {
    Error::Format { version: format!("checkpoint {CHECKPOINT_VERSION}"), message: message.into() }
}

fn buffer_names(layer: usize) -> (String, String) {
    (format!("buffer.agg{layer}.bn.running_mean"), format!("buffer.agg{layer}.bn.running_var"))
}

pub fn encode_checkpoint(model: &Model, metadata: &serde_json::Value) -> Vec<u8> {
    let mut tensors: Vec<(String, &[f64], usize, usize)> = model
        .params
        .names()
        .iter()
        .zip(model.params.values())
        .map(|(n, v)| (n.clone(), v.data(), v.rows(), v.cols()))
        .collect();
    for (i, st) in model.stats.iter().enumerate() {
        let (mean, var) = buffer_names(i + 1);
        tensors.push((mean, &st.mean, 1, st.mean.len()));
        tensors.push((var, &st.var, 1, st.var.len()));
    }
    let header = Header {
        spec: model.spec.clone(),
        metadata: metadata.clone(),
        tensors: tensors.iter().map(|(n, _, r, c)| (n.clone(), *r, *c)).collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, data, _, _) in &tensors {
        for v in data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(format_err("truncated checkpoint"));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<(Model, serde_json::Value)> {
    if take(&mut bytes, 8)? != MAGIC {
        return Err(format_err("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(format_err(format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(take(&mut bytes, 8)?.try_into().expect("8 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(take(&mut bytes, len)?).map_err(|e| format_err(format!("bad header: {e}")))?;

    let mut model = Model::zeroed(header.spec)?;
    let mut seen = 0;
    for (name, rows, cols) in &header.tensors {
        let raw = take(&mut bytes, rows * cols * 8)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if let Some(rest) = name.strip_prefix("buffer.agg") {
            let layer: usize = rest.split('.').next().and_then(|s| s.parse().ok()).unwrap_or(0);
            let st = layer
                .checked_sub(1)
                .and_then(|i| model.stats.get_mut(i))
                .ok_or_else(|| format_err(format!("unexpected buffer {name}")))?;
            let slot = if name.ends_with("running_mean") { &mut st.mean } else { &mut st.var };
            if slot.len() != data.len() {
                return Err(format_err(format!("buffer {name} has {} values, expected {}", data.len(), slot.len())));
            }
            *slot = data;
        } else {
            let target = model.params.by_name_mut(name).ok_or_else(|| format_err(format!("unknown tensor {name}")))?;
            if target.shape() != (*rows, *cols) {
                return Err(format_err(format!("tensor {name} is {rows}x{cols}, expected {:?}", target.shape())));
            }
            *target = Matrix::from_vec(*rows, *cols, data)?;
        }
        seen += 1;
    }
    if seen != model.params.len() + 2 * model.stats.len() {
        return Err(format_err(format!(
            "checkpoint has {seen} tensors, model needs {}",
            model.params.len() + 2 * model.stats.len()
        )));
    }
    if !bytes.is_empty() {
        return Err(format_err("trailing bytes after tensor data"));
    }
    Ok((model, header.metadata))
}

pub fn save_checkpoint(path: &Path, model: &Model, metadata: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_checkpoint(model, metadata)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, serde_json::Value)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
