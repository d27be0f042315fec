//! `BVC1` model checkpoints.
//!
//! ```text
//! "BVC1" | version u32 LE | header length u32 LE | header (UTF-8 JSON)
//! | arrays as consecutive little-endian f64 values
//! ```
//!
//! The header holds the [`ModelSpec`] and an array directory listing each
//! array's name, shape and byte offset from the start of the data section.
//! Arrays are written in name order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Model, ModelSpec, ParamSet};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BVC1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    arrays: Vec<ArrayEntry>,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut arrays = Vec::with_capacity(model.params.len());
    let mut offset = 0u64;
    for (name, t) in &model.params {
        arrays.push(ArrayEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += 8 * t.len() as u64;
    }
    let header = serde_json::to_vec(&Header {
        spec: model.spec.clone(),
        arrays,
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + offset as usize);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in model.params.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 12 {
        return Err(Error::format(bytes.len() as u64, "checkpoint shorter than its 12-byte prefix"));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected BVC1"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let data_start = 12 + header_len;
    if bytes.len() < data_start {
        return Err(Error::format(bytes.len() as u64, "truncated checkpoint header"));
    }
    let header: Header = serde_json::from_slice(&bytes[12..data_start])
        .map_err(|e| Error::format(12, format!("bad checkpoint header: {e}")))?;
    let data = &bytes[data_start..];

    let mut params = ParamSet::new();
    let mut expected = 0u64;
    for entry in &header.arrays {
        if entry.offset != expected {
            return Err(Error::format(
                data_start as u64 + entry.offset,
                format!("array `{}` is not contiguous", entry.name),
            ));
        }
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 8 * n;
        if end > data.len() {
            return Err(Error::format(
                (data_start + data.len()) as u64,
                format!("truncated data for array `{}`", entry.name),
            ));
        }
        let values = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), values)?);
        expected = end as u64;
    }
    if expected as usize != data.len() {
        return Err(Error::format(
            data_start as u64 + expected,
            "trailing bytes after last array",
        ));
    }
    Model::from_parts(header.spec, params)
        .map_err(|e| Error::format(12, format!("checkpoint does not describe a valid model: {e}")))
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}
