//! Named-tensor checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   b"TNSRPAK1"
//! len      u64       byte length of the manifest
//! manifest len bytes UTF-8 JSON {"tensors":[{"name","shape","offset"}]}
//! data     f64 LE    every tensor's values back to back; `offset` counts f64s
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TNSRPAK1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn to_bytes(params: &ParamSet) -> Vec<u8> {
    let mut offset = 0;
    let tensors = params
        .iter()
        .map(|(name, t)| {
            let e = Entry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.len();
            e
        })
        .collect();
    let manifest = serde_json::to_vec(&Manifest { tensors }).expect("manifest serializes");
    let mut out = Vec::with_capacity(16 + manifest.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(body)?;
    let data = &bytes[16 + len..];
    if data.len() % 8 != 0 {
        return Err(bad("data section is not a whole number of f64 values"));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut params = ParamSet::new();
    for e in manifest.tensors {
        let n: usize = e.shape.iter().product();
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| bad("tensor extends past data section"))?;
        params.add(e.name, Tensor::new(e.shape, slice.to_vec())?);
    }
    Ok(params)
}

pub fn save(path: &Path, params: &ParamSet) -> Result<()> {
    fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
