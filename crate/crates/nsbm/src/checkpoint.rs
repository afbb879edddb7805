//! Checkpoint file format: a `NSBM1` header line, a single-line JSON manifest
//! of named array shapes, then the raw little-endian 64-bit float arrays in
//! manifest order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const MAGIC: &str = "NSBM1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    arrays: Vec<ManifestEntry>,
}

/// One named array in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn save_checkpoint(path: &Path, arrays: &[CheckpointArray]) -> Result<()> {
    let manifest = Manifest {
        arrays: arrays
            .iter()
            .map(|a| ManifestEntry {
                name: a.name.clone(),
                shape: a.shape.clone(),
            })
            .collect(),
    };
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC.as_bytes());
    buf.push(b'\n');
    buf.extend_from_slice(
        serde_json::to_string(&manifest)
            .map_err(|e| Error::Data(format!("checkpoint manifest: {e}")))?
            .as_bytes(),
    );
    buf.push(b'\n');
    for a in arrays {
        let numel: usize = a.shape.iter().product();
        if numel != a.values.len() {
            return Err(Error::Shape(format!(
                "checkpoint array `{}`: shape {:?} vs {} values",
                a.name,
                a.shape,
                a.values.len()
            )));
        }
        for v in &a.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<CheckpointArray>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let first_nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse("checkpoint: missing header line".into()))?;
    if &bytes[..first_nl] != MAGIC.as_bytes() {
        return Err(Error::Parse(format!(
            "checkpoint: bad header (expected `{MAGIC}`)"
        )));
    }
    let second_nl = bytes[first_nl + 1..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| first_nl + 1 + p)
        .ok_or_else(|| Error::Parse("checkpoint: missing manifest line".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[first_nl + 1..second_nl])
        .map_err(|e| Error::Parse(format!("checkpoint manifest: {e}")))?;
    let mut off = second_nl + 1;
    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    for entry in manifest.arrays {
        let numel: usize = entry.shape.iter().product();
        let end = off + numel * 8;
        if end > bytes.len() {
            return Err(Error::Parse(format!(
                "checkpoint: truncated data for array `{}`",
                entry.name
            )));
        }
        let mut values = Vec::with_capacity(numel);
        for i in 0..numel {
            let p = off + i * 8;
            values.push(f64::from_le_bytes(bytes[p..p + 8].try_into().unwrap()));
        }
        off = end;
        arrays.push(CheckpointArray {
            name: entry.name,
            shape: entry.shape,
            values,
        });
    }
    if off != bytes.len() {
        return Err(Error::Parse(format!(
            "checkpoint: {} trailing bytes after declared arrays",
            bytes.len() - off
        )));
    }
    Ok(arrays)
}
