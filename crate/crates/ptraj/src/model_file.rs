//! On-disk container for trained models.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "PTRAJMDL1"           9-byte magic
//! manifest_len: u32
//! manifest              UTF-8 JSON, `manifest_len` bytes
//! payload               f64 values, raw bits, to end of file
//! ```
//!
//! The manifest is a self-describing JSON document: model tag, grid shape,
//! vocabulary, layer names and sizes. The payload holds every parameter in
//! the manifest's declared layer order, so a model can be reloaded exactly
//! (bit-for-bit) and sanity-checked against its own description. Model
//! structs in [`crate::ti`] and [`crate::tpg`] own their manifest schemas;
//! this module only handles the container.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::atomic_write;

const MAGIC: &[u8; 9] = b"PTRAJMDL1";

/// One named parameter block in the payload, in payload order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub len: usize,
}

/// Serialize a model file. The manifest is any JSON value; the payload is
/// written in the given order.
pub fn write_model(path: &Path, manifest: &serde_json::Value, payload: &[f64]) -> Result<()> {
    let manifest_bytes = serde_json::to_vec(manifest)
        .map_err(|e| Error::ModelFile(format!("manifest serialization failed: {e}")))?;
    let len: u32 = manifest_bytes
        .len()
        .try_into()
        .map_err(|_| Error::ModelFile("manifest too large".into()))?;
    let mut bytes = Vec::with_capacity(MAGIC.len() + 4 + manifest_bytes.len() + payload.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&len.to_le_bytes());
    bytes.extend_from_slice(&manifest_bytes);
    for &v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

/// Read a model file back: (manifest, payload). Validates the magic, the
/// manifest framing, and that the payload is a whole number of f64 values.
pub fn read_model(path: &Path) -> Result<(serde_json::Value, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |msg: String| Error::ModelFile(format!("{}: {msg}", path.display()));

    if bytes.len() < MAGIC.len() + 4 {
        return Err(fail("file too short for header".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(fail("bad magic (not a model file)".into()));
    }
    let len_start = MAGIC.len();
    let manifest_len = u32::from_le_bytes(bytes[len_start..len_start + 4].try_into().unwrap()) as usize;
    let manifest_start = len_start + 4;
    let payload_start = manifest_start
        .checked_add(manifest_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| fail("manifest length exceeds file size".into()))?;

    let manifest: serde_json::Value = serde_json::from_slice(&bytes[manifest_start..payload_start])
        .map_err(|e| fail(format!("manifest is not valid JSON: {e}")))?;

    let payload_bytes = &bytes[payload_start..];
    if payload_bytes.len() % 8 != 0 {
        return Err(fail(format!("payload is {} bytes, not a multiple of 8", payload_bytes.len())));
    }
    let payload = payload_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((manifest, payload))
}

/// Check a payload against its declared layers: total length must match and
/// every per-layer length must agree with the caller's expectation.
pub fn check_layers(path: &Path, layers: &[LayerDesc], expected: &[(&str, usize)], payload_len: usize) -> Result<()> {
    let fail = |msg: String| Error::ModelFile(format!("{}: {msg}", path.display()));
    if layers.len() != expected.len() {
        return Err(fail(format!("expected {} layers, manifest has {}", expected.len(), layers.len())));
    }
    for (desc, &(name, len)) in layers.iter().zip(expected) {
        if desc.name != name || desc.len != len {
            return Err(fail(format!(
                "layer mismatch: manifest has {}[{}], model expects {}[{}]",
                desc.name, desc.len, name, len
            )));
        }
    }
    let total: usize = layers.iter().map(|l| l.len).sum();
    if total != payload_len {
        return Err(fail(format!("payload holds {payload_len} values but layers declare {total}")));
    }
    Ok(())
}
