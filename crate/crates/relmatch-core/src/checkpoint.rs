//! Parameter checkpoints.
//!
//! Layout: a text manifest, then raw tensor data.
//!
//! ```text
//! relmatch-checkpoint 1
//! tensor <name> <d0[xd1...]> <byte-offset>
//! ...
//! data
//! <little-endian f32 blocks, in manifest order>
//! ```
//!
//! Offsets are relative to the first byte after the `data` line. Values are
//! stored as 32-bit floats; loading widens back to the f64 the models
//! compute with, so one save/load narrows precision once and is stable
//! thereafter.

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &str = "relmatch-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(store: &ParamStore) -> Vec<u8> {
    let mut manifest = format!("{MAGIC} {FORMAT_VERSION}\n");
    let mut blob: Vec<u8> = Vec::new();
    for (_, name, value) in store.iter() {
        let dims: Vec<String> = value.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("tensor {name} {} {}\n", dims.join("x"), blob.len()));
        for &x in value.data() {
            blob.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    manifest.push_str("data\n");
    let mut out = manifest.into_bytes();
    out.extend_from_slice(&blob);
    out
}

pub fn save(path: &Path, store: &ParamStore) -> Result<()> {
    crate::data::write_atomic(path, &to_bytes(store))
}

struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn parse_manifest(bytes: &[u8]) -> Result<(Vec<ManifestEntry>, usize)> {
    let mut entries = Vec::new();
    let mut pos = 0usize;
    let mut first = true;
    loop {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("manifest truncated before `data`"))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| corrupt("manifest is not valid UTF-8"))?;
        pos += nl + 1;
        if first {
            first = false;
            let mut fields = line.split(' ');
            if fields.next() != Some(MAGIC) {
                return Err(corrupt(format!("bad magic; expected `{MAGIC}`")));
            }
            let version: u32 = fields
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| corrupt("missing format version"))?;
            if version != FORMAT_VERSION {
                return Err(corrupt(format!(
                    "unsupported format version {version} (expected {FORMAT_VERSION})"
                )));
            }
            continue;
        }
        if line == "data" {
            return Ok((entries, pos));
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 4 || fields[0] != "tensor" {
            return Err(corrupt(format!("bad manifest line `{line}`")));
        }
        let shape: std::result::Result<Vec<usize>, _> =
            fields[2].split('x').map(|d| d.parse::<usize>()).collect();
        let shape = shape.map_err(|_| corrupt(format!("bad shape in `{line}`")))?;
        let offset: usize = fields[3]
            .parse()
            .map_err(|_| corrupt(format!("bad offset in `{line}`")))?;
        entries.push(ManifestEntry {
            name: fields[1].to_string(),
            shape,
            offset,
        });
    }
}

/// Load a checkpoint into an existing store. Every parameter of the store
/// must appear with a matching shape, and vice versa.
pub fn load_into(bytes: &[u8], store: &mut ParamStore) -> Result<()> {
    let (entries, data_start) = parse_manifest(bytes)?;
    if entries.len() != store.len() {
        return Err(corrupt(format!(
            "checkpoint has {} tensors, model expects {}",
            entries.len(),
            store.len()
        )));
    }
    let data = &bytes[data_start..];
    for entry in &entries {
        let id = store.id_by_name(&entry.name).ok_or_else(|| {
            corrupt(format!("unexpected tensor `{}` in checkpoint", entry.name))
        })?;
        let expected = store.get(id).shape();
        if expected != entry.shape.as_slice() {
            return Err(corrupt(format!(
                "tensor `{}` has shape {:?}, model expects {:?}",
                entry.name, entry.shape, expected
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let end = entry
            .offset
            .checked_add(numel * 4)
            .filter(|&e| e <= data.len())
            .ok_or_else(|| corrupt(format!("tensor `{}` overruns the data block", entry.name)))?;
        let mut values = Vec::with_capacity(numel);
        for chunk in data[entry.offset..end].chunks_exact(4) {
            let raw: [u8; 4] = chunk.try_into().expect("chunks_exact(4)");
            values.push(f32::from_le_bytes(raw) as f64);
        }
        store.set(id, Tensor::new(entry.shape.clone(), values)?)?;
    }
    Ok(())
}

pub fn load(path: &Path, store: &mut ParamStore) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_into(&bytes, store)
}
