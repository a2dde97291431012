//! Flat little-endian f64 blob plus a JSON manifest of (name, shape, offset).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f64 elements from the start of the blob.
    pub offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    entries: Vec<ManifestEntry>,
    #[serde(default)]
    extra: serde_json::Value,
}

const FORMAT: &str = "wsnas-f64-v1";

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("json"), base.with_extension("bin"))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `<base>.json` and `<base>.bin`. `extra` is stored verbatim in the manifest.
pub fn save_checkpoint(base: &Path, tensors: &[(String, &Tensor)], extra: serde_json::Value) -> Result<()> {
    let (manifest_path, blob_path) = paths(base);
    let mut entries = Vec::with_capacity(tensors.len());
    let mut blob = Vec::new();
    let mut offset = 0;
    for (name, t) in tensors {
        entries.push(ManifestEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += t.len();
    }
    write_atomic(&blob_path, &blob)?;
    let manifest = Manifest { format: FORMAT.into(), entries, extra };
    write_atomic(&manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(base: &Path) -> Result<(Vec<(String, Tensor)>, serde_json::Value)> {
    let (manifest_path, blob_path) = paths(base);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.format != FORMAT {
        return Err(Error::Schema { line: 1, message: format!("unknown checkpoint format {}", manifest.format) });
    }
    let bytes = fs::read(blob_path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Schema { line: 0, message: "blob length is not a multiple of 8".into() });
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in manifest.entries {
        let len: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + len)
            .ok_or_else(|| Error::Schema { line: 0, message: format!("tensor {} overruns the blob", e.name) })?
            .to_vec();
        out.push((e.name, Tensor::new(e.shape, data)?));
    }
    Ok((out, manifest.extra))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ckpt");
        let a = Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE]).unwrap();
        let b = Tensor::scalar(7.0);
        save_checkpoint(&base, &[("a".into(), &a), ("b".into(), &b)], serde_json::json!({"k": 1})).unwrap();
        let (loaded, extra) = load_checkpoint(&base).unwrap();
        assert_eq!(loaded, vec![("a".to_string(), a), ("b".to_string(), b)]);
        assert_eq!(extra["k"], 1);
    }
}
