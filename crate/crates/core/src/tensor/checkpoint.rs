//! Checkpoint layout:
//!
//! ```text
//! cpm-checkpoint\n
//! <header as one line of JSON>\n
//! <raw little-endian blobs, one per header entry, in header order>
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{CpmError, Result};

const MAGIC: &[u8] = b"cpm-checkpoint\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub share_group: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dtype: String,
    pub fingerprint: String,
    pub tensors: Vec<TensorEntry>,
    /// Free-form trainer state needed to resume.
    #[serde(default)]
    pub state: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub blobs: Vec<Vec<T>>,
}

impl<T: Real> Checkpoint<T> {
    pub fn verify_fingerprint(&self, expected: &str) -> Result<()> {
        if self.header.fingerprint != expected {
            return Err(CpmError::FingerprintMismatch {
                expected: expected.to_string(),
                found: self.header.fingerprint.clone(),
            });
        }
        Ok(())
    }

    pub fn blob(&self, name: &str) -> Option<(&TensorEntry, &[T])> {
        self.header.tensors.iter().zip(&self.blobs).find(|(e, _)| e.name == name).map(|(e, b)| (e, b.as_slice()))
    }
}

pub fn write_checkpoint<T: Real>(path: &Path, header: &CheckpointHeader, blobs: &[&[T]]) -> Result<()> {
    if header.tensors.len() != blobs.len() {
        return Err(CpmError::Checkpoint(format!(
            "{} header entries but {} blobs",
            header.tensors.len(),
            blobs.len()
        )));
    }
    for (e, b) in header.tensors.iter().zip(blobs) {
        if e.shape.iter().product::<usize>() != b.len() {
            return Err(CpmError::Checkpoint(format!("blob for {} does not match shape {:?}", e.name, e.shape)));
        }
    }
    let mut out = Vec::from(MAGIC);
    out.extend_from_slice(serde_json::to_string(header)?.as_bytes());
    out.push(b'\n');
    for b in blobs {
        for &v in b.iter() {
            v.write_le(&mut out);
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CpmError::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| CpmError::io(path, e))
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| CpmError::io(path, e))?;
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| CpmError::Checkpoint(format!("{} is not a checkpoint", path.display())))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CpmError::Checkpoint("unterminated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&rest[..nl])?;
    if header.format_version != FORMAT_VERSION {
        return Err(CpmError::Checkpoint(format!("unsupported format version {}", header.format_version)));
    }
    if header.dtype != T::DTYPE {
        return Err(CpmError::Checkpoint(format!("checkpoint holds {}, expected {}", header.dtype, T::DTYPE)));
    }
    let mut body = &rest[nl + 1..];
    let mut blobs = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let numel: usize = e.shape.iter().product();
        let len = numel * T::BYTES;
        if body.len() < len {
            return Err(CpmError::Checkpoint(format!("truncated blob for {}", e.name)));
        }
        blobs.push(body[..len].chunks_exact(T::BYTES).map(T::read_le).collect());
        body = &body[len..];
    }
    if !body.is_empty() {
        return Err(CpmError::Checkpoint(format!("{} trailing bytes", body.len())));
    }
    Ok(Checkpoint { header, blobs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_fingerprint_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let header = CheckpointHeader {
            format_version: FORMAT_VERSION,
            dtype: "f32".into(),
            fingerprint: "abc".into(),
            tensors: vec![
                TensorEntry { name: "w".into(), shape: vec![2, 2], share_group: None },
                TensorEntry { name: "b".into(), shape: vec![2], share_group: Some("g".into()) },
            ],
            state: serde_json::json!({"epoch": 3}),
        };
        let w = [1.0f32, -2.5, 3.25, f32::MIN_POSITIVE];
        let b = [0.0f32, 7.0];
        write_checkpoint(&path, &header, &[&w, &b]).unwrap();
        let ck = read_checkpoint::<f32>(&path).unwrap();
        assert_eq!(ck.header, header);
        assert_eq!(ck.blobs, vec![w.to_vec(), b.to_vec()]);
        assert!(ck.verify_fingerprint("abc").is_ok());
        assert!(matches!(ck.verify_fingerprint("xyz"), Err(CpmError::FingerprintMismatch { .. })));
        assert!(read_checkpoint::<f64>(&path).is_err());
    }
}
