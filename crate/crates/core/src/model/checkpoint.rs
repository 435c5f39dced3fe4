//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"VITREGCK"                 8-byte magic
//! u32                         header length in bytes
//! header                      UTF-8 JSON: format_version, config, tensors[{name, shape}], metadata
//! f32 * sum(numel)            tensor data, concatenated in header order
//! ```
//!
//! Tensor order is the order of [`tensor_specs`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::VitConfig;
use super::weights::{tensor_specs, VitWeights};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"VITREGCK";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: VitConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// Weights plus whatever metadata the writer attached (training and
/// preprocessing configuration, epoch).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub weights: VitWeights<f32>,
    pub metadata: serde_json::Value,
}

pub fn save_checkpoint(
    weights: &VitWeights<f32>,
    metadata: &serde_json::Value,
    path: &Path,
) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        config: weights.config.clone(),
        tensors: tensor_specs(&weights.config)
            .into_iter()
            .map(|s| TensorEntry {
                name: s.name,
                shape: s.shape,
            })
            .collect(),
        metadata: metadata.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serialises");
    let mut buf = Vec::with_capacity(12 + header.len() + 4 * weights.num_parameters());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for t in weights.tensors() {
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn parse(bytes: &[u8]) -> Result<(Header, &[u8])> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic or truncated preamble)"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_bytes = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    Ok((header, &bytes[12 + hlen..]))
}

fn read_tensors(header: &Header, mut data: &[u8]) -> Result<Vec<Vec<f32>>> {
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let numel: usize = entry.shape.iter().product();
        let nbytes = numel * 4;
        if data.len() < nbytes {
            return Err(Error::Checkpoint(format!(
                "truncated data in tensor {}",
                entry.name
            )));
        }
        let (head, rest) = data.split_at(nbytes);
        tensors.push(
            head.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect(),
        );
        data = rest;
    }
    if !data.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last tensor",
            data.len()
        )));
    }
    Ok(tensors)
}

fn check_layout(header: &Header, config: &VitConfig) -> Result<()> {
    let expected = tensor_specs(config);
    for (i, spec) in expected.iter().enumerate() {
        match header.tensors.get(i) {
            None => {
                return Err(Error::Checkpoint(format!(
                    "tensor {} missing from checkpoint",
                    spec.name
                )))
            }
            Some(e) if e.name != spec.name || e.shape != spec.shape => {
                return Err(Error::Checkpoint(format!(
                    "tensor {} mismatch: checkpoint has {} {:?}, expected {:?}",
                    spec.name, e.name, e.shape, spec.shape
                )))
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = header.tensors.get(expected.len()) {
        return Err(Error::Checkpoint(format!(
            "tensor {} not expected by this config",
            extra.name
        )));
    }
    Ok(())
}

/// Read a checkpoint using the configuration stored in its header.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, data) = parse(&bytes)?;
    header
        .config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid config in header: {e}")))?;
    check_layout(&header, &header.config)?;
    let tensors = read_tensors(&header, data)?;
    let weights = VitWeights::from_tensors(header.config.clone(), tensors)?;
    if !weights.all_finite() {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }
    Ok(Checkpoint {
        weights,
        metadata: header.metadata,
    })
}

/// Load weights into `config`, rejecting any layout or configuration mismatch.
pub fn load_weights(config: &VitConfig, path: &Path) -> Result<VitWeights<f32>> {
    config.validate()?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, data) = parse(&bytes)?;
    check_layout(&header, config)?;
    if header.config != *config {
        return Err(Error::Checkpoint(format!(
            "config mismatch: checkpoint {} vs requested {}",
            serde_json::to_string(&header.config).unwrap_or_default(),
            serde_json::to_string(config).unwrap_or_default()
        )));
    }
    let tensors = read_tensors(&header, data)?;
    let weights = VitWeights::from_tensors(config.clone(), tensors)?;
    if !weights.all_finite() {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        let cfg = VitConfig::toy(32);
        let w = VitWeights::<f32>::init(&cfg, 11).unwrap();
        save_checkpoint(&w, &serde_json::json!({"epoch": 3}), &path).unwrap();
        let back = load_weights(&cfg, &path).unwrap();
        assert_eq!(back, w);
        let ck = read_checkpoint(&path).unwrap();
        assert_eq!(ck.weights, w);
        assert_eq!(ck.metadata["epoch"], 3);
    }

    #[test]
    fn mismatched_dim_names_first_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        let mut big = VitConfig::toy(32);
        big.embed_dim = 192;
        big.num_heads = 3;
        big.mlp_hidden = 768;
        let w = VitWeights::<f32>::init(&big, 1).unwrap();
        save_checkpoint(&w, &serde_json::Value::Null, &path).unwrap();
        let err = load_weights(&VitConfig::toy(32), &path).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Checkpoint(_)));
        assert!(msg.contains("patch_embed.proj"), "{msg}");
    }

    #[test]
    fn truncated_and_garbage_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        let cfg = VitConfig::toy(32);
        let w = VitWeights::<f32>::init(&cfg, 1).unwrap();
        save_checkpoint(&w, &serde_json::Value::Null, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [0, 5, 11, 40, bytes.len() / 2, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(matches!(load_weights(&cfg, &path), Err(Error::Checkpoint(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        fs::write(&path, extra).unwrap();
        assert!(load_weights(&cfg, &path).is_err());
        assert!(matches!(
            load_weights(&cfg, &dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
