//! Checkpoint container: 16-byte magic, u32 LE header length, JSON header,
//! then every tensor as little-endian f32 in header order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamStore;
use super::spec::NetworkSpec;
use super::{NetError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 16] = b"SHIFTADAPTCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub dataset_id: String,
    pub epochs: usize,
    pub learning_rate: f64,
    pub loss_curve_digest: String,
}

/// SHA-256 hex digest of a loss curve's little-endian f64 bytes.
pub fn loss_curve_digest(losses: &[f64]) -> String {
    let mut h = Sha256::new();
    for l in losses {
        h.update(l.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in f32 elements from the start of the payload.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: NetworkSpec,
    training_meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

/// Spec, provenance and host copies of every named tensor of a network.
/// Names carry a part prefix such as `encoder.` or `head.`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub training_meta: TrainingMeta,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn capture(
        spec: &NetworkSpec,
        meta: TrainingMeta,
        parts: &[(&str, &ParamStore)],
    ) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for (prefix, store) in parts {
            for (name, value) in store.export()? {
                tensors.insert(format!("{prefix}.{name}"), value);
            }
        }
        Ok(Self {
            spec: spec.clone(),
            training_meta: meta,
            tensors,
        })
    }

    /// Loads the tensors under `prefix.` into `store`.
    pub fn restore(&self, prefix: &str, store: &ParamStore) -> Result<()> {
        let lead = format!("{prefix}.");
        let part: BTreeMap<_, _> = self
            .tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&lead).map(|k| (k.to_string(), v.clone())))
            .collect();
        store.import(&part)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|(name, (shape, values))| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                    offset,
                };
                offset += values.len();
                e
            })
            .collect();
        let header = Header {
            format_version: FORMAT_VERSION,
            spec: self.spec.clone(),
            training_meta: self.training_meta.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| NetError::Mismatch(format!("header encoding: {e}")))?;
        let mut out = Vec::with_capacity(20 + json.len() + 4 * offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, values) in self.tensors.values() {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: String| NetError::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 20 || &bytes[..16] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        let header_len = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as usize;
        let payload_start = 20 + header_len;
        if bytes.len() < payload_start {
            return Err(corrupt("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[20..payload_start])
            .map_err(|e| corrupt(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(corrupt(format!(
                "unsupported format_version {}",
                header.format_version
            )));
        }
        let payload = &bytes[payload_start..];
        let mut tensors = BTreeMap::new();
        let mut expected = 0;
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let (start, end) = (4 * entry.offset, 4 * (entry.offset + n));
            if end > payload.len() {
                return Err(corrupt(format!(
                    "tensor {} runs past the payload",
                    entry.name
                )));
            }
            let values = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            expected = expected.max(end);
            tensors.insert(entry.name, (entry.shape, values));
        }
        if expected != payload.len() {
            return Err(corrupt(format!(
                "{} trailing payload bytes",
                payload.len() - expected
            )));
        }
        Ok(Self {
            spec: header.spec,
            training_meta: header.training_meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|source| NetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| NetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }
}
