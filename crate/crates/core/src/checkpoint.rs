//! Binary checkpoint container.
//!
//! Layout: `b"SAMT"`, version `u32` LE, header length `u64` LE, a UTF-8 JSON
//! header `{"tensors": [{name, dtype, shape, offset}], "meta": {...}}`, then
//! the little-endian f32 payloads in header order. Offsets are byte offsets
//! into the payload section.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sepflow_tensor::Tensor;

use crate::dit::{DitConfig, Separator};
use crate::params::ParamStore;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SAMT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: [usize; 2],
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
    meta: serde_json::Value,
}

/// Named f32 tensors plus free-form JSON metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: ParamStore<f32>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value, tensors: ParamStore<f32>) -> Self {
        Self { meta, tensors }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in self.tensors.iter() {
            entries.push(Entry {
                name: name.to_string(),
                dtype: "f32".into(),
                shape: t.shape(),
                offset,
            });
            offset += 4 * t.len() as u64;
        }
        let header = serde_json::to_vec(&Header {
            tensors: entries,
            meta: self.meta.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing SAMT magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header runs past end of file"))?;
        let header: Header = serde_json::from_slice(&bytes[16..payload_start])?;
        let payload = &bytes[payload_start..];
        let mut tensors = ParamStore::new();
        let mut expected = 0u64;
        for e in header.tensors {
            if e.dtype != "f32" {
                return Err(bad(&format!("tensor {} has dtype {}", e.name, e.dtype)));
            }
            if e.offset != expected {
                return Err(bad(&format!("tensor {} is not in payload order", e.name)));
            }
            let n = e.shape[0] * e.shape[1];
            let start = e.offset as usize;
            let end = start + 4 * n;
            if end > payload.len() {
                return Err(bad(&format!("tensor {} is truncated", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(e.name, Tensor::new(e.shape[0], e.shape[1], data)?)?;
            expected = end as u64;
        }
        if expected as usize != payload.len() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl Separator<f32> {
    /// Model-only checkpoint; the architecture travels in `meta.config`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            serde_json::json!({ "kind": "model", "config": self.config }),
            self.params.clone(),
        )
    }

    /// Rebuilds a model from any checkpoint carrying `meta.config`; extra
    /// tensors (optimizer state, EMA) are ignored.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: DitConfig = serde_json::from_value(
            ckpt.meta
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint has no model config".into()))?,
        )?;
        let mut model = Separator::<f32>::init(config, 0)?;
        let names: Vec<String> = model.params.names().map(str::to_string).collect();
        for name in names {
            let src = ckpt.tensors.get(&name).map_err(|_| {
                Error::Format(format!("checkpoint is missing parameter {name}"))
            })?;
            let dst = model.params.get_mut(&name)?;
            if dst.shape() != src.shape() {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_corruption() {
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
        let model = Separator::<f32>::init(DitConfig::default(), 3).unwrap();
        let mut bytes = model.to_checkpoint().to_bytes().unwrap();
        bytes.pop();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        bytes[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = Separator::<f32>::init(DitConfig::default(), 3).unwrap();
        let bytes = model.to_checkpoint().to_bytes().unwrap();
        let back = Separator::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_checkpoint().to_bytes().unwrap(), bytes);
    }
}
