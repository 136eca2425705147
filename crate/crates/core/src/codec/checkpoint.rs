//! Checkpoint file: 8-byte magic, little-endian `u32` header length, JSON
//! header (format version, model metadata, tensor table), then each tensor
//! as little-endian `f32` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{CodecMeta, CodecModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

const MAGIC: &[u8; 8] = b"LICACKPT";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    meta: CodecMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

impl CodecModel<f32> {
    /// Serialized checkpoint bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.params();
        let header = Header {
            format_version: CHECKPOINT_FORMAT_VERSION,
            meta: self.meta().clone(),
            tensors: self
                .param_names()
                .into_iter()
                .zip(&params)
                .map(|(name, p)| TensorEntry { name, len: p.len() })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + header.len() + 4 * params.iter().map(|p| p.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in params {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Checkpoint {
            path: origin.to_owned(),
            reason: reason.to_owned(),
        };
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + header_len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(bad(&format!(
                "format version {} not supported",
                header.format_version
            )));
        }
        let mut model = CodecModel::<f32>::new(header.meta.clone())?;
        let names = model.param_names();
        if names.len() != header.tensors.len() {
            return Err(bad("tensor count does not match architecture"));
        }
        let mut cursor = 12 + header_len;
        for ((slot, name), entry) in model.params_mut().into_iter().zip(&names).zip(&header.tensors) {
            if &entry.name != name || entry.len != slot.len() {
                return Err(bad(&format!("tensor {} has unexpected layout", entry.name)));
            }
            let raw = bytes
                .get(cursor..cursor + 4 * entry.len)
                .ok_or_else(|| bad("truncated parameter blob"))?;
            for (dst, chunk) in slot.iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
            cursor += 4 * entry.len;
        }
        if cursor != bytes.len() {
            return Err(bad("trailing bytes after parameter blob"));
        }
        *model.meta_mut() = header.meta;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
