//! `PVTC1` tensor container used for checkpoints, optimizer state,
//! enrollment profiles and feature dumps.
//!
//! Layout:
//!
//! ```text
//! b"PVTC1"                      5 bytes
//! header_len: u64 (LE)          8 bytes
//! header: UTF-8 JSON            header_len bytes
//!   {"tensors": [{"name", "dtype": "f32", "shape", "byte_offset"}...],
//!    "attrs": {string: string}}
//! payload                       little-endian f32, contiguous, header order
//! ```
//!
//! `byte_offset` is relative to the start of the payload.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"PVTC1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn byte_len(&self) -> usize {
        self.data.len() * 4
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    tensors: Vec<Entry>,
    attrs: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    byte_offset: u64,
}

/// Ordered named tensors plus free-form string attributes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    pub tensors: Vec<(String, Tensor)>,
    pub attrs: BTreeMap<String, String>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::format(format!("duplicate tensor name {name}")));
        }
        self.tensors.push((name, tensor));
        Ok(())
    }

    pub fn extend(&mut self, tensors: impl IntoIterator<Item = (String, Tensor)>) -> Result<()> {
        for (n, t) in tensors {
            self.push(n, t)?;
        }
        Ok(())
    }

    pub fn set_attr(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.attrs.insert(key.into(), value.into());
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::format(format!("container has no tensor {name}")))
    }

    /// Tensors whose name starts with `prefix`.
    pub fn map_with_prefix(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.tensors
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(n, t)| (n.clone(), t.clone()))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::shape(format!("tensor {name}: shape/data length mismatch")));
            }
            entries.push(Entry {
                name: name.clone(),
                dtype: "f32".into(),
                shape: t.shape.clone(),
                byte_offset: offset,
            });
            offset += t.byte_len() as u64;
        }
        let header = serde_json::to_vec(&Header {
            tensors: entries,
            attrs: self.attrs.clone(),
        })
        .map_err(|e| Error::format(e.to_string()))?;
        let mut out = Vec::with_capacity(13 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 13 || &bytes[..5] != MAGIC {
            return Err(Error::format("not a PVTC1 container (bad magic)"));
        }
        let header_len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let header_end = 13usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::format("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&bytes[13..header_end])
            .map_err(|e| Error::format(format!("corrupt header: {e}")))?;
        let payload = &bytes[header_end..];
        let mut expected = 0u64;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            if e.dtype != "f32" {
                return Err(Error::format(format!("tensor {}: unsupported dtype {}", e.name, e.dtype)));
            }
            if e.byte_offset != expected {
                return Err(Error::format(format!(
                    "tensor {}: offset {} breaks contiguity (expected {expected})",
                    e.name, e.byte_offset
                )));
            }
            let n: usize = e.shape.iter().product();
            let start = e.byte_offset as usize;
            let end = start + n * 4;
            if end > payload.len() {
                return Err(Error::format(format!("tensor {}: payload truncated", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            expected = end as u64;
            tensors.push((e.name, Tensor { shape: e.shape, data }));
        }
        if expected as usize != payload.len() {
            return Err(Error::format(format!(
                "payload is {} bytes, header describes {expected}",
                payload.len()
            )));
        }
        Ok(Self {
            tensors,
            attrs: header.attrs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
