//! Tensor file format shared by model weights and steering vectors.
//!
//! Layout:
//!
//! ```text
//! [u64 little-endian: header length N]
//! [N bytes: UTF-8 JSON header]
//! [payload: every tensor's f32 values, little-endian, in header order]
//! ```
//!
//! The header is `{"dtype":"f32","metadata":{..},"tensors":[{"name":..,"shape":[..]},..]}`.
//! Tensor data is row-major. The payload length must equal the sum of the
//! shape products times four; anything else is rejected as a shape mismatch.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    #[serde(default)]
    metadata: BTreeMap<String, Value>,
    tensors: Vec<HeaderEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
}

/// Ordered named tensors plus free-form metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub metadata: BTreeMap<String, Value>,
    pub tensors: Vec<(String, Tensor)>,
}

impl TensorFile {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            dtype: "f32".into(),
            metadata: self.metadata.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| HeaderEntry {
                    name: name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let payload: usize = self.tensors.iter().map(|(_, t)| t.data.len() * 4).sum();
        let mut out = Vec::with_capacity(8 + json.len() + payload);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::WeightsFormat("file shorter than the length prefix".into()));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let rest = &bytes[8..];
        if n > rest.len() {
            return Err(Error::WeightsFormat(format!(
                "header length {n} exceeds file size"
            )));
        }
        let header: Header =
            serde_json::from_slice(&rest[..n]).map_err(|e| Error::json("tensor header", e))?;
        if header.dtype != "f32" {
            return Err(Error::WeightsFormat(format!("unsupported dtype {}", header.dtype)));
        }
        let payload = &rest[n..];
        let expected: usize = header
            .tensors
            .iter()
            .map(|e| e.shape.iter().product::<usize>() * 4)
            .sum();
        if payload.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "payload holds {} bytes, header shapes need {expected}",
                payload.len()
            )));
        }
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let len: usize = entry.shape.iter().product();
            let data = payload[offset..offset + len * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            offset += len * 4;
            tensors.push((entry.name, Tensor::new(entry.shape, data)));
        }
        Ok(Self {
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}
