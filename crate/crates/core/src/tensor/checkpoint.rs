//! Binary checkpoint container.
//!
//! Layout: an 8-byte little-endian header length, a JSON header listing
//! every tensor's name, shape and byte offset, then the little-endian f32
//! payloads in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

pub const FORMAT: &str = "bttrain-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload section.
    pub offset: u64,
    /// Payload length in bytes.
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub metadata: serde_json::Value,
    pub tensors: Vec<CheckpointEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, DenseTensor<f32>)>,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Checkpoint {
            metadata,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: DenseTensor<f32>) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&DenseTensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn header(&self) -> CheckpointHeader {
        let mut offset = 0u64;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let len = 4 * t.len() as u64;
                let e = CheckpointEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                    len,
                };
                offset += len;
                e
            })
            .collect();
        CheckpointHeader {
            format: FORMAT.into(),
            version: VERSION,
            metadata: self.metadata.clone(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let payload: usize = self.tensors.iter().map(|(_, t)| 4 * t.len()).sum();
        let mut out = Vec::with_capacity(8 + header.len() + payload);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format("checkpoint shorter than its length prefix".into()));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = &bytes[8..];
        if body.len() < hlen {
            return Err(Error::Format(format!("header length {hlen} exceeds file size")));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])?;
        if header.format != FORMAT {
            return Err(Error::Format(format!("unknown format tag {:?}", header.format)));
        }
        if header.version != VERSION {
            return Err(Error::Format(format!("unsupported version {}", header.version)));
        }
        let payload = &body[hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            if e.len != 4 * n as u64 {
                return Err(Error::Format(format!("tensor {} length {} does not match shape", e.name, e.len)));
            }
            let start = e.offset as usize;
            let end = start + e.len as usize;
            let raw = payload
                .get(start..end)
                .ok_or_else(|| Error::Format(format!("tensor {} runs past end of payload", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((e.name.clone(), DenseTensor::new(e.shape.clone(), data)?));
        }
        Ok(Checkpoint {
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
