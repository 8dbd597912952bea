//! Self-describing checkpoint container: magic, a length-prefixed JSON
//! header, then raw little-endian f32 tensor data.

use std::fs;
use std::path::Path;

use noisypairs_nn::Param;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, IoContext, Result};
use crate::raster::write_atomic;

const MAGIC: &[u8; 8] = b"NPCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ExperimentConfig,
    epoch: usize,
    best_val_loss: f64,
    val_history: Vec<f64>,
    tensors: Vec<TensorEntry>,
}

/// Encoder weights selected at the lowest validation loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    /// Zero-based epoch the weights come from.
    pub epoch: usize,
    pub best_val_loss: f64,
    /// Validation losses of every epoch run so far.
    pub val_history: Vec<f64>,
    pub encoder: Vec<Param>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let tensors = self
            .encoder
            .iter()
            .map(|p| {
                let e = TensorEntry {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    trainable: p.trainable,
                    offset,
                };
                offset += p.value.len();
                e
            })
            .collect();
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            best_val_loss: self.best_val_loss,
            val_history: self.val_history.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Shape(format!("checkpoint header: {e}")))?;
        let mut out = Vec::with_capacity(16 + json.len() + offset * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.encoder {
            for v in &p.value {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Shape(format!("corrupt checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        let data = &bytes[16 + len..];
        let mut encoder = Vec::with_capacity(header.tensors.len());
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            let raw = data
                .get(t.offset * 4..(t.offset + n) * 4)
                .ok_or_else(|| bad(&format!("tensor {} out of range", t.name)))?;
            let value = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            encoder.push(if t.trainable {
                Param::new(t.name, t.shape, value)
            } else {
                Param::buffer(t.name, t.shape, value)
            });
        }
        Ok(Checkpoint {
            config: header.config,
            epoch: header.epoch,
            best_val_loss: header.best_val_loss,
            val_history: header.val_history,
            encoder,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).at(path)?;
        Self::from_bytes(&bytes)
    }
}
