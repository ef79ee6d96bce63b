//! Single-file checkpoint container.
//!
//! Layout: an 8-byte magic with a format-version tag, a little-endian u32
//! header length, a JSON header (network config, frozen Fourier frequencies,
//! tensor index), then the raw and EMA tensors as little-endian 32-bit floats
//! in header order. Saving a loaded checkpoint reproduces the file byte for
//! byte.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{NetConfig, ScoreNet};
use super::tensor::{ParamStore, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SPDFCK01";

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    fourier_freqs: Vec<f64>,
    tensors: Vec<TensorMeta>,
}

/// Network config, frozen frequencies, raw weights and the EMA shadow copy.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub fourier_freqs: Vec<f64>,
    pub params: ParamStore,
    pub ema: ParamStore,
}

impl Checkpoint {
    pub fn new(net: &ScoreNet, params: ParamStore, ema: ParamStore) -> Self {
        Self {
            config: net.config().clone(),
            fourier_freqs: net.fourier_freqs().to_vec(),
            params,
            ema,
        }
    }

    /// Rebuilds the network half of the checkpoint.
    pub fn net(&self) -> Result<ScoreNet> {
        ScoreNet::from_parts(self.config.clone(), self.fourier_freqs.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let metas: Vec<TensorMeta> = self
            .params
            .iter()
            .map(|(name, t)| TensorMeta {
                name: name.clone(),
                shape: t.shape.clone(),
            })
            .collect();
        for meta in &metas {
            let e = self.ema.get(&meta.name);
            if e.shape != *self.params.get(&meta.name).shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "EMA shape mismatch for `{}`",
                    meta.name
                )));
            }
            let _ = e;
        }
        let header = Header {
            config: self.config.clone(),
            fourier_freqs: self.fourier_freqs.clone(),
            tensors: metas,
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header serialization failed: {e}")))?;

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        for store in [&self.params, &self.ema] {
            for (_, t) in store.iter() {
                for &v in &t.data {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        std::fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a checkpoint (bad magic)",
                path.display()
            )));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
            .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;

        let mut pos = 12 + header_len;
        let read_store = |pos: &mut usize| -> Result<ParamStore> {
            let mut store = ParamStore::new();
            for meta in &header.tensors {
                let mut t = Tensor::zeros(meta.shape.clone());
                let n_bytes = t.numel() * 4;
                let slice = bytes.get(*pos..*pos + n_bytes).ok_or_else(|| {
                    Error::Checkpoint(format!("truncated tensor data for `{}`", meta.name))
                })?;
                for (v, chunk) in t.data.iter_mut().zip(slice.chunks_exact(4)) {
                    *v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
                }
                *pos += n_bytes;
                store.insert(meta.name.clone(), t);
            }
            Ok(store)
        };
        let params = read_store(&mut pos)?;
        let ema = read_store(&mut pos)?;
        Ok(Self {
            config: header.config,
            fourier_freqs: header.fourier_freqs,
            params,
            ema,
        })
    }
}
