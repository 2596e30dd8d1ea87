//! Checkpoint container.
//!
//! ```text
//! 8 bytes   magic "KSTGCKPT"
//! 8 bytes   manifest length L, u64 little-endian
//! L bytes   JSON manifest
//! …         tensor blobs, raw little-endian f32, in manifest order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::inn::model::{Model, ModelConfig};
use crate::inn::subnet::Init;

const MAGIC: &[u8; 8] = b"KSTGCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    model: ModelConfig,
    steps: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
    /// Byte offset of the blob relative to the end of the manifest.
    offset: u64,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Model {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.params();
        let mut tensors = Vec::with_capacity(params.len());
        let mut offset = 0u64;
        for id in params.ids() {
            let v = params.value(id);
            tensors.push(TensorEntry {
                name: params.name(id).to_owned(),
                shape: v.shape().to_array(),
                offset,
            });
            offset += 4 * v.len() as u64;
        }
        let manifest = Manifest {
            version: FORMAT_VERSION,
            model: self.config().clone(),
            steps: self.steps(),
            tensors,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for id in params.ids() {
            for v in params.value(id).data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a keystego checkpoint"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(16..16 + len)
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(json)?;
        if manifest.version != FORMAT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {}", manifest.version)));
        }
        let blobs = &bytes[16 + len..];
        let mut model = Model::new(manifest.model, Init::Zero, 0)?;
        let params = model.params_mut();
        if manifest.tensors.len() != params.len() {
            return Err(bad(format!(
                "checkpoint has {} tensors, model expects {}",
                manifest.tensors.len(),
                params.len()
            )));
        }
        let mut expected_offset = 0u64;
        for entry in &manifest.tensors {
            let id = params
                .find(&entry.name)
                .ok_or_else(|| bad(format!("unknown tensor {:?}", entry.name)))?;
            let [n, c, h, w] = entry.shape;
            let shape = Shape::new(n, c, h, w);
            if entry.offset != expected_offset {
                return Err(bad(format!("tensor {:?} at unexpected offset", entry.name)));
            }
            let start = entry.offset as usize;
            let raw = blobs
                .get(start..start + 4 * shape.len())
                .ok_or_else(|| bad(format!("truncated blob for {:?}", entry.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            params
                .set_value(id, Tensor::new(shape, data)?)
                .map_err(|e| bad(e.to_string()))?;
            expected_offset += 4 * shape.len() as u64;
        }
        if blobs.len() as u64 != expected_offset {
            return Err(bad("trailing bytes after tensor blobs"));
        }
        params.set_step(manifest.steps);
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
