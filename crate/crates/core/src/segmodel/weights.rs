//! Portable weight file.
//!
//! Layout (little-endian): magic `BSNW`, `u32` format version, `u64` header
//! length, JSON header `{config, history, best_epoch, n_params, n_buffers}`,
//! `f64` parameters, `f64` batch-norm running statistics, and a trailing
//! SHA-256 of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::model::{EpochRecord, SegmentationModel};
use super::ModelError;

pub const WEIGHT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"BSNW";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    history: Vec<EpochRecord>,
    best_epoch: Option<usize>,
    n_params: usize,
    n_buffers: usize,
}

pub fn encode(model: &SegmentationModel) -> Vec<u8> {
    let header = Header {
        config: model.config.clone(),
        history: model.history.clone(),
        best_epoch: model.best_epoch,
        n_params: model.params.len(),
        n_buffers: model.buffers.len(),
    };
    let header = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(16 + header.len() + 8 * (model.params.len() + model.buffers.len()) + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&WEIGHT_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in model.params.iter().chain(&model.buffers) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode(bytes: &[u8]) -> Result<SegmentationModel, ModelError> {
    let corrupt = |m: &str| ModelError::CorruptFile(m.to_string());
    if bytes.len() < 16 + 32 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing weight-file signature"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != WEIGHT_FORMAT_VERSION {
        return Err(ModelError::VersionMismatch {
            expected: WEIGHT_FORMAT_VERSION,
            found: version,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body)[..] != *digest {
        return Err(corrupt("checksum mismatch (truncated or modified file)"));
    }
    let header_len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize.checked_add(header_len).filter(|&e| e <= body.len()).ok_or_else(|| corrupt("header overruns file"))?;
    let header: Header = serde_json::from_slice(&body[16..header_end]).map_err(|e| ModelError::CorruptFile(format!("bad header: {e}")))?;
    let values = &body[header_end..];
    if values.len() != 8 * (header.n_params + header.n_buffers) {
        return Err(corrupt("parameter block has the wrong length"));
    }
    let mut floats = values.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let params: Vec<f64> = floats.by_ref().take(header.n_params).collect();
    let buffers: Vec<f64> = floats.collect();
    SegmentationModel::from_parts(header.config, params, buffers, header.history, header.best_epoch)
}

pub fn export_weights(model: &SegmentationModel, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, encode(model)).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn import_weights(path: &Path) -> Result<SegmentationModel, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    decode(&bytes)
}
