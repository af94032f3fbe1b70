//! Binary checkpoint format.
//!
//! Layout: `b"VFCK"`, version (`u32` LE), the first 8 bytes of the SHA-256
//! of the canonical model config, then every parameter followed by every
//! running statistic as `f32` LE in declaration order.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::ParamSet;
use super::{Model, ModelConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VFCK";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

/// Truncated SHA-256 of the config's canonical form.
pub fn config_digest(config: &ModelConfig) -> [u8; 8] {
    let full = Sha256::digest(config.canonical().as_bytes());
    let mut out = [0u8; 8];
    out.copy_from_slice(&full[..8]);
    out
}

pub fn encode(model: &Model<f32>) -> Vec<u8> {
    let values = model.params.flatten();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&config_digest(&model.config));
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a checkpoint for `config`, refusing files written for any other
/// configuration.
pub fn decode(bytes: &[u8], config: &ModelConfig) -> Result<Model<f32>> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    if bytes[8..16] != config_digest(config) {
        return Err(Error::Checkpoint(
            "config digest mismatch: checkpoint was written for a different model".into(),
        ));
    }
    let arch = config.architecture()?;
    let mut params: ParamSet<f32> = super::init_params(&arch, 0);
    let body = &bytes[HEADER_LEN..];
    let total: usize = params.params.iter().chain(&params.buffers).map(|t| t.len()).sum();
    if body.len() != 4 * total {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            4 * total,
            body.len()
        )));
    }
    let mut vals = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    for t in params.params.iter_mut().chain(params.buffers.iter_mut()) {
        for v in &mut t.data {
            *v = vals.next().expect("length checked");
        }
    }
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Model::new(config.clone(), params)
}

pub fn save(path: &Path, model: &Model<f32>) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, config: &ModelConfig) -> Result<Model<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, config)
}
