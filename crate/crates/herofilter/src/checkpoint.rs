//! Binary model checkpoints.
//!
//! Layout: the 8 magic bytes `HFCKPT01`, a little-endian `u64` header
//! length, a UTF-8 JSON header, then `num_params` followed by
//! `num_patch_weights` little-endian `f64` values. The header records the
//! mixer configuration (which fixes every shape), the training seed, the
//! patch mode and both counts.

use std::fs;
use std::io::Write;
use std::path::Path;

use herofilter_core::mixer::{MixerConfig, MixerModel};
use herofilter_core::patcher::PatchMode;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::create;

pub const MAGIC: &[u8; 8] = b"HFCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    mixer: MixerConfig,
    seed: u64,
    patch_mode: PatchMode,
    num_params: usize,
    num_patch_weights: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MixerModel,
    /// Seed of the run that produced the model.
    pub seed: u64,
    pub patch_mode: PatchMode,
    /// Row weights of the patch tensor, flat `n × p`, when the run used
    /// soft-weighted patches.
    pub patch_weights: Option<Vec<f64>>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let weights = ckpt.patch_weights.as_deref().unwrap_or(&[]);
    let header = Header {
        mixer: ckpt.model.config().clone(),
        seed: ckpt.seed,
        patch_mode: ckpt.patch_mode,
        num_params: ckpt.model.num_params(),
        num_patch_weights: weights.len(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::io(path, e.into()))?;
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * (header.num_params + weights.len()));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for x in ckpt.model.params().iter().chain(weights) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut w = create(path)?;
    w.write_all(&buf)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::format(path, "missing file"));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let truncated = || Error::format(path, "truncated checkpoint");
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8-byte slice")) as usize;
    let body_start = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(truncated)?;
    let header: Header =
        serde_json::from_slice(&bytes[16..body_start]).map_err(|e| Error::format(path, e))?;
    let count = header.num_params + header.num_patch_weights;
    let body = &bytes[body_start..];
    if body.len() != 8 * count {
        return Err(truncated());
    }
    let mut values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let weights = values.split_off(header.num_params);
    Ok(Checkpoint {
        model: MixerModel::from_params(header.mixer, values)?,
        seed: header.seed,
        patch_mode: header.patch_mode,
        patch_weights: (header.num_patch_weights > 0).then_some(weights),
    })
}
