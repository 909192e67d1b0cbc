//! Bit-exact checkpoint persistence.
//!
//! File layout:
//!
//! ```text
//! magic   b"TICL"
//! version u32 little-endian (currently 1)
//! meta    u64 little-endian byte length, then JSON (see [`CheckpointMeta`]):
//!         dtype, table name, step, final losses, RNG cursor, model and
//!         train configs, and one descriptor per weight array
//!         (name / shape / dtype / offset / element count, in order)
//! arrays  raw little-endian values, concatenated in descriptor order
//! check   u64 little-endian FNV-1a over the meta and array bytes
//! ```

use crate::error::CoreError;
use crate::model::{ModelConfig, Weights};
use crate::tensor::{Scalar, Tensor};
use crate::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TICL";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained weights plus everything needed to reproduce and consume them.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub weights: Weights<T>,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub table_name: String,
    pub step: usize,
    pub final_cls_loss: f64,
    pub final_reg_loss: f64,
    pub rng_cursor: u64,
    /// Set by the orchestration layer; empty for library-level runs.
    pub config_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayDesc {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    dtype: String,
    table: String,
    step: usize,
    final_cls_loss: f64,
    final_reg_loss: f64,
    rng_cursor: u64,
    config_hash: String,
    model_config: ModelConfig,
    train_config: TrainConfig,
    arrays: Vec<ArrayDesc>,
}

fn fnv1a64(chunks: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for chunk in chunks {
        for &b in *chunk {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Serializes a checkpoint to bytes (the exact file content).
pub fn checkpoint_bytes<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>, CoreError> {
    let mut array_bytes: Vec<u8> = Vec::new();
    let mut descs = Vec::new();
    for (name, arr) in ckpt.weights.named_arrays() {
        let offset = array_bytes.len();
        for &v in arr.values() {
            v.write_le(&mut array_bytes);
        }
        descs.push(ArrayDesc {
            name: name.to_string(),
            shape: arr.shape().to_vec(),
            dtype: T::DTYPE.to_string(),
            offset,
            len: arr.len(),
        });
    }
    let meta = CheckpointMeta {
        format: "ticl-checkpoint".into(),
        dtype: T::DTYPE.into(),
        table: ckpt.table_name.clone(),
        step: ckpt.step,
        final_cls_loss: ckpt.final_cls_loss,
        final_reg_loss: ckpt.final_reg_loss,
        rng_cursor: ckpt.rng_cursor,
        config_hash: ckpt.config_hash.clone(),
        model_config: ckpt.model_config,
        train_config: ckpt.train_config.clone(),
        arrays: descs,
    };
    let meta_bytes = serde_json::to_vec(&meta)
        .map_err(|e| CoreError::Checkpoint(format!("meta serialization: {e}")))?;

    let mut out = Vec::with_capacity(16 + meta_bytes.len() + array_bytes.len() + 8);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    out.extend_from_slice(&array_bytes);
    let checksum = fnv1a64(&[&meta_bytes, &array_bytes]);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: &Path) -> Result<(), CoreError> {
    let bytes = checkpoint_bytes(ckpt)?;
    std::fs::write(path, bytes).map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// FNV-1a checksum of the payload, as stored in the file tail; usable as a
/// cheap identity for determinism checks.
pub fn checkpoint_checksum<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<u64, CoreError> {
    let bytes = checkpoint_bytes(ckpt)?;
    Ok(u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap()))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, CoreError> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    load_checkpoint_bytes(&bytes)
}

pub fn load_checkpoint_bytes<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>, CoreError> {
    if bytes.len() < 16 {
        return Err(CoreError::Checkpoint("file truncated before header".into()));
    }
    if bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(CoreError::Checkpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload_start = 16;
    if bytes.len() < payload_start + meta_len + 8 {
        return Err(CoreError::Checkpoint(
            "header and payload lengths disagree".into(),
        ));
    }
    let meta_bytes = &bytes[payload_start..payload_start + meta_len];
    let array_bytes = &bytes[payload_start + meta_len..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = fnv1a64(&[meta_bytes, array_bytes]);
    if stored != computed {
        return Err(CoreError::Checkpoint(format!(
            "checksum mismatch: stored {stored:#x}, computed {computed:#x}"
        )));
    }

    let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)
        .map_err(|e| CoreError::Checkpoint(format!("meta parse: {e}")))?;
    if meta.dtype != T::DTYPE {
        return Err(CoreError::Checkpoint(format!(
            "dtype mismatch: file holds {}, caller wants {}",
            meta.dtype,
            T::DTYPE
        )));
    }

    let mut arrays = Vec::with_capacity(meta.arrays.len());
    for desc in &meta.arrays {
        if desc.dtype != T::DTYPE {
            return Err(CoreError::Checkpoint(format!(
                "array '{}' dtype {} does not match file dtype",
                desc.name, desc.dtype
            )));
        }
        let start = desc.offset;
        let end = start + desc.len * T::BYTES;
        if end > array_bytes.len() {
            return Err(CoreError::Checkpoint(format!(
                "array '{}' extends past payload end",
                desc.name
            )));
        }
        let data: Vec<T> = array_bytes[start..end]
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect();
        arrays.push(Tensor::from_vec(desc.shape.clone(), data)?);
    }
    // shape validation against the stored model config; a doctored f_max or
    // embed_dim surfaces here as an explicit shape error
    let weights = Weights::from_arrays(&meta.model_config, arrays)?;

    Ok(Checkpoint {
        weights,
        model_config: meta.model_config,
        train_config: meta.train_config,
        table_name: meta.table,
        step: meta.step,
        final_cls_loss: meta.final_cls_loss,
        final_reg_loss: meta.final_reg_loss,
        rng_cursor: meta.rng_cursor,
        config_hash: meta.config_hash,
    })
}
