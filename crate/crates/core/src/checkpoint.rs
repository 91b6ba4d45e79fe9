//! Versioned binary checkpoint: a JSON header (model configuration, context
//! schema, vocabulary, matrix manifest) followed by raw little-endian matrix
//! data. Round-trips bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextSchema;
use crate::data::Vocab;
use crate::kernel::{Matrix, ParamSet, Real};
use crate::model::ModelConfig;

const MAGIC: &[u8; 8] = b"CTXRECK1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint declares unknown parameter `{0}`")]
    UnknownParam(String),
}

/// A trained model with everything inference needs.
pub struct Checkpoint<S: Real> {
    pub model: ModelConfig,
    pub schema: ContextSchema,
    pub vocab: Vocab,
    pub params: ParamSet<S>,
}

/// Checkpoint with the precision resolved at load time.
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

impl AnyCheckpoint {
    pub fn model(&self) -> &ModelConfig {
        match self {
            AnyCheckpoint::F32(c) => &c.model,
            AnyCheckpoint::F64(c) => &c.model,
        }
    }

    pub fn schema(&self) -> &ContextSchema {
        match self {
            AnyCheckpoint::F32(c) => &c.schema,
            AnyCheckpoint::F64(c) => &c.schema,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        match self {
            AnyCheckpoint::F32(c) => &c.vocab,
            AnyCheckpoint::F64(c) => &c.vocab,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    precision: String,
    model: ModelConfig,
    schema: ContextSchema,
    vocab_items: Vec<String>,
    vocab_oov: Option<u32>,
    matrices: Vec<MatrixEntry>,
}

pub fn checkpoint_to_bytes<S: Real>(ckpt: &Checkpoint<S>) -> Vec<u8> {
    let matrices: Vec<MatrixEntry> = ckpt
        .params
        .iter()
        .map(|(name, m)| MatrixEntry {
            name: name.to_string(),
            rows: m.rows(),
            cols: m.cols(),
        })
        .collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        precision: S::NAME.to_string(),
        model: ckpt.model.clone(),
        schema: ckpt.schema.clone(),
        vocab_items: ckpt.vocab.items().to_vec(),
        vocab_oov: ckpt.vocab.oov_index(),
        matrices,
    };
    let header_json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, matrix) in ckpt.params.iter() {
        for &value in matrix.data() {
            value.write_le(&mut out);
        }
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<AnyCheckpoint, CheckpointError> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16 + header_len;
    if bytes.len() < header_end {
        return Err(CheckpointError::Corrupt("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::BadVersion(header.format_version));
    }
    let payload = &bytes[header_end..];
    match header.precision.as_str() {
        "f64" => Ok(AnyCheckpoint::F64(decode_params::<f64>(header, payload)?)),
        "f32" => Ok(AnyCheckpoint::F32(decode_params::<f32>(header, payload)?)),
        other => Err(CheckpointError::Corrupt(format!(
            "unknown precision `{other}`"
        ))),
    }
}

fn decode_params<S: Real>(
    header: Header,
    payload: &[u8],
) -> Result<Checkpoint<S>, CheckpointError> {
    let mut params = ParamSet::new();
    let mut offset = 0usize;
    for entry in &header.matrices {
        let name = static_param_name(&header.model, &entry.name)
            .ok_or_else(|| CheckpointError::UnknownParam(entry.name.clone()))?;
        let count = entry.rows * entry.cols;
        let end = offset + count * S::BYTES;
        if payload.len() < end {
            return Err(CheckpointError::Corrupt(format!(
                "matrix `{}` truncated",
                entry.name
            )));
        }
        let data: Vec<S> = payload[offset..end]
            .chunks_exact(S::BYTES)
            .map(S::read_le)
            .collect();
        offset = end;
        let matrix = Matrix::from_vec(entry.rows, entry.cols, data)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        params.insert(name, matrix);
    }
    if offset != payload.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            payload.len() - offset
        )));
    }
    Ok(Checkpoint {
        model: header.model,
        schema: header.schema,
        vocab: Vocab::from_parts(header.vocab_items, header.vocab_oov),
        params,
    })
}

/// Map a parameter name from the file back to its static key, accepting only
/// names the configuration actually declares.
fn static_param_name(model: &ModelConfig, name: &str) -> Option<&'static str> {
    model.param_names().into_iter().find(|&n| n == name)
}

pub fn save_checkpoint<S: Real>(path: &Path, ckpt: &Checkpoint<S>) -> Result<(), CheckpointError> {
    std::fs::write(path, checkpoint_to_bytes(ckpt)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<AnyCheckpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    checkpoint_from_bytes(&bytes)
}
