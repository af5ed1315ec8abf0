//! Single-file checkpoint archive.
//!
//! ```text
//! 0..4    ASCII "MRCK"
//! 4..8    u32 LE format version (1)
//! 8..16   u64 LE byte length H of the JSON header
//! 16..16+H  UTF-8 JSON header
//! ...     tensor payloads, in header order, each prod(shape) f64 LE values
//! ```
//!
//! The header holds the model and codec configs, the epoch, the best
//! validation loss, the serialized RNG state and the tensor directory
//! (`name`, `group`, `shape`). Parameters are always written as 64-bit floats.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::Tensor;
use crate::model::{MambaRate, ModelConfig, ModelError, ParamStore};
use crate::rbf::RbfConfig;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MRCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("tensor `{0}`: bad shape")]
    BadTensor(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorGroup {
    Parameter,
    Optimizer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub group: TensorGroup,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub rbf: RbfConfig,
    pub epoch: usize,
    pub val_loss: Option<f64>,
    pub rng_state: Vec<u8>,
    pub tensors: Vec<TensorEntry>,
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint<T> {
    pub config: ModelConfig,
    pub rbf: RbfConfig,
    pub parameters: ParamStore<T>,
    /// Optimizer moments and step counter, by name.
    pub optimizer_state: Vec<(String, Tensor<T>)>,
    pub rng_state: Vec<u8>,
    pub epoch: usize,
    pub val_loss: Option<f64>,
}

impl<T: Scalar> ModelCheckpoint<T> {
    pub fn from_model(model: &MambaRate<T>, rbf: RbfConfig) -> Self {
        Self {
            config: model.config().clone(),
            rbf,
            parameters: model.params().clone(),
            optimizer_state: Vec::new(),
            rng_state: Vec::new(),
            epoch: 0,
            val_loss: None,
        }
    }

    pub fn to_model(&self) -> Result<MambaRate<T>, ModelError> {
        MambaRate::from_parts(self.config.clone(), self.parameters.clone())
    }

    pub fn header(&self) -> CheckpointHeader {
        let entry = |name: &str, group, t: &Tensor<T>| TensorEntry {
            name: name.to_string(),
            group,
            shape: t.shape().to_vec(),
        };
        let tensors = self
            .parameters
            .iter()
            .map(|(n, t)| entry(n, TensorGroup::Parameter, t))
            .chain(self.optimizer_state.iter().map(|(n, t)| entry(n, TensorGroup::Optimizer, t)))
            .collect();
        CheckpointHeader {
            model: self.config.clone(),
            rbf: self.rbf.clone(),
            epoch: self.epoch,
            val_loss: self.val_loss,
            rng_state: self.rng_state.clone(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let payload: usize = self.parameters.numel() + self.optimizer_state.iter().map(|(_, t)| t.len()).sum::<usize>();
        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + 8 * payload);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let tensors = self.parameters.tensors().iter().chain(self.optimizer_state.iter().map(|(_, t)| t));
        for t in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_f64_lossless().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let header = read_header(bytes)?;
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut offset = PREFIX_LEN + header_len;
        let mut params = Vec::new();
        let mut optim = Vec::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let end = offset + 8 * n;
            if bytes.len() < end {
                return Err(CheckpointError::Truncated {
                    expected: end,
                    actual: bytes.len(),
                });
            }
            let data = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            let t = Tensor::from_vec(e.shape.clone(), data).map_err(|_| CheckpointError::BadTensor(e.name.clone()))?;
            match e.group {
                TensorGroup::Parameter => params.push((e.name.clone(), t)),
                TensorGroup::Optimizer => optim.push((e.name.clone(), t)),
            }
            offset = end;
        }
        if offset != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - offset));
        }
        let ck = Self {
            config: header.model,
            rbf: header.rbf,
            parameters: ParamStore::from_named(params),
            optimizer_state: optim,
            rng_state: header.rng_state,
            epoch: header.epoch,
            val_loss: header.val_loss,
        };
        // names and shapes must match what the config implies
        ck.to_model()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Parses only the prefix and JSON header.
pub fn read_header(bytes: &[u8]) -> Result<CheckpointHeader, CheckpointError> {
    if bytes.len() < PREFIX_LEN {
        return Err(CheckpointError::Truncated {
            expected: PREFIX_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let end = PREFIX_LEN.saturating_add(header_len);
    if bytes.len() < end {
        return Err(CheckpointError::Truncated {
            expected: end,
            actual: bytes.len(),
        });
    }
    Ok(serde_json::from_slice(&bytes[PREFIX_LEN..end])?)
}
