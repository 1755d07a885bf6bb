//! GGUF-style model container.
//!
//! Header and metadata follow the public GGUF v3 layout for a subset of
//! value types (u32, f32, bool, string, u64), so F32-only files are readable
//! by other GGUF tooling. Quantized tensors use the private dtype id
//! [`DType::Q4B32`] (1000), outside GGML's id space.

mod format;
mod policy_io;
mod validate;

use serde::Serialize;
use thiserror::Error;

pub use format::{from_bytes, read_container, to_bytes, write_container};
pub use policy_io::{
    dataset_from_model, dataset_to_model, policy_from_model, policy_to_model, ModelKind,
    PolicyBundle, KEY_ARCH, KEY_BACKEND_LAYERS, KEY_BACKEND_N_CTX, KEY_CODEC, KEY_MAX_TOKENS,
    KEY_V_BINS, KEY_V_MAX, KEY_V_MIN, KEY_W_BINS, KEY_W_MAX, KEY_W_MIN, REQUIRED_POLICY_KEYS,
};
pub use validate::{validate_container, CheckStatus, ValidationCheck, ValidationReport};

use crate::quantizer::QuantBlock;

pub const MAGIC: &[u8; 4] = b"GGUF";
pub const VERSION: u32 = 3;
pub const ALIGNMENT: u64 = 32;
pub const MAX_NAME_LEN: usize = 64;
pub const MAX_DIMS: usize = 4;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic at offset {offset}: {found:02X?}")]
    BadMagic { offset: u64, found: Vec<u8> },
    #[error("unsupported version {version} at offset {offset} (only 3 is accepted)")]
    UnsupportedVersion { offset: u64, version: u32 },
    #[error("truncated stream at offset {offset} while reading {context}")]
    Truncated { offset: u64, context: String },
    #[error("unknown metadata value type {tag} for key '{key}' at offset {offset}")]
    UnknownValueType { offset: u64, tag: u32, key: String },
    #[error("unknown dtype {dtype} for tensor '{tensor}' at offset {offset}")]
    UnknownDtype { offset: u64, dtype: u32, tensor: String },
    #[error("tensor '{tensor}' data offset {value} is not {ALIGNMENT}-byte aligned (info at offset {offset})")]
    MisalignedOffset { offset: u64, tensor: String, value: u64 },
    #[error("tensor '{tensor}' data offset {value} should be {expected} (info at offset {offset})")]
    NonCanonicalOffset {
        offset: u64,
        tensor: String,
        value: u64,
        expected: u64,
    },
    #[error("non-zero padding byte at offset {offset}")]
    NonZeroPadding { offset: u64 },
    #[error("invalid UTF-8 in {context} at offset {offset}")]
    InvalidUtf8 { offset: u64, context: String },
    #[error("invalid bool byte {value} at offset {offset}")]
    InvalidBool { offset: u64, value: u8 },
    #[error("invalid tensor name '{name}' (must be 1..=64 bytes)")]
    InvalidName { name: String },
    #[error("duplicate tensor name '{name}'")]
    DuplicateName { name: String },
    #[error("tensor '{tensor}' has {n_dims} dims (max 4){}", offset.map(|o| format!(" at offset {o}")).unwrap_or_default())]
    TooManyDims {
        tensor: String,
        n_dims: u32,
        offset: Option<u64>,
    },
    #[error("payload of tensor '{tensor}' does not match its dims and dtype")]
    PayloadShape { tensor: String },
    #[error("invalid quantized block in tensor '{tensor}' at offset {offset}: {reason}")]
    InvalidBlock {
        offset: u64,
        tensor: String,
        reason: String,
    },
    #[error("unexpected trailing bytes at offset {offset}")]
    TrailingBytes { offset: u64 },
    #[error("missing or mistyped metadata key '{0}'")]
    MissingKey(String),
    #[error("missing tensor '{0}'")]
    MissingTensor(String),
    #[error("invalid model content: {0}")]
    Content(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl ContainerError {
    /// Short machine-readable class name.
    pub fn class(&self) -> &'static str {
        match self {
            Self::BadMagic { .. } => "bad_magic",
            Self::UnsupportedVersion { .. } => "unsupported_version",
            Self::Truncated { .. } => "truncated",
            Self::UnknownValueType { .. } => "unknown_kv_tag",
            Self::UnknownDtype { .. } => "unknown_dtype",
            Self::MisalignedOffset { .. } => "misaligned_offset",
            Self::NonCanonicalOffset { .. } => "non_canonical_offset",
            Self::NonZeroPadding { .. } => "non_zero_padding",
            Self::InvalidUtf8 { .. } => "invalid_utf8",
            Self::InvalidBool { .. } => "invalid_bool",
            Self::InvalidName { .. } => "invalid_name",
            Self::DuplicateName { .. } => "duplicate_name",
            Self::TooManyDims { .. } => "too_many_dims",
            Self::PayloadShape { .. } => "payload_shape",
            Self::InvalidBlock { .. } => "invalid_block",
            Self::TrailingBytes { .. } => "trailing_bytes",
            Self::MissingKey(_) => "missing_key",
            Self::MissingTensor(_) => "missing_tensor",
            Self::Content(_) => "invalid_content",
            Self::Io(_) => "io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[repr(u32)]
pub enum DType {
    F32 = 0,
    /// 4-bit blocks of 32 with f32 scale and base (24 bytes per block).
    Q4B32 = 1000,
}

impl DType {
    pub fn from_u32(v: u32) -> Option<Self> {
        match v {
            0 => Some(Self::F32),
            1000 => Some(Self::Q4B32),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::F32 => "F32",
            Self::Q4B32 => "Q4B32",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MetadataValue {
    U32(u32),
    F32(f32),
    Bool(bool),
    String(String),
    U64(u64),
}

impl std::fmt::Display for MetadataValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::U32(v) => write!(f, "{v} (u32)"),
            Self::F32(v) => write!(f, "{v} (f32)"),
            Self::Bool(v) => write!(f, "{v} (bool)"),
            Self::String(v) => write!(f, "{v:?} (string)"),
            Self::U64(v) => write!(f, "{v} (u64)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    Q4B32(Vec<QuantBlock>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerTensor {
    pub name: String,
    /// Innermost dimension first.
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl ContainerTensor {
    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::Q4B32(_) => DType::Q4B32,
        }
    }

    pub fn element_count(&self) -> u64 {
        self.dims.iter().product()
    }

    pub fn payload_size(&self) -> u64 {
        match &self.data {
            TensorData::F32(v) => 4 * v.len() as u64,
            TensorData::Q4B32(b) => (crate::quantizer::PACKED_BLOCK_BYTES * b.len()) as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContainerModel {
    pub metadata: Vec<(String, MetadataValue)>,
    pub tensors: Vec<ContainerTensor>,
}

impl ContainerModel {
    pub fn get(&self, key: &str) -> Option<&MetadataValue> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn tensor(&self, name: &str) -> Option<&ContainerTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn u32(&self, key: &str) -> Result<u32, ContainerError> {
        match self.get(key) {
            Some(MetadataValue::U32(v)) => Ok(*v),
            _ => Err(ContainerError::MissingKey(key.to_string())),
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64, ContainerError> {
        match self.get(key) {
            Some(MetadataValue::U64(v)) => Ok(*v),
            _ => Err(ContainerError::MissingKey(key.to_string())),
        }
    }

    pub fn f32(&self, key: &str) -> Result<f32, ContainerError> {
        match self.get(key) {
            Some(MetadataValue::F32(v)) => Ok(*v),
            _ => Err(ContainerError::MissingKey(key.to_string())),
        }
    }

    pub fn string(&self, key: &str) -> Result<&str, ContainerError> {
        match self.get(key) {
            Some(MetadataValue::String(v)) => Ok(v),
            _ => Err(ContainerError::MissingKey(key.to_string())),
        }
    }
}
