//! Byte-level reader and writer.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "GGUF" | u32 version=3 | u64 tensor_count | u64 kv_count
//! kv*      : string key | u32 type tag | value
//! tensor*  : string name | u32 n_dims | u64 dims[n_dims] | u32 dtype | u64 offset
//! zero padding to a 32-byte boundary (only when tensors are present)
//! payloads : in declaration order, each starting on a 32-byte boundary
//! ```
//!
//! Strings are a `u64` byte length followed by UTF-8 bytes. Dims are stored
//! innermost first, as GGML does.

use std::collections::HashSet;
use std::io::{Read, Write};

use super::{
    ContainerError, ContainerModel, ContainerTensor, DType, MetadataValue, TensorData, ALIGNMENT,
    MAGIC, MAX_DIMS, MAX_NAME_LEN, VERSION,
};
use crate::quantizer::{QuantBlock, BLOCK_SIZE, PACKED_BLOCK_BYTES};

const TAG_U32: u32 = 4;
const TAG_F32: u32 = 6;
const TAG_BOOL: u32 = 7;
const TAG_STRING: u32 = 8;
const TAG_U64: u32 = 10;

pub(crate) fn align_up(x: u64) -> u64 {
    x.div_ceil(ALIGNMENT) * ALIGNMENT
}

fn put_string(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u64).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn payload_bytes(tensor: &ContainerTensor) -> Vec<u8> {
    match &tensor.data {
        TensorData::F32(values) => values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        TensorData::Q4B32(blocks) => blocks.iter().flat_map(|b| b.to_bytes()).collect(),
    }
}

fn check_model(model: &ContainerModel) -> Result<(), ContainerError> {
    let mut names = HashSet::new();
    for t in &model.tensors {
        if t.name.is_empty() || t.name.len() > MAX_NAME_LEN {
            return Err(ContainerError::InvalidName {
                name: t.name.clone(),
            });
        }
        if !names.insert(t.name.as_str()) {
            return Err(ContainerError::DuplicateName {
                name: t.name.clone(),
            });
        }
        if t.dims.len() > MAX_DIMS {
            return Err(ContainerError::TooManyDims {
                tensor: t.name.clone(),
                n_dims: t.dims.len() as u32,
                offset: None,
            });
        }
        let elements = t.element_count();
        let ok = match &t.data {
            TensorData::F32(v) => v.len() as u64 == elements,
            TensorData::Q4B32(b) => {
                elements % BLOCK_SIZE as u64 == 0 && b.len() as u64 == elements / BLOCK_SIZE as u64
            }
        };
        if !ok {
            return Err(ContainerError::PayloadShape {
                tensor: t.name.clone(),
            });
        }
    }
    Ok(())
}

/// Serializes `model`; identical models give identical bytes.
pub fn write_container<W: Write>(sink: &mut W, model: &ContainerModel) -> Result<u64, ContainerError> {
    let bytes = to_bytes(model)?;
    sink.write_all(&bytes)?;
    Ok(bytes.len() as u64)
}

pub fn to_bytes(model: &ContainerModel) -> Result<Vec<u8>, ContainerError> {
    check_model(model)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.tensors.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(model.metadata.len() as u64).to_le_bytes());

    for (key, value) in &model.metadata {
        put_string(&mut buf, key);
        match value {
            MetadataValue::U32(v) => {
                buf.extend_from_slice(&TAG_U32.to_le_bytes());
                buf.extend_from_slice(&v.to_le_bytes());
            }
            MetadataValue::F32(v) => {
                buf.extend_from_slice(&TAG_F32.to_le_bytes());
                buf.extend_from_slice(&v.to_le_bytes());
            }
            MetadataValue::Bool(v) => {
                buf.extend_from_slice(&TAG_BOOL.to_le_bytes());
                buf.push(*v as u8);
            }
            MetadataValue::String(v) => {
                buf.extend_from_slice(&TAG_STRING.to_le_bytes());
                put_string(&mut buf, v);
            }
            MetadataValue::U64(v) => {
                buf.extend_from_slice(&TAG_U64.to_le_bytes());
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }

    let payloads: Vec<Vec<u8>> = model.tensors.iter().map(payload_bytes).collect();
    let mut offset = 0u64;
    for (t, payload) in model.tensors.iter().zip(&payloads) {
        put_string(&mut buf, &t.name);
        buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        buf.extend_from_slice(&(t.dtype() as u32).to_le_bytes());
        buf.extend_from_slice(&offset.to_le_bytes());
        offset = align_up(offset + payload.len() as u64);
    }

    if !model.tensors.is_empty() {
        let data_start = align_up(buf.len() as u64) as usize;
        buf.resize(data_start, 0);
        for payload in &payloads {
            let start = data_start + align_up((buf.len() - data_start) as u64) as usize;
            buf.resize(start, 0);
            buf.extend_from_slice(payload);
        }
    }
    Ok(buf)
}

/// Bounds-checked little-endian cursor.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: u64, context: &str) -> Result<&'a [u8], ContainerError> {
        let remaining = (self.bytes.len() - self.pos) as u64;
        if n > remaining {
            return Err(ContainerError::Truncated {
                offset: self.pos as u64,
                context: context.to_string(),
            });
        }
        let n = n as usize;
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, context: &str) -> Result<u8, ContainerError> {
        Ok(self.take(1, context)?[0])
    }

    fn u32(&mut self, context: &str) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    fn u64(&mut self, context: &str) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8, context)?.try_into().unwrap()))
    }

    fn f32(&mut self, context: &str) -> Result<f32, ContainerError> {
        Ok(f32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    fn string(&mut self, context: &str) -> Result<String, ContainerError> {
        let start = self.pos as u64;
        let len = self.u64(context)?;
        let raw = self.take(len, context)?;
        String::from_utf8(raw.to_vec()).map_err(|_| ContainerError::InvalidUtf8 {
            offset: start,
            context: context.to_string(),
        })
    }
}

struct RawInfo {
    name: String,
    dims: Vec<u64>,
    dtype: DType,
    offset: u64,
    info_offset: u64,
}

fn payload_len(info: &RawInfo) -> Result<u64, ContainerError> {
    let overflow = || ContainerError::PayloadShape {
        tensor: info.name.clone(),
    };
    let elements = info
        .dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(overflow)?;
    match info.dtype {
        DType::F32 => elements.checked_mul(4).ok_or_else(overflow),
        DType::Q4B32 => {
            if elements % BLOCK_SIZE as u64 != 0 {
                return Err(overflow());
            }
            Ok(elements / BLOCK_SIZE as u64 * PACKED_BLOCK_BYTES as u64)
        }
    }
}

/// Parses a complete container image.
pub fn from_bytes(bytes: &[u8]) -> Result<ContainerModel, ContainerError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(ContainerError::BadMagic {
            offset: 0,
            found: magic.to_vec(),
        });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion { offset: 4, version });
    }
    let tensor_count = cur.u64("tensor count")?;
    let kv_count = cur.u64("metadata count")?;

    let mut metadata = Vec::new();
    for i in 0..kv_count {
        let key = cur.string(&format!("metadata key {i}"))?;
        let tag_offset = cur.pos as u64;
        let ctx = format!("metadata value '{key}'");
        let tag = cur.u32(&ctx)?;
        let value = match tag {
            TAG_U32 => MetadataValue::U32(cur.u32(&ctx)?),
            TAG_F32 => MetadataValue::F32(cur.f32(&ctx)?),
            TAG_BOOL => {
                let at = cur.pos as u64;
                match cur.u8(&ctx)? {
                    0 => MetadataValue::Bool(false),
                    1 => MetadataValue::Bool(true),
                    value => return Err(ContainerError::InvalidBool { offset: at, value }),
                }
            }
            TAG_STRING => MetadataValue::String(cur.string(&ctx)?),
            TAG_U64 => MetadataValue::U64(cur.u64(&ctx)?),
            other => {
                return Err(ContainerError::UnknownValueType {
                    offset: tag_offset,
                    tag: other,
                    key,
                })
            }
        };
        metadata.push((key, value));
    }

    let mut infos: Vec<RawInfo> = Vec::new();
    let mut names = HashSet::new();
    for i in 0..tensor_count {
        let info_offset = cur.pos as u64;
        let name = cur.string(&format!("tensor info {i} name"))?;
        if name.is_empty() || name.len() > MAX_NAME_LEN {
            return Err(ContainerError::InvalidName { name });
        }
        if !names.insert(name.clone()) {
            return Err(ContainerError::DuplicateName { name });
        }
        let ctx = format!("tensor info '{name}'");
        let dims_offset = cur.pos as u64;
        let n_dims = cur.u32(&ctx)?;
        if n_dims as usize > MAX_DIMS {
            return Err(ContainerError::TooManyDims {
                tensor: name,
                n_dims,
                offset: Some(dims_offset),
            });
        }
        let dims = (0..n_dims)
            .map(|_| cur.u64(&ctx))
            .collect::<Result<Vec<_>, _>>()?;
        let dtype_offset = cur.pos as u64;
        let raw_dtype = cur.u32(&ctx)?;
        let dtype = DType::from_u32(raw_dtype).ok_or(ContainerError::UnknownDtype {
            offset: dtype_offset,
            dtype: raw_dtype,
            tensor: name.clone(),
        })?;
        let offset = cur.u64(&ctx)?;
        infos.push(RawInfo {
            name,
            dims,
            dtype,
            offset,
            info_offset,
        });
    }

    let mut tensors = Vec::new();
    if !infos.is_empty() {
        let data_start = align_up(cur.pos as u64);
        let pad_at = cur.pos as u64;
        let pad = cur.take(data_start - pad_at, "alignment padding before tensor data")?;
        if pad.iter().any(|&b| b != 0) {
            return Err(ContainerError::NonZeroPadding { offset: pad_at });
        }
        let mut expected = 0u64;
        for info in &infos {
            if info.offset % ALIGNMENT != 0 {
                return Err(ContainerError::MisalignedOffset {
                    offset: info.info_offset,
                    tensor: info.name.clone(),
                    value: info.offset,
                });
            }
            if info.offset != expected {
                return Err(ContainerError::NonCanonicalOffset {
                    offset: info.info_offset,
                    tensor: info.name.clone(),
                    value: info.offset,
                    expected,
                });
            }
            let len = payload_len(info)?;
            let pad_at = cur.pos as u64;
            let pad = cur.take(
                data_start + info.offset - pad_at,
                &format!("padding before tensor '{}'", info.name),
            )?;
            if pad.iter().any(|&b| b != 0) {
                return Err(ContainerError::NonZeroPadding { offset: pad_at });
            }
            let payload_at = cur.pos as u64;
            let raw = cur.take(len, &format!("tensor '{}' payload", info.name))?;
            let data = match info.dtype {
                DType::F32 => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DType::Q4B32 => TensorData::Q4B32(
                    raw.chunks_exact(PACKED_BLOCK_BYTES)
                        .enumerate()
                        .map(|(b, c)| {
                            QuantBlock::from_bytes(c).map_err(|e| ContainerError::InvalidBlock {
                                offset: payload_at + (b * PACKED_BLOCK_BYTES) as u64,
                                tensor: info.name.clone(),
                                reason: e.to_string(),
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                ),
            };
            tensors.push(ContainerTensor {
                name: info.name.clone(),
                dims: info.dims.clone(),
                data,
            });
            expected = align_up(info.offset + len);
        }
    }

    if cur.pos != bytes.len() {
        return Err(ContainerError::TrailingBytes {
            offset: cur.pos as u64,
        });
    }
    Ok(ContainerModel { metadata, tensors })
}

pub fn read_container<R: Read>(source: &mut R) -> Result<ContainerModel, ContainerError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
