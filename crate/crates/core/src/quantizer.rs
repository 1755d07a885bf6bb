//! Blockwise 4-bit post-training weight quantization.
//!
//! Codec `Q4B32`: 32 consecutive weights share an `f32` scale `s` and base
//! `m`; each weight keeps a 4-bit code `c` and reconstructs as `m + s * c`.
//! Packed layout per block (little-endian, 24 bytes): scale, base, then 16
//! code bytes with element `2k` in the low nibble of byte `k`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{
    greedy_decode, DecodeConfig, FrozenPolicy, Observation, PolicyError, PolicyParams,
    GOAL_EMBEDDING, PREV_TOKEN_EMBEDDING, W1, W2,
};
use crate::tensor::F32Tensor;

pub const BLOCK_SIZE: usize = 32;
pub const PACKED_BLOCK_BYTES: usize = 24;
const MAX_CODE: u8 = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("non-finite value {value} at element {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("block needs exactly {BLOCK_SIZE} values, got {0}")]
    BlockLength(usize),
    #[error(
        "tensor '{name}' has {elements} elements, not a multiple of {BLOCK_SIZE}; choose block-aligned dimensions"
    )]
    Misaligned { name: String, elements: usize },
    #[error("invalid packed block: {0}")]
    InvalidBlock(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantBlock {
    pub scale: f32,
    pub base: f32,
    pub codes: [u8; BLOCK_SIZE],
}

impl QuantBlock {
    pub fn to_bytes(&self) -> [u8; PACKED_BLOCK_BYTES] {
        let mut out = [0u8; PACKED_BLOCK_BYTES];
        out[0..4].copy_from_slice(&self.scale.to_le_bytes());
        out[4..8].copy_from_slice(&self.base.to_le_bytes());
        for k in 0..BLOCK_SIZE / 2 {
            out[8 + k] = (self.codes[2 * k] & 0x0F) | (self.codes[2 * k + 1] << 4);
        }
        out
    }

    /// Rejects negative or non-finite scales and `s = 0` blocks with nonzero codes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, QuantError> {
        if bytes.len() != PACKED_BLOCK_BYTES {
            return Err(QuantError::InvalidBlock(format!(
                "expected {PACKED_BLOCK_BYTES} bytes, got {}",
                bytes.len()
            )));
        }
        let scale = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let base = f32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let mut codes = [0u8; BLOCK_SIZE];
        for k in 0..BLOCK_SIZE / 2 {
            codes[2 * k] = bytes[8 + k] & 0x0F;
            codes[2 * k + 1] = bytes[8 + k] >> 4;
        }
        let block = Self { scale, base, codes };
        block.validate()?;
        Ok(block)
    }

    pub fn validate(&self) -> Result<(), QuantError> {
        if !(self.scale.is_finite() && self.scale >= 0.0) || !self.base.is_finite() {
            return Err(QuantError::InvalidBlock(format!(
                "scale {} / base {} out of domain",
                self.scale, self.base
            )));
        }
        if self.codes.iter().any(|&c| c > MAX_CODE) {
            return Err(QuantError::InvalidBlock("code above 15".into()));
        }
        if self.scale == 0.0 && self.codes.iter().any(|&c| c != 0) {
            return Err(QuantError::InvalidBlock("zero scale with nonzero codes".into()));
        }
        Ok(())
    }
}

/// Asymmetric min/max quantization of one block with round-half-up codes.
pub fn quantize_block(values: &[f32]) -> Result<QuantBlock, QuantError> {
    if values.len() != BLOCK_SIZE {
        return Err(QuantError::BlockLength(values.len()));
    }
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(QuantError::NonFinite { index, value });
    }
    let min = values.iter().copied().fold(f32::INFINITY, f32::min);
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut codes = [0u8; BLOCK_SIZE];
    if max == min {
        return Ok(QuantBlock {
            scale: 0.0,
            base: min,
            codes,
        });
    }
    let scale = ((max as f64 - min as f64) / MAX_CODE as f64) as f32;
    let (s, m) = (scale as f64, min as f64);
    for (c, &x) in codes.iter_mut().zip(values) {
        let q = ((x as f64 - m) / s + 0.5).floor();
        *c = q.clamp(0.0, MAX_CODE as f64) as u8;
    }
    Ok(QuantBlock {
        scale,
        base: min,
        codes,
    })
}

pub fn dequantize_block(block: &QuantBlock) -> [f32; BLOCK_SIZE] {
    let (s, m) = (block.scale as f64, block.base as f64);
    let mut out = [0f32; BLOCK_SIZE];
    for (o, &c) in out.iter_mut().zip(&block.codes) {
        *o = (m + s * c as f64) as f32;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantTensor {
    pub shape: Vec<usize>,
    pub blocks: Vec<QuantBlock>,
}

impl QuantTensor {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn packed_size(&self) -> usize {
        self.blocks.len() * PACKED_BLOCK_BYTES
    }
}

/// Row-major blockwise quantization; the element count must be block-aligned.
pub fn quantize_tensor(name: &str, tensor: &F32Tensor) -> Result<QuantTensor, QuantError> {
    let elements = tensor.data.len();
    if elements % BLOCK_SIZE != 0 {
        return Err(QuantError::Misaligned {
            name: name.to_string(),
            elements,
        });
    }
    let blocks = tensor
        .data
        .chunks_exact(BLOCK_SIZE)
        .enumerate()
        .map(|(b, chunk)| {
            quantize_block(chunk).map_err(|e| match e {
                QuantError::NonFinite { index, value } => QuantError::NonFinite {
                    index: b * BLOCK_SIZE + index,
                    value,
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QuantTensor {
        shape: tensor.shape.clone(),
        blocks,
    })
}

pub fn dequantize_tensor(qt: &QuantTensor) -> F32Tensor {
    let data = qt.blocks.iter().flat_map(dequantize_block).collect();
    F32Tensor::new(qt.shape.clone(), data)
}

/// Tensors compressed by [`quantize_policy`]; biases stay full precision.
pub const QUANTIZED_TENSORS: [&str; 4] = [GOAL_EMBEDDING, W1, W2, PREV_TOKEN_EMBEDDING];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorQuantStats {
    pub name: String,
    pub elements: usize,
    pub blocks: usize,
    pub packed_bytes: usize,
    pub f32_bytes: usize,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone)]
pub struct QuantizedPolicy {
    /// Parameters with quantize-dequantize applied.
    pub params: FrozenPolicy,
    pub tensors: Vec<(String, QuantTensor)>,
    pub stats: Vec<TensorQuantStats>,
}

/// Post-training compression of the weight matrices and embedding tables.
///
/// An attached adapter is merged into `w1` first.
pub fn quantize_policy(params: &PolicyParams) -> Result<QuantizedPolicy, QuantError> {
    let mut merged = params.clone();
    merged.merge_lora();
    merged.check_shapes()?;
    let mut out = merged.clone();
    let mut tensors = Vec::new();
    let mut stats = Vec::new();
    for name in QUANTIZED_TENSORS {
        let original = merged.tensor(name).expect("base tensor exists");
        let qt = quantize_tensor(name, &F32Tensor::from_f64(original))?;
        let restored = dequantize_tensor(&qt).to_f64();
        let max_abs_error = original.max_abs_diff(&restored);
        log::info!("{name}: {} blocks, max abs error {max_abs_error:.3e}", qt.blocks.len());
        stats.push(TensorQuantStats {
            name: name.to_string(),
            elements: qt.element_count(),
            blocks: qt.blocks.len(),
            packed_bytes: qt.packed_size(),
            f32_bytes: qt.element_count() * 4,
            max_abs_error,
        });
        *out.tensor_mut(name).expect("base tensor exists") = restored;
        tensors.push((name.to_string(), qt));
    }
    Ok(QuantizedPolicy {
        params: out.freeze(),
        tensors,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub index: usize,
    pub reference: Vec<u32>,
    pub candidate: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub total: usize,
    pub agreeing: usize,
    pub agreement: f64,
    pub disagreements: Vec<Disagreement>,
}

/// Fraction of observations on which both policies decode identical tokens.
pub fn argmax_agreement(
    reference: &FrozenPolicy,
    candidate: &FrozenPolicy,
    observations: &[Observation],
    config: &DecodeConfig,
) -> Result<AgreementReport, QuantError> {
    let mut disagreements = Vec::new();
    for (index, obs) in observations.iter().enumerate() {
        let a = greedy_decode(reference, obs, config)?;
        let b = greedy_decode(candidate, obs, config)?;
        if a != b {
            disagreements.push(Disagreement {
                index,
                reference: a.tokens().to_vec(),
                candidate: b.tokens().to_vec(),
            });
        }
    }
    let total = observations.len();
    let agreeing = total - disagreements.len();
    Ok(AgreementReport {
        total,
        agreeing,
        agreement: if total == 0 {
            1.0
        } else {
            agreeing as f64 / total as f64
        },
        disagreements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_block(rng: &mut ChaCha8Rng) -> [f32; BLOCK_SIZE] {
        let lo: f32 = rng.random_range(-4.0..4.0);
        let span: f32 = rng.random_range(0.001..8.0);
        std::array::from_fn(|_| lo + span * rng.random::<f32>())
    }

    #[test]
    fn constant_block_is_exact() {
        let values = [0.7f32; BLOCK_SIZE];
        let b = quantize_block(&values).unwrap();
        assert_eq!(b.scale, 0.0);
        assert_eq!(b.base, 0.7);
        assert!(b.codes.iter().all(|&c| c == 0));
        assert_eq!(dequantize_block(&b), values);
    }

    #[test]
    fn lattice_aligned_block_is_exact() {
        let values: [f32; BLOCK_SIZE] = std::array::from_fn(|i| (i % 16) as f32);
        let b = quantize_block(&values).unwrap();
        assert_eq!((b.scale, b.base), (1.0, 0.0));
        for (i, &c) in b.codes.iter().enumerate() {
            assert_eq!(c as usize, i % 16);
        }
        assert_eq!(dequantize_block(&b), values);
        // code 15 reconstructs the block maximum
        assert_eq!(b.base + 15.0 * b.scale, 15.0);
    }

    #[test]
    fn error_bound_over_random_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let values = random_block(&mut rng);
            let b = quantize_block(&values).unwrap();
            let back = dequantize_block(&b);
            for (x, y) in values.iter().zip(&back) {
                assert!(
                    ((x - y).abs() as f64) <= b.scale as f64 / 2.0 + 1e-6,
                    "{x} -> {y} with scale {}",
                    b.scale
                );
            }
        }
    }

    #[test]
    fn rejects_non_finite_and_short_input() {
        let mut values = [0.0f32; BLOCK_SIZE];
        values[5] = f32::NAN;
        assert!(matches!(
            quantize_block(&values),
            Err(QuantError::NonFinite { index: 5, .. })
        ));
        assert!(matches!(quantize_block(&values[..4]), Err(QuantError::BlockLength(4))));
    }

    #[test]
    fn packed_layout_is_bit_exact() {
        let mut codes = [0u8; BLOCK_SIZE];
        codes[0] = 0x3;
        codes[1] = 0xA;
        codes[31] = 0xF;
        let b = QuantBlock { scale: 1.0, base: -2.0, codes };
        let bytes = b.to_bytes();
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[0..4], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[4..8], &(-2.0f32).to_le_bytes());
        assert_eq!(bytes[8], 0xA3);
        assert_eq!(bytes[23], 0xF0);
        assert_eq!(QuantBlock::from_bytes(&bytes).unwrap(), b);
        // 24 of 128 bytes: 81.25% reduction
        assert_eq!(1.0 - PACKED_BLOCK_BYTES as f64 / (BLOCK_SIZE * 4) as f64, 0.8125);
    }

    #[test]
    fn zero_scale_with_codes_is_invalid() {
        let mut bytes = QuantBlock { scale: 0.0, base: 1.0, codes: [0; BLOCK_SIZE] }.to_bytes();
        bytes[10] = 0x01;
        assert!(QuantBlock::from_bytes(&bytes).is_err());
    }

    #[test]
    fn misaligned_tensor_rejected() {
        let t = F32Tensor::new(vec![3, 8], vec![0.0; 24]);
        assert!(matches!(
            quantize_tensor("goal_embedding", &t),
            Err(QuantError::Misaligned { elements: 24, .. })
        ));
    }

    proptest! {
        #[test]
        fn quantization_is_idempotent(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = random_block(&mut rng);
            let once = dequantize_block(&quantize_block(&values).unwrap());
            let twice = dequantize_block(&quantize_block(&once).unwrap());
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn dequantized_values_monotone_in_code(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = quantize_block(&random_block(&mut rng)).unwrap();
            let levels: Vec<f32> = (0..=15u8)
                .map(|c| dequantize_block(&QuantBlock { codes: [c; BLOCK_SIZE], ..b })[0])
                .collect();
            prop_assert!(levels.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn tensor_round_trip_preserves_shape(rows in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..rows * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = F32Tensor::new(vec![rows, 64], data);
            let qt = quantize_tensor("t", &t).unwrap();
            prop_assert_eq!(qt.blocks.len(), rows * 2);
            let back = dequantize_tensor(&qt);
            prop_assert_eq!(&back.shape, &t.shape);
            // identical inputs give identical packed bytes
            let again = quantize_tensor("t", &t).unwrap();
            prop_assert_eq!(qt, again);
        }
    }
}
