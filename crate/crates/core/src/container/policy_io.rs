//! Conversions between policies/datasets and container models.

use super::{ContainerError, ContainerModel, ContainerTensor, MetadataValue, TensorData};
use crate::action_space::{ActionTokenSeq, ActionVocabulary, BinRange};
use crate::policy::{
    DecodeConfig, FrozenPolicy, GoalInstruction, Image, Observation, PolicyDims, PolicyParams,
    Sample, B1, B2, GOAL_EMBEDDING, PREV_TOKEN_EMBEDDING, W1, W2,
};
use crate::quantizer::{dequantize_tensor, QuantTensor, QuantizedPolicy};
use crate::tensor::{F32Tensor, Tensor};

pub const KEY_ARCH: &str = "general.architecture";
pub const KEY_KIND: &str = "litevla.kind";
pub const KEY_V_BINS: &str = "litevla.vocab.v_bins";
pub const KEY_W_BINS: &str = "litevla.vocab.w_bins";
pub const KEY_V_MIN: &str = "litevla.vocab.v_min";
pub const KEY_V_MAX: &str = "litevla.vocab.v_max";
pub const KEY_W_MIN: &str = "litevla.vocab.w_min";
pub const KEY_W_MAX: &str = "litevla.vocab.w_max";
pub const KEY_MAX_TOKENS: &str = "litevla.decode.max_tokens";
pub const KEY_BACKEND_N_CTX: &str = "litevla.backend.n_ctx";
pub const KEY_BACKEND_LAYERS: &str = "litevla.backend.layers";
pub const KEY_CODEC: &str = "litevla.quant.codec";
const KEY_IMAGE_H: &str = "litevla.model.image_h";
const KEY_IMAGE_W: &str = "litevla.model.image_w";
const KEY_NUM_GOALS: &str = "litevla.model.num_goals";
const KEY_D_GOAL: &str = "litevla.model.d_goal";
const KEY_D_TOK: &str = "litevla.model.d_tok";
const KEY_D_HIDDEN: &str = "litevla.model.d_hidden";
const KEY_DATASET_COUNT: &str = "litevla.dataset.count";

pub const ARCH: &str = "litevla-toy";
/// Layer count of the deployed backbone, kept as provenance metadata.
pub const BACKEND_LAYERS: u32 = 42;

/// Metadata every policy container must carry to be decodable.
pub const REQUIRED_POLICY_KEYS: [&str; 9] = [
    KEY_V_BINS,
    KEY_W_BINS,
    KEY_V_MIN,
    KEY_V_MAX,
    KEY_W_MIN,
    KEY_W_MAX,
    KEY_MAX_TOKENS,
    KEY_BACKEND_N_CTX,
    KEY_BACKEND_LAYERS,
];

const POLICY_TENSORS: [&str; 6] = [GOAL_EMBEDDING, W1, B1, W2, B2, PREV_TOKEN_EMBEDDING];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Policy,
    Dataset,
}

/// A decodable policy restored from a container.
#[derive(Debug, Clone)]
pub struct PolicyBundle {
    pub policy: FrozenPolicy,
    pub decode: DecodeConfig,
    /// `"f32"` or `"q4b32"`.
    pub codec: String,
    pub layers: u32,
}

fn ggml_dims(shape: &[usize]) -> Vec<u64> {
    shape.iter().rev().map(|&d| d as u64).collect()
}

fn vocab_metadata(vocab: &ActionVocabulary) -> Vec<(String, MetadataValue)> {
    vec![
        (KEY_V_BINS.into(), MetadataValue::U32(vocab.v_bins)),
        (KEY_W_BINS.into(), MetadataValue::U32(vocab.w_bins)),
        (KEY_V_MIN.into(), MetadataValue::F32(vocab.v_range.min as f32)),
        (KEY_V_MAX.into(), MetadataValue::F32(vocab.v_range.max as f32)),
        (KEY_W_MIN.into(), MetadataValue::F32(vocab.w_range.min as f32)),
        (KEY_W_MAX.into(), MetadataValue::F32(vocab.w_range.max as f32)),
    ]
}

fn read_vocab(model: &ContainerModel) -> Result<ActionVocabulary, ContainerError> {
    ActionVocabulary::new(
        model.u32(KEY_V_BINS)?,
        model.u32(KEY_W_BINS)?,
        BinRange::new(model.f32(KEY_V_MIN)? as f64, model.f32(KEY_V_MAX)? as f64),
        BinRange::new(model.f32(KEY_W_MIN)? as f64, model.f32(KEY_W_MAX)? as f64),
    )
    .map_err(|e| ContainerError::Content(e.to_string()))
}

/// Packs a policy as F32, or with the quantized tensors of `quantized`
/// stored as Q4B32 and the remaining tensors as F32.
///
/// An attached adapter is merged before export.
pub fn policy_to_model(
    params: &PolicyParams,
    decode: &DecodeConfig,
    quantized: Option<&QuantizedPolicy>,
) -> ContainerModel {
    let mut merged = params.clone();
    merged.merge_lora();
    let d = merged.dims;
    let mut metadata: Vec<(String, MetadataValue)> = vec![
        (KEY_ARCH.into(), MetadataValue::String(ARCH.into())),
        (KEY_KIND.into(), MetadataValue::String("policy".into())),
        (
            KEY_CODEC.into(),
            MetadataValue::String(if quantized.is_some() { "q4b32" } else { "f32" }.into()),
        ),
    ];
    metadata.extend(vocab_metadata(&merged.vocab));
    metadata.extend([
        (KEY_MAX_TOKENS.into(), MetadataValue::U32(decode.max_tokens as u32)),
        (KEY_BACKEND_N_CTX.into(), MetadataValue::U32(decode.context_budget as u32)),
        (KEY_BACKEND_LAYERS.into(), MetadataValue::U32(BACKEND_LAYERS)),
        (KEY_IMAGE_H.into(), MetadataValue::U32(d.image_h as u32)),
        (KEY_IMAGE_W.into(), MetadataValue::U32(d.image_w as u32)),
        (KEY_NUM_GOALS.into(), MetadataValue::U32(d.num_goals as u32)),
        (KEY_D_GOAL.into(), MetadataValue::U32(d.d_goal as u32)),
        (KEY_D_TOK.into(), MetadataValue::U32(d.d_tok as u32)),
        (KEY_D_HIDDEN.into(), MetadataValue::U32(d.d_hidden as u32)),
    ]);

    let tensors = POLICY_TENSORS
        .iter()
        .map(|&name| {
            let t = merged.tensor(name).expect("base tensor exists");
            let q = quantized.and_then(|q| q.tensors.iter().find(|(n, _)| n.as_str() == name));
            let data = match q {
                Some((_, qt)) => TensorData::Q4B32(qt.blocks.clone()),
                None => TensorData::F32(F32Tensor::from_f64(t).data),
            };
            ContainerTensor {
                name: name.to_string(),
                dims: ggml_dims(t.shape()),
                data,
            }
        })
        .collect();
    ContainerModel { metadata, tensors }
}

fn load_tensor(model: &ContainerModel, name: &str, shape: &[usize]) -> Result<Tensor, ContainerError> {
    let t = model
        .tensor(name)
        .ok_or_else(|| ContainerError::MissingTensor(name.to_string()))?;
    if t.dims != ggml_dims(shape) {
        return Err(ContainerError::Content(format!(
            "tensor '{name}' has dims {:?}, expected {:?}",
            t.dims,
            ggml_dims(shape)
        )));
    }
    let f = match &t.data {
        TensorData::F32(v) => F32Tensor::new(shape.to_vec(), v.clone()),
        TensorData::Q4B32(blocks) => dequantize_tensor(&QuantTensor {
            shape: shape.to_vec(),
            blocks: blocks.clone(),
        }),
    };
    Ok(f.to_f64())
}

pub fn policy_from_model(model: &ContainerModel) -> Result<PolicyBundle, ContainerError> {
    for key in REQUIRED_POLICY_KEYS {
        if model.get(key).is_none() {
            return Err(ContainerError::MissingKey(key.to_string()));
        }
    }
    let vocab = read_vocab(model)?;
    let dims = PolicyDims {
        image_h: model.u32(KEY_IMAGE_H)? as usize,
        image_w: model.u32(KEY_IMAGE_W)? as usize,
        num_goals: model.u32(KEY_NUM_GOALS)? as usize,
        d_goal: model.u32(KEY_D_GOAL)? as usize,
        d_tok: model.u32(KEY_D_TOK)? as usize,
        d_hidden: model.u32(KEY_D_HIDDEN)? as usize,
    };
    let mut params =
        PolicyParams::zeros(dims, vocab).map_err(|e| ContainerError::Content(e.to_string()))?;
    for name in POLICY_TENSORS {
        let shape = params.tensor(name).expect("base tensor exists").shape().to_vec();
        *params.tensor_mut(name).expect("base tensor exists") = load_tensor(model, name, &shape)?;
    }
    let decode = DecodeConfig {
        temperature: 0.0,
        max_tokens: model.u32(KEY_MAX_TOKENS)? as usize,
        context_budget: model.u32(KEY_BACKEND_N_CTX)? as usize,
    };
    decode
        .validate()
        .map_err(|e| ContainerError::Content(e.to_string()))?;
    Ok(PolicyBundle {
        policy: params.freeze(),
        decode,
        codec: model.string(KEY_CODEC).unwrap_or("f32").to_string(),
        layers: model.u32(KEY_BACKEND_LAYERS)?,
    })
}

/// Dataset as three F32 tensors: `images [N x H*W*3]`, `goal_ids [N]`,
/// `targets [N x 2]`, with the sample count and geometry in metadata.
pub fn dataset_to_model(
    samples: &[Sample],
    vocab: &ActionVocabulary,
    image_h: usize,
    image_w: usize,
    extra: Vec<(String, MetadataValue)>,
) -> Result<ContainerModel, ContainerError> {
    let pixels = image_h * image_w * crate::policy::CHANNELS;
    let mut images = Vec::with_capacity(samples.len() * pixels);
    let mut goals = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len() * 2);
    for (i, s) in samples.iter().enumerate() {
        let img = &s.observation.image;
        if img.height() != image_h || img.width() != image_w || s.target.len() != 2 {
            return Err(ContainerError::Content(format!(
                "sample {i} does not match the dataset geometry"
            )));
        }
        images.extend(img.data().iter().map(|&x| x as f32));
        goals.push(s.observation.goal.goal_id as f32);
        targets.extend(s.target.tokens().iter().map(|&t| t as f32));
    }
    let n = samples.len() as u64;
    let mut metadata: Vec<(String, MetadataValue)> = vec![
        (KEY_ARCH.into(), MetadataValue::String(ARCH.into())),
        (KEY_KIND.into(), MetadataValue::String("dataset".into())),
        (KEY_DATASET_COUNT.into(), MetadataValue::U64(n)),
        (KEY_IMAGE_H.into(), MetadataValue::U32(image_h as u32)),
        (KEY_IMAGE_W.into(), MetadataValue::U32(image_w as u32)),
    ];
    metadata.extend(vocab_metadata(vocab));
    metadata.extend(extra);
    Ok(ContainerModel {
        metadata,
        tensors: vec![
            ContainerTensor {
                name: "images".into(),
                dims: vec![pixels as u64, n],
                data: TensorData::F32(images),
            },
            ContainerTensor {
                name: "goal_ids".into(),
                dims: vec![n],
                data: TensorData::F32(goals),
            },
            ContainerTensor {
                name: "targets".into(),
                dims: vec![2, n],
                data: TensorData::F32(targets),
            },
        ],
    })
}

pub fn dataset_from_model(
    model: &ContainerModel,
) -> Result<(Vec<Sample>, ActionVocabulary), ContainerError> {
    if model.string(KEY_KIND)? != "dataset" {
        return Err(ContainerError::Content("container is not a dataset".into()));
    }
    let n = model.u64(KEY_DATASET_COUNT)? as usize;
    let h = model.u32(KEY_IMAGE_H)? as usize;
    let w = model.u32(KEY_IMAGE_W)? as usize;
    let vocab = read_vocab(model)?;
    let pixels = h * w * crate::policy::CHANNELS;
    let images = load_tensor(model, "images", &[n, pixels])?;
    let goals = load_tensor(model, "goal_ids", &[n])?;
    let targets = load_tensor(model, "targets", &[n, 2])?;
    let content = |e: String| ContainerError::Content(e);
    (0..n)
        .map(|i| {
            let image = Image::from_vec(h, w, images.row(i).to_vec()).map_err(|e| content(e.to_string()))?;
            let goal = GoalInstruction::new(goals.data()[i] as usize).map_err(|e| content(e.to_string()))?;
            let t = targets.row(i);
            let target = ActionTokenSeq::pair(t[0] as u32, t[1] as u32);
            target.validate(&vocab).map_err(|e| content(e.to_string()))?;
            Ok(Sample {
                observation: Observation::new(image, goal),
                target,
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(|s| (s, vocab))
}

impl ModelKind {
    pub fn of(model: &ContainerModel) -> Option<Self> {
        match model.string(KEY_KIND).ok()? {
            "policy" => Some(Self::Policy),
            "dataset" => Some(Self::Dataset),
            _ => None,
        }
    }
}
