use std::ops::Deref;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::action_space::ActionVocabulary;
use crate::tensor::Tensor;

/// Layer widths of the toy backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyDims {
    pub image_h: usize,
    pub image_w: usize,
    pub num_goals: usize,
    pub d_goal: usize,
    pub d_tok: usize,
    pub d_hidden: usize,
}

impl Default for PolicyDims {
    fn default() -> Self {
        Self {
            image_h: 16,
            image_w: 16,
            num_goals: 3,
            d_goal: 32,
            d_tok: 32,
            d_hidden: 64,
        }
    }
}

impl PolicyDims {
    pub fn image_dim(&self) -> usize {
        self.image_h * self.image_w * super::observation::CHANNELS
    }

    /// Width of the concatenated `[image | goal | previous token]` feature.
    pub fn d_in(&self) -> usize {
        self.image_dim() + self.d_goal + self.d_tok
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let fields = [
            ("image_h", self.image_h),
            ("image_w", self.image_w),
            ("num_goals", self.num_goals),
            ("d_goal", self.d_goal),
            ("d_tok", self.d_tok),
            ("d_hidden", self.d_hidden),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(PolicyError::Dimension(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Low-rank update on the hidden-layer weights: `delta = (alpha / rank) * B * A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    /// `[rank x d_in]`
    pub a: Tensor,
    /// `[d_out x rank]`
    pub b: Tensor,
    pub rank: usize,
    pub alpha: f64,
}

impl LoraAdapter {
    /// Fresh adapter: `A` random, `B` all zeros.
    pub fn new(d_in: usize, d_out: usize, rank: usize, alpha: f64, seed: u64) -> Result<Self, PolicyError> {
        if rank == 0 || !(alpha > 0.0 && alpha.is_finite()) {
            return Err(PolicyError::Dimension(format!(
                "LoRA needs rank > 0 and alpha > 0 (got rank {rank}, alpha {alpha})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            a: Tensor::randn(&[rank, d_in], 1.0 / (d_in as f64).sqrt(), &mut rng),
            b: Tensor::zeros(&[d_out, rank]),
            rank,
            alpha,
        })
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn d_in(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.b.shape()[0]
    }

    /// Effective weight delta in the `[d_in x d_out]` orientation of `w1`.
    pub fn delta(&self) -> Tensor {
        let (d_in, d_out, rank) = (self.d_in(), self.d_out(), self.rank);
        let scale = self.scale();
        let mut out = Tensor::zeros(&[d_in, d_out]);
        let a = self.a.data();
        let b = self.b.data();
        let o = out.data_mut();
        for i in 0..d_in {
            for j in 0..d_out {
                let mut acc = 0.0;
                for k in 0..rank {
                    acc += b[j * rank + k] * a[k * d_in + i];
                }
                o[i * d_out + j] = scale * acc;
            }
        }
        out
    }
}

pub const GOAL_EMBEDDING: &str = "goal_embedding";
pub const W1: &str = "w1";
pub const B1: &str = "b1";
pub const W2: &str = "w2";
pub const B2: &str = "b2";
pub const PREV_TOKEN_EMBEDDING: &str = "prev_token_embedding";
pub const LORA_A: &str = "lora_a";
pub const LORA_B: &str = "lora_b";

/// Parameters of the two-layer tanh policy.
///
/// `prev_token_embedding` row 0 is the begin-of-action marker; row `1 + id`
/// embeds model-level token `id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub dims: PolicyDims,
    pub vocab: ActionVocabulary,
    /// `[num_goals x d_goal]`
    pub goal_embedding: Tensor,
    /// `[d_in x d_hidden]`
    pub w1: Tensor,
    pub b1: Tensor,
    /// `[d_hidden x vocab_size]`
    pub w2: Tensor,
    pub b2: Tensor,
    /// `[(vocab_size + 1) x d_tok]`
    pub prev_token_embedding: Tensor,
    pub lora: Option<LoraAdapter>,
}

impl PolicyParams {
    pub fn zeros(dims: PolicyDims, vocab: ActionVocabulary) -> Result<Self, PolicyError> {
        dims.validate()?;
        vocab.validate()?;
        let vocab_size = vocab.size();
        Ok(Self {
            dims,
            vocab,
            goal_embedding: Tensor::zeros(&[dims.num_goals, dims.d_goal]),
            w1: Tensor::zeros(&[dims.d_in(), dims.d_hidden]),
            b1: Tensor::zeros(&[dims.d_hidden]),
            w2: Tensor::zeros(&[dims.d_hidden, vocab_size]),
            b2: Tensor::zeros(&[vocab_size]),
            prev_token_embedding: Tensor::zeros(&[vocab_size + 1, dims.d_tok]),
            lora: None,
        })
    }

    /// Gaussian init scaled by `1/sqrt(fan_in)`, biases zero.
    pub fn random(dims: PolicyDims, vocab: ActionVocabulary, seed: u64) -> Result<Self, PolicyError> {
        let mut p = Self::zeros(dims, vocab)?;
        let vocab_size = vocab.size();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.goal_embedding = Tensor::randn(&[dims.num_goals, dims.d_goal], 1.0, &mut rng);
        p.w1 = Tensor::randn(&[dims.d_in(), dims.d_hidden], 1.0 / (dims.d_in() as f64).sqrt(), &mut rng);
        p.w2 = Tensor::randn(
            &[dims.d_hidden, vocab_size],
            1.0 / (dims.d_hidden as f64).sqrt(),
            &mut rng,
        );
        p.prev_token_embedding = Tensor::randn(&[vocab_size + 1, dims.d_tok], 1.0, &mut rng);
        Ok(p)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    pub fn attach_lora(&mut self, rank: usize, alpha: f64, seed: u64) -> Result<(), PolicyError> {
        self.lora = Some(LoraAdapter::new(
            self.dims.d_in(),
            self.dims.d_hidden,
            rank,
            alpha,
            seed,
        )?);
        Ok(())
    }

    /// Folds an attached adapter into `w1` and drops it.
    pub fn merge_lora(&mut self) {
        if let Some(lora) = self.lora.take() {
            self.w1.axpy(1.0, &lora.delta());
        }
    }

    /// `w1` with any adapter delta applied.
    pub fn effective_w1(&self) -> Tensor {
        let mut w = self.w1.clone();
        if let Some(lora) = &self.lora {
            w.axpy(1.0, &lora.delta());
        }
        w
    }

    /// Names of the tensors updated by training. Base weights are frozen
    /// while an adapter is attached.
    pub fn trainable_names(&self) -> Vec<&'static str> {
        if self.lora.is_some() {
            vec![GOAL_EMBEDDING, B1, B2, PREV_TOKEN_EMBEDDING, LORA_A, LORA_B]
        } else {
            vec![GOAL_EMBEDDING, W1, B1, W2, B2, PREV_TOKEN_EMBEDDING]
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        match name {
            GOAL_EMBEDDING => Some(&self.goal_embedding),
            W1 => Some(&self.w1),
            B1 => Some(&self.b1),
            W2 => Some(&self.w2),
            B2 => Some(&self.b2),
            PREV_TOKEN_EMBEDDING => Some(&self.prev_token_embedding),
            LORA_A => self.lora.as_ref().map(|l| &l.a),
            LORA_B => self.lora.as_ref().map(|l| &l.b),
            _ => None,
        }
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        match name {
            GOAL_EMBEDDING => Some(&mut self.goal_embedding),
            W1 => Some(&mut self.w1),
            B1 => Some(&mut self.b1),
            W2 => Some(&mut self.w2),
            B2 => Some(&mut self.b2),
            PREV_TOKEN_EMBEDDING => Some(&mut self.prev_token_embedding),
            LORA_A => self.lora.as_mut().map(|l| &mut l.a),
            LORA_B => self.lora.as_mut().map(|l| &mut l.b),
            _ => None,
        }
    }

    pub fn all_finite(&self) -> bool {
        [
            &self.goal_embedding,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.prev_token_embedding,
        ]
        .iter()
        .all(|t| t.all_finite())
            && self
                .lora
                .as_ref()
                .is_none_or(|l| l.a.all_finite() && l.b.all_finite())
    }

    /// Checks every tensor shape against `dims`.
    pub fn check_shapes(&self) -> Result<(), PolicyError> {
        let d = self.dims;
        let vocab_size = self.vocab.size();
        let expect = [
            (GOAL_EMBEDDING, &self.goal_embedding, vec![d.num_goals, d.d_goal]),
            (W1, &self.w1, vec![d.d_in(), d.d_hidden]),
            (B1, &self.b1, vec![d.d_hidden]),
            (W2, &self.w2, vec![d.d_hidden, vocab_size]),
            (B2, &self.b2, vec![vocab_size]),
            (PREV_TOKEN_EMBEDDING, &self.prev_token_embedding, vec![vocab_size + 1, d.d_tok]),
        ];
        for (name, t, shape) in expect {
            if t.shape() != shape.as_slice() {
                return Err(PolicyError::Dimension(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        if let Some(l) = &self.lora {
            if l.a.shape() != [l.rank, d.d_in()] || l.b.shape() != [d.d_hidden, l.rank] {
                return Err(PolicyError::Dimension("LoRA factor shapes disagree with dims".into()));
            }
        }
        Ok(())
    }

    pub fn freeze(self) -> FrozenPolicy {
        FrozenPolicy(Arc::new(self))
    }
}

/// Immutable, shareable parameters ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenPolicy(Arc<PolicyParams>);

impl FrozenPolicy {
    /// A mutable copy for further training.
    pub fn thaw(&self) -> PolicyParams {
        (*self.0).clone()
    }
}

impl Deref for FrozenPolicy {
    type Target = PolicyParams;

    fn deref(&self) -> &PolicyParams {
        &self.0
    }
}
