//! Toy image-and-goal-conditioned autoregressive policy.
//!
//! A two-layer tanh MLP over `[flattened image | goal embedding | previous
//! token embedding]` stands in for the multimodal backbone. It carries the
//! pieces the deployment path needs: sequence NLL training with exact
//! gradients, a low-rank adapter on the hidden layer, and greedy decoding.

mod decode;
mod model;
mod observation;
mod params;
mod train;

use thiserror::Error;

pub use decode::{greedy_decode, step_logits, DecodeConfig, DEFAULT_CONTEXT_BUDGET};
pub use model::{forward, grad_nll, loss_and_grad, nll_loss, Gradients, Sample};
pub use observation::{GoalInstruction, Image, Observation, CHANNELS, INSTRUCTIONS};
pub use params::{
    FrozenPolicy, LoraAdapter, PolicyDims, PolicyParams, B1, B2, GOAL_EMBEDDING, LORA_A, LORA_B,
    PREV_TOKEN_EMBEDDING, W1, W2,
};
pub use train::{train_sft, TrainConfig, TrainOutcome};

use crate::action_space::ActionError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("goal id {goal_id} outside instruction set of size {count}")]
    UnknownGoal { goal_id: usize, count: usize },
    #[error("prefix of length {len} leaves no room under max_tokens {max_tokens}")]
    PrefixTooLong { len: usize, max_tokens: usize },
    #[error("empty batch or dataset")]
    EmptyBatch,
    #[error("invalid target in sample {sample}: {reason}")]
    InvalidTarget { sample: usize, reason: String },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Action(#[from] ActionError),
}
