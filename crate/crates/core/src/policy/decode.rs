use serde::{Deserialize, Serialize};

use super::model::prefix_logits;
use super::observation::Observation;
use super::params::FrozenPolicy;
use super::PolicyError;
use crate::action_space::{ActionTokenSeq, DEFAULT_MAX_TOKENS, TOKENS_PER_COMMAND};

/// Default context window, carried as runtime metadata.
pub const DEFAULT_CONTEXT_BUDGET: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Only `0.0` (greedy) is supported.
    pub temperature: f64,
    pub max_tokens: usize,
    pub context_budget: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            context_budget: DEFAULT_CONTEXT_BUDGET,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.temperature != 0.0 {
            return Err(PolicyError::Config(format!(
                "only deterministic decoding (temperature 0.0) is supported, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 || self.context_budget == 0 {
            return Err(PolicyError::Config(
                "max_tokens and context_budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Greedy decoding of one command.
///
/// Each step takes the argmax over the ids valid for the current slot
/// (v-bins, then ω-bins); ties go to the lowest id. Stops after one command
/// or at `max_tokens`, whichever comes first.
pub fn greedy_decode(
    policy: &FrozenPolicy,
    obs: &Observation,
    config: &DecodeConfig,
) -> Result<ActionTokenSeq, PolicyError> {
    config.validate()?;
    let mut seq = ActionTokenSeq::empty(config.max_tokens);
    let steps = TOKENS_PER_COMMAND.min(config.max_tokens);
    for pos in 0..steps {
        let logits = step_logits(policy, obs, &seq)?;
        let ids = policy.vocab.slot_ids(pos);
        let offset = ids.start;
        let mut best = offset;
        for id in ids {
            // strict comparison keeps the lowest id on ties
            if logits[id] > logits[best] {
                best = id;
            }
        }
        seq.push((best - offset) as u32)?;
    }
    Ok(seq)
}

/// Raw logits for the step following `prefix`.
pub fn step_logits(
    policy: &FrozenPolicy,
    obs: &Observation,
    prefix: &ActionTokenSeq,
) -> Result<Vec<f64>, PolicyError> {
    prefix_logits(policy, obs, prefix)
}
