//! Forward pass, sequence negative log-likelihood and its analytic gradient.

use super::observation::Observation;
use super::params::{
    PolicyParams, B1, B2, GOAL_EMBEDDING, LORA_A, LORA_B, PREV_TOKEN_EMBEDDING, W1, W2,
};
use super::PolicyError;
use crate::action_space::ActionTokenSeq;
use crate::tensor::Tensor;

/// One training example: an observation and the target command tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub observation: Observation,
    pub target: ActionTokenSeq,
}

/// Intermediate values of one autoregressive step.
pub(crate) struct StepCache {
    /// Nonzero input features as `(index into d_in, value)`.
    features: Vec<(usize, f64)>,
    goal: usize,
    prev_row: usize,
    /// `A x` when an adapter is attached.
    lora_proj: Vec<f64>,
    hidden: Vec<f64>,
    pub(crate) logits: Vec<f64>,
}

fn check_observation(params: &PolicyParams, obs: &Observation) -> Result<(), PolicyError> {
    let d = params.dims;
    if obs.image.height() != d.image_h || obs.image.width() != d.image_w {
        return Err(PolicyError::Dimension(format!(
            "image is {}x{}, policy expects {}x{}",
            obs.image.height(),
            obs.image.width(),
            d.image_h,
            d.image_w
        )));
    }
    if obs.goal.goal_id >= d.num_goals {
        return Err(PolicyError::UnknownGoal {
            goal_id: obs.goal.goal_id,
            count: d.num_goals,
        });
    }
    Ok(())
}

/// Row of `prev_token_embedding` that conditions position `position`.
fn prev_row(params: &PolicyParams, tokens: &[u32], position: usize) -> usize {
    if position == 0 {
        0
    } else {
        1 + params.vocab.global_id(position - 1, tokens[position - 1])
    }
}

pub(crate) fn step(params: &PolicyParams, obs: &Observation, prev_row: usize) -> StepCache {
    let d = params.dims;
    let d_h = d.d_hidden;
    let image_dim = d.image_dim();

    let mut features: Vec<(usize, f64)> = obs.image.nonzero().collect();
    features.extend(
        params
            .goal_embedding
            .row(obs.goal.goal_id)
            .iter()
            .enumerate()
            .map(|(k, &x)| (image_dim + k, x)),
    );
    features.extend(
        params
            .prev_token_embedding
            .row(prev_row)
            .iter()
            .enumerate()
            .map(|(k, &x)| (image_dim + d.d_goal + k, x)),
    );

    let mut pre = params.b1.data().to_vec();
    for &(i, x) in &features {
        if x == 0.0 {
            continue;
        }
        for (p, w) in pre.iter_mut().zip(params.w1.row(i)) {
            *p += x * w;
        }
    }

    let mut lora_proj = Vec::new();
    if let Some(lora) = &params.lora {
        let d_in = d.d_in();
        let a = lora.a.data();
        lora_proj = (0..lora.rank)
            .map(|k| {
                features
                    .iter()
                    .map(|&(i, x)| a[k * d_in + i] * x)
                    .sum::<f64>()
            })
            .collect();
        let scale = lora.scale();
        let b = lora.b.data();
        for (j, p) in pre.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, u) in lora_proj.iter().enumerate() {
                acc += b[j * lora.rank + k] * u;
            }
            *p += scale * acc;
        }
    }

    let hidden: Vec<f64> = pre.iter().map(|x| x.tanh()).collect();
    let vocab_size = params.vocab_size();
    let mut logits = params.b2.data().to_vec();
    for (j, &h) in hidden.iter().enumerate().take(d_h) {
        for (l, w) in logits.iter_mut().zip(params.w2.row(j)) {
            *l += h * w;
        }
    }
    debug_assert_eq!(logits.len(), vocab_size);

    StepCache {
        features,
        goal: obs.goal.goal_id,
        prev_row,
        lora_proj,
        hidden,
        logits,
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Next-token distribution over the full model vocabulary.
pub fn forward(
    params: &PolicyParams,
    obs: &Observation,
    prefix: &ActionTokenSeq,
) -> Result<Vec<f64>, PolicyError> {
    prefix_logits(params, obs, prefix).map(|l| softmax(&l))
}

pub(crate) fn prefix_logits(
    params: &PolicyParams,
    obs: &Observation,
    prefix: &ActionTokenSeq,
) -> Result<Vec<f64>, PolicyError> {
    check_observation(params, obs)?;
    if prefix.len() >= prefix.max_len() {
        return Err(PolicyError::PrefixTooLong {
            len: prefix.len(),
            max_tokens: prefix.max_len(),
        });
    }
    prefix.validate(&params.vocab)?;
    let row = prev_row(params, prefix.tokens(), prefix.len());
    Ok(step(params, obs, row).logits)
}

fn check_batch(params: &PolicyParams, batch: &[Sample]) -> Result<(), PolicyError> {
    if batch.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    for (i, s) in batch.iter().enumerate() {
        check_observation(params, &s.observation)?;
        s.target
            .validate(&params.vocab)
            .map_err(|e| PolicyError::InvalidTarget {
                sample: i,
                reason: e.to_string(),
            })?;
    }
    Ok(())
}

/// Mean over the batch of `-sum_i log P(a_i | a_<i, image, goal)`.
///
/// An unrepresentable target probability yields `+inf` and a warning
/// naming the sample, not an error.
pub fn nll_loss(params: &PolicyParams, batch: &[Sample]) -> Result<f64, PolicyError> {
    check_batch(params, batch)?;
    let mut total = 0.0;
    for (n, sample) in batch.iter().enumerate() {
        let tokens = sample.target.tokens();
        for pos in 0..tokens.len() {
            let cache = step(params, &sample.observation, prev_row(params, tokens, pos));
            let target = params.vocab.global_id(pos, tokens[pos]);
            let nll = log_sum_exp(&cache.logits) - cache.logits[target];
            if !nll.is_finite() {
                log::warn!("zero target probability at sample {n}, position {pos}");
                return Ok(f64::INFINITY);
            }
            total += nll;
        }
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of [`nll_loss`] for each trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub entries: Vec<(&'static str, Tensor)>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.data().iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Analytic gradient of [`nll_loss`] together with the loss value.
pub fn loss_and_grad(
    params: &PolicyParams,
    batch: &[Sample],
) -> Result<(f64, Gradients), PolicyError> {
    check_batch(params, batch)?;
    let d = params.dims;
    let d_h = d.d_hidden;
    let image_dim = d.image_dim();
    let tok_offset = image_dim + d.d_goal;
    let vocab_size = params.vocab_size();
    let with_adapter = params.lora.is_some();
    let inv_n = 1.0 / batch.len() as f64;

    let mut g_goal = Tensor::zeros(params.goal_embedding.shape());
    let mut g_w1 = Tensor::zeros(if with_adapter { &[0] } else { params.w1.shape() });
    let mut g_b1 = Tensor::zeros(params.b1.shape());
    let mut g_w2 = Tensor::zeros(if with_adapter { &[0] } else { params.w2.shape() });
    let mut g_b2 = Tensor::zeros(params.b2.shape());
    let mut g_tok = Tensor::zeros(params.prev_token_embedding.shape());
    let (mut g_a, mut g_b) = match &params.lora {
        Some(l) => (Tensor::zeros(l.a.shape()), Tensor::zeros(l.b.shape())),
        None => (Tensor::zeros(&[0]), Tensor::zeros(&[0])),
    };

    let mut total = 0.0;
    let mut d_pre = vec![0.0; d_h];
    for sample in batch {
        let tokens = sample.target.tokens();
        for pos in 0..tokens.len() {
            let cache = step(params, &sample.observation, prev_row(params, tokens, pos));
            let target = params.vocab.global_id(pos, tokens[pos]);
            let lse = log_sum_exp(&cache.logits);
            let nll = lse - cache.logits[target];
            if !nll.is_finite() {
                return Err(PolicyError::NonFiniteLoss(format!(
                    "target probability underflowed at position {pos}"
                )));
            }
            total += nll;

            let mut d_logits: Vec<f64> = cache
                .logits
                .iter()
                .map(|l| (l - lse).exp() * inv_n)
                .collect();
            d_logits[target] -= inv_n;

            for (gb, dl) in g_b2.data_mut().iter_mut().zip(&d_logits) {
                *gb += dl;
            }
            for j in 0..d_h {
                let w2_row = params.w2.row(j);
                let mut dh = 0.0;
                for v in 0..vocab_size {
                    dh += w2_row[v] * d_logits[v];
                }
                let h = cache.hidden[j];
                d_pre[j] = dh * (1.0 - h * h);
                if !with_adapter {
                    let g_row = g_w2.row_mut(j);
                    for v in 0..vocab_size {
                        g_row[v] += h * d_logits[v];
                    }
                }
            }
            for (gb, dp) in g_b1.data_mut().iter_mut().zip(&d_pre) {
                *gb += dp;
            }

            // gradient w.r.t. the adapter projection u = A x
            let mut d_proj = Vec::new();
            if let Some(lora) = &params.lora {
                let scale = lora.scale();
                let rank = lora.rank;
                let b = lora.b.data();
                let gb = g_b.data_mut();
                d_proj = vec![0.0; rank];
                for j in 0..d_h {
                    for k in 0..rank {
                        gb[j * rank + k] += scale * d_pre[j] * cache.lora_proj[k];
                        d_proj[k] += scale * b[j * rank + k] * d_pre[j];
                    }
                }
                let d_in = d.d_in();
                let ga = g_a.data_mut();
                for &(i, x) in &cache.features {
                    for k in 0..rank {
                        ga[k * d_in + i] += d_proj[k] * x;
                    }
                }
            }

            for &(i, x) in &cache.features {
                if !with_adapter {
                    let g_row = g_w1.row_mut(i);
                    for j in 0..d_h {
                        g_row[j] += x * d_pre[j];
                    }
                }
                if i < image_dim {
                    continue;
                }
                // input gradient for the embedding segments
                let w1_row = params.w1.row(i);
                let mut dx: f64 = w1_row.iter().zip(&d_pre).map(|(w, dp)| w * dp).sum();
                if let Some(lora) = &params.lora {
                    let a = lora.a.data();
                    let d_in = d.d_in();
                    for (k, dp) in d_proj.iter().enumerate() {
                        dx += a[k * d_in + i] * dp;
                    }
                }
                if i < tok_offset {
                    g_goal.row_mut(cache.goal)[i - image_dim] += dx;
                } else {
                    g_tok.row_mut(cache.prev_row)[i - tok_offset] += dx;
                }
            }
        }
    }

    let mut entries = vec![(GOAL_EMBEDDING, g_goal)];
    if !with_adapter {
        entries.push((W1, g_w1));
    }
    entries.push((B1, g_b1));
    if !with_adapter {
        entries.push((W2, g_w2));
    }
    entries.push((B2, g_b2));
    entries.push((PREV_TOKEN_EMBEDDING, g_tok));
    if with_adapter {
        entries.push((LORA_A, g_a));
        entries.push((LORA_B, g_b));
    }
    Ok((total * inv_n, Gradients { entries }))
}

/// Analytic gradient of [`nll_loss`] w.r.t. every trainable tensor.
pub fn grad_nll(params: &PolicyParams, batch: &[Sample]) -> Result<Gradients, PolicyError> {
    loss_and_grad(params, batch).map(|(_, g)| g)
}
