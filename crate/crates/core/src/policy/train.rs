use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{loss_and_grad, nll_loss, Sample};
use super::params::PolicyParams;
use super::PolicyError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.2,
            epochs: 60,
            batch_size: 16,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    /// Training-set loss before the first epoch followed by the loss after
    /// each epoch.
    pub loss_curve: Vec<f64>,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.loss_curve[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_curve.last().expect("curve has the initial entry")
    }
}

/// Minibatch SGD on the sequence NLL with a seeded shuffle per epoch.
///
/// With an adapter attached only the adapter factors, biases and embedding
/// tables move.
pub fn train_sft(
    mut params: PolicyParams,
    dataset: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome, PolicyError> {
    if dataset.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    if config.batch_size == 0 || !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(PolicyError::Config(format!(
            "batch_size must be positive and learning_rate finite and positive, got {config:?}"
        )));
    }
    params.check_shapes()?;

    let initial = nll_loss(&params, dataset)?;
    if !initial.is_finite() {
        return Err(PolicyError::NonFiniteLoss(format!(
            "initial loss is {initial}"
        )));
    }
    let mut loss_curve = vec![initial];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut batch: Vec<Sample> = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i].clone()));
            let (loss, grads) = loss_and_grad(&params, &batch).map_err(|e| {
                PolicyError::NonFiniteLoss(format!("epoch {epoch}, batch {b}: {e}"))
            })?;
            if !loss.is_finite() {
                return Err(PolicyError::NonFiniteLoss(format!(
                    "epoch {epoch}, batch {b}: loss {loss}"
                )));
            }
            for (name, g) in &grads.entries {
                params
                    .tensor_mut(name)
                    .expect("gradient names match parameter names")
                    .axpy(-config.learning_rate, g);
            }
        }
        let epoch_loss = nll_loss(&params, dataset)?;
        if !epoch_loss.is_finite() || !params.all_finite() {
            return Err(PolicyError::NonFiniteLoss(format!(
                "training diverged after epoch {epoch} (loss {epoch_loss})"
            )));
        }
        log::debug!("epoch {epoch}: loss {epoch_loss:.6}");
        loss_curve.push(epoch_loss);
    }

    Ok(TrainOutcome { params, loss_curve })
}
