use serde::{Deserialize, Serialize};

use crate::trainer::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Binary cross-entropy on 0/1 labels.
    Bce,
    /// Squared error between confidence and a target in [0, 1].
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Every batch holds `batch_size / N` examples of each domain.
    EqualQuota,
    /// Batches are drawn from the pooled examples of all domains.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Optimizer steps between validation checkpoints.
    pub eval_every: usize,
    /// Checkpoints (or epochs, for few-shot) without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub sampling: Sampling,
    /// Hard cap on optimizer steps, on top of `max_epochs`.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 1e-3,
            weight_decay: 0.01,
            max_epochs: 3,
            eval_every: 200,
            patience: 10,
            seed: 0,
            loss: LossKind::Bce,
            sampling: Sampling::EqualQuota,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    /// Multitask settings sized for a pretrained base-size encoder.
    pub fn full_scale() -> Self {
        Self {
            batch_size: 32,
            lr: 5e-6,
            eval_every: 2000,
            patience: 10,
            ..Self::default()
        }
    }

    /// Adapter finetuning with a frozen base-size encoder.
    pub fn full_scale_adapter() -> Self {
        Self {
            lr: 1e-5,
            eval_every: 1024,
            patience: 3,
            ..Self::full_scale()
        }
    }

    /// Few-shot regression: batch 2, patience counted in epochs.
    pub fn fewshot() -> Self {
        Self {
            batch_size: 2,
            loss: LossKind::Mse,
            max_epochs: 100,
            patience: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail("lr must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative");
        }
        Ok(())
    }
}
