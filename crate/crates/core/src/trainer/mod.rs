//! Training regimes: joint multitask training with per-domain gradient
//! routing, frozen-encoder adapter finetuning, few-shot regression
//! transfer, and adding a new expert to a trained panel.

mod config;
mod fewshot;
mod loop_;
mod sampler;
mod step;

use thiserror::Error;

use crate::meta_eval::MetaEvalError;
use crate::numkit::NumkitError;
use crate::panel::PanelError;

pub use config::{LossKind, Sampling, TrainConfig};
pub use fewshot::{fewshot_finetune, rescale_min_max, FewShotReport};
pub use loop_::{
    finetune_adapters, train_multitask, train_new_adapter, validation_accuracy, HistoryRecord,
    StepEvent, TrainOutcome,
};
pub use sampler::{Batch, DomainSampler};
pub use step::{batch_gradients, batch_loss, train_step, Example, MiniBatch};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("batch size {batch} is not divisible by {domains} domains")]
    Indivisible { batch: usize, domains: usize },
    #[error("sample stream exhausted")]
    Exhausted,
    #[error("dataset {0} has no training examples")]
    EmptyDataset(String),
    #[error("panel domains {panel:?} do not match datasets {data:?}")]
    DomainMismatch {
        panel: Vec<String>,
        data: Vec<String>,
    },
    #[error("{0}")]
    InvalidData(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("K% sample holds {0} records; at least 2 are required")]
    TooFewRecords(usize),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Numkit(#[from] NumkitError),
    #[error(transparent)]
    MetaEval(#[from] MetaEvalError),
}
