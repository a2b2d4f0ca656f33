//! Tensors, reverse-mode differentiation, gradient checking and AdamW.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

use std::collections::BTreeMap;

use thiserror::Error;

pub use gradcheck::{finite_diff_grad, finite_diff_grad_at, relative_error};
pub(crate) use graph::sigmoid;
pub use graph::{forward_backward, Gradients, Graph, NodeId, Op};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use tensor::Tensor;

/// Tensors keyed by parameter name, iterated in name order.
pub type NamedTensors<T> = BTreeMap<String, Tensor<T>>;

#[derive(Debug, Error)]
pub enum NumkitError {
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("invalid axis {0}")]
    InvalidAxis(usize),
    #[error("loss node is not scalar: shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("objective returned a non-finite value")]
    NonFiniteObjective,
    #[error("finite-difference epsilon must be positive")]
    InvalidEpsilon,
    #[error("unknown parameter {0}")]
    UnknownParam(String),
}
