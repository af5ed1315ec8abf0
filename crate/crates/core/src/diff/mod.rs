//! Dense tensors with a tape-based reverse-mode gradient engine.
//!
//! Every primitive appends one node to a [`Graph`]; because a node can only
//! reference earlier nodes, tape order is already topological and
//! [`Graph::backward`] walks it once in reverse.

mod graph;
mod ops;
mod tensor;

use thiserror::Error;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const RMS_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite result in `{0}`")]
    NonFiniteResult(&'static str),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Padding that keeps the sequence length for an odd kernel at stride 1.
pub fn same_padding(kernel: usize) -> (usize, usize) {
    let total = kernel.saturating_sub(1);
    (total / 2, total - total / 2)
}
