//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records operations in forward order; [`Graph::backward`]
//! sweeps them in reverse. The op set is exactly what the branched CNN
//! needs: centered multi-channel convolution, ReLU, width-2 max pooling,
//! batch normalization, dropout, dense layers, softmax and cross-entropy,
//! plus a few structural helpers (slice/concat/reshape) and elementwise
//! arithmetic for tests and losses.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

mod adam;
mod check;
mod graph;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use check::{finite_difference_grad, relative_error};
pub use graph::{Gradients, Graph, Mode, RunningStats, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("data length {got} does not match shape size {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("cross-entropy target row {0} is not a probability distribution")]
    InvalidTarget(usize),
    #[error("dropout probability must be in [0, 1), got {0}")]
    InvalidProbability(f64),
    #[error("backward called before any forward pass was recorded")]
    NoForwardPass,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("optimizer expects {expected} parameter buffers, got {got}")]
    ParamCount { expected: usize, got: usize },
}
