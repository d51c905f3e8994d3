//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Design: define-by-run. Every tensor is a node holding its forward values,
//! references to its parents, and a closure mapping the output gradient to
//! parent gradients. Node ids increase in construction order, which is a
//! valid topological order, so backward is a single reverse sweep — each node
//! visited exactly once. Subgraphs whose inputs carry no gradient collapse to
//! constants (no parents retained), so inference-only evaluation frees
//! intermediates as it goes.
//!
//! Gradients accumulate across uses of a leaf; a fresh [`Tape`] (or
//! [`Tensor::zero_grad`]) starts the next step clean. A tape can run backward
//! once; reset it explicitly to reuse saved activations.

mod grad_check;
mod ops;
mod tensor;

pub use grad_check::{grad_check, GradCheckReport};
pub use tensor::{backward, Tape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: shapes {lhs:?} and {rhs:?} are incompatible")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: expected {expected} values for shape {shape:?}, got {got}")]
    BadBuffer { op: &'static str, shape: Vec<usize>, expected: usize, got: usize },
    #[error("operands belong to different tapes")]
    TapeMismatch,
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("tape already ran backward; reset it before reusing")]
    TapeConsumed,
    #[error("{op}: input outside the valid domain ({detail})")]
    DomainError { op: &'static str, detail: &'static str },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { op: &'static str, axis: usize, rank: usize },
}
