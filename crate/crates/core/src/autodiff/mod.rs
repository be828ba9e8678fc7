//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records operations as they are evaluated. Calling
//! [`Tape::backward`] on a scalar node replays the record in reverse and
//! returns the gradient of that scalar with respect to every node.
//!
//! Broadcasting is limited to [`Tape::add_row_bias`]. A tape is meant to be
//! short-lived: meta-training builds a fresh one for every unroll segment.

mod tape;
mod tensor;

pub use tape::{GradientMap, NodeId, Tape};
pub use tensor::Tensor;

pub(crate) use tensor::matmul;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: label {label} out of range for {classes} classes")]
    LabelIndex {
        op: &'static str,
        label: usize,
        classes: usize,
    },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("{op}: result contains NaN or infinity")]
    NonFinite { op: &'static str },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("node {0} is not on this tape")]
    UnknownNode(usize),
}
