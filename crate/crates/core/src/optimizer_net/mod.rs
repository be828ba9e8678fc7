//! The coordinatewise two-layer LSTM optimizer.
//!
//! One set of shared weights is applied independently to every coordinate
//! of the optimizee. Each coordinate sees its own preprocessed gradient and
//! the DMD eigenvalue features shared by the whole run, keeps its own hidden
//! and cell states, and emits one scalar update.

mod checkpoint;
mod lstm;

pub use checkpoint::Checkpoint;
pub use lstm::{
    optimizer_step, preprocess_gradient, BoundParams, CoordStates, CoordValues, LstmCellWeights, LstmOptimizerParams,
    OptimizerInput, DEFAULT_OUTPUT_SCALE, DEFAULT_PREPROCESS_P, HIDDEN_SIZE,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerNetError {
    #[error("optimizer input width {got} does not match the network's {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("state shape {got:?} does not match {coords} coordinates x {hidden} hidden units")]
    StateShape {
        coords: usize,
        hidden: usize,
        got: Vec<usize>,
    },
    #[error("flat parameter vector has length {got}, expected {expected}")]
    FlatLength { expected: usize, got: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint is not valid JSON: {0}")]
    Parse(String),
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
}
