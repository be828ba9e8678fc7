//! Optimizee tasks `L(theta)` over a flat parameter vector.
//!
//! A [`TaskFamily`] samples independent task instances from a seed. An
//! instance produces the data for each optimization step (a fresh minibatch
//! for classifiers, nothing for quadratics) and records its loss on a tape.

mod mlp;
mod quadratic;

pub use mlp::{Activation, MlpFamily, MlpSpec, MlpTask};
pub use quadratic::{QuadraticFamily, QuadraticTask};

use thiserror::Error;

use crate::autodiff::{AutodiffError, NodeId, Tape, Tensor};
use crate::datasets::{Batch, Split};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeeError {
    #[error("parameter vector has length {got}, task expects {expected}")]
    ThetaLength { expected: usize, got: usize },
    #[error("task needs a minibatch for this step")]
    MissingBatch,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Data consumed by one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub enum StepData {
    /// The loss is deterministic and needs no sample.
    Full,
    Batch(Batch),
}

/// One sampled optimization problem.
pub trait Optimizee: Send {
    fn param_count(&self) -> usize;

    /// Initial parameters, deterministic in `seed`.
    fn init_theta(&self, seed: u64) -> Vec<f64>;

    /// Data for the next optimization step.
    fn next_step_data(&mut self) -> StepData;

    /// Records the scalar loss at `theta` (a node of shape `[n]`) on `tape`.
    fn loss_node(&self, tape: &mut Tape, theta: NodeId, data: &StepData) -> Result<NodeId, OptimizeeError>;

    /// Loss value and gradient at `theta`, computed on a private tape.
    fn loss_and_grad(&self, theta: &[f64], data: &StepData) -> Result<(f64, Vec<f64>), OptimizeeError> {
        let mut tape = Tape::new();
        let node = tape.leaf(Tensor::vector(theta.to_vec()))?;
        let loss = self.loss_node(&mut tape, node, data)?;
        let value = tape.value(loss).data()[0];
        let grad = tape.gradients(loss, &[node])?.pop().expect("one gradient");
        Ok((value, grad.into_data()))
    }

    /// Loss value only.
    fn loss(&self, theta: &[f64], data: &StepData) -> Result<f64, OptimizeeError> {
        let mut tape = Tape::new();
        let node = tape.leaf(Tensor::vector(theta.to_vec()))?;
        let loss = self.loss_node(&mut tape, node, data)?;
        Ok(tape.value(loss).data()[0])
    }
}

/// A distribution over optimizees.
pub trait TaskFamily: Send + Sync {
    fn name(&self) -> &str;

    fn param_count(&self) -> usize;

    /// An instance drawn from `seed`, using the given data split.
    fn instance(&self, seed: u64, split: Split) -> Box<dyn Optimizee>;
}

pub(crate) fn check_theta(tape: &Tape, theta: NodeId, expected: usize) -> Result<(), OptimizeeError> {
    let shape = tape.value(theta).shape();
    if shape != [expected] {
        return Err(OptimizeeError::ThetaLength {
            expected,
            got: tape.value(theta).len(),
        });
    }
    Ok(())
}
