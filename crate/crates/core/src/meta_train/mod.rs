//! Meta-training of the learned optimizer by truncated backpropagation
//! through time, plus evaluation of frozen optimizers.
//!
//! Each outer epoch trains a freshly sampled optimizee for `steps` inner
//! steps. At every step the optimizee loss and gradient are observed, the
//! state `[theta; loss]` enters the DMD window, and the LSTM proposes an
//! update. After each unroll of `unroll` steps the weighted loss sum is
//! differentiated with respect to the optimizer parameters, Adam takes one
//! step on them, and the optimizee state is detached. Every `eval_every`
//! epochs the frozen optimizer is scored on a fixed set of held-out
//! instances and the best parameters are kept.

mod evaluate;
mod log;
mod rollout;

pub use evaluate::{evaluate_optimizer, EvalOptions, EvalReport, EvalRun, OptimizerKind, Stat, LAST_STEPS, LOSS_STEP};
pub use log::{TrajectoryLog, TrajectoryRecord};
pub use rollout::{
    dmd_config_for, run_optimizee, train_inner, unroll_loss, unroll_segment, InnerConfig, InnerOutcome,
    RolloutState, RunOutcome, SegmentOutcome, UpdateRule,
};

use std::io::{self, Write};

use ::log::info;
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::classic::AdamState;
use crate::datasets::Split;
use crate::dmd::DmdError;
use crate::optimizee::{OptimizeeError, TaskFamily};
use crate::optimizer_net::{Checkpoint, LstmOptimizerParams, OptimizerNetError};
use crate::rng::{derive_seed, Stream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetaTrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value at inner step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Dmd(#[from] DmdError),
    #[error(transparent)]
    OptimizerNet(#[from] OptimizerNetError),
    #[error(transparent)]
    Optimizee(#[from] OptimizeeError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Hyperparameters of meta-training.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaTrainConfig {
    /// Inner optimization steps per epoch, `T`.
    pub steps: usize,
    /// Outer epochs, `N`.
    pub epochs: usize,
    /// Truncated unroll length, `u`.
    pub unroll: usize,
    /// Adam learning rate for the optimizer parameters.
    pub meta_lr: f64,
    /// Per-step weights of the unrolled loss; `None` means all ones.
    pub weights: Option<Vec<f64>>,
    /// DMD rank `R`; zero trains the plain LSTM optimizer.
    pub rank: usize,
    /// DMD snapshot count `m`.
    pub snapshots: usize,
    pub eval_every: usize,
    pub eval_instances: usize,
    pub seed: u64,
    /// Threads used by evaluation runs.
    pub jobs: usize,
    /// Keep a checkpoint for every evaluation, not only the best.
    pub keep_history: bool,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        MetaTrainConfig {
            steps: 100,
            epochs: 1000,
            unroll: 20,
            meta_lr: 1e-3,
            weights: None,
            rank: 1,
            snapshots: 100,
            eval_every: 20,
            eval_instances: 20,
            seed: 0,
            jobs: 1,
            keep_history: false,
        }
    }
}

impl MetaTrainConfig {
    pub fn unroll_weights(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0; self.unroll])
    }

    pub fn validate(&self) -> Result<(), MetaTrainError> {
        let fail = |msg: String| Err(MetaTrainError::Config(msg));
        if self.steps == 0 || self.unroll == 0 || self.eval_every == 0 || self.eval_instances == 0 {
            return fail("steps, unroll, eval_every and eval_instances must be positive".into());
        }
        if self.rank > 0 && self.rank > self.snapshots {
            return fail(format!("rank {} exceeds snapshot count {}", self.rank, self.snapshots));
        }
        if let Some(w) = &self.weights {
            if w.len() < self.unroll {
                return fail(format!("{} unroll weights for unroll length {}", w.len(), self.unroll));
            }
        }
        if !(self.meta_lr.is_finite() && self.meta_lr > 0.0) {
            return fail(format!("meta learning rate {} must be positive", self.meta_lr));
        }
        Ok(())
    }

    /// Evaluation settings used for checkpoint selection: fresh instances on
    /// the held-out split, scored at the training horizon.
    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            steps: self.steps,
            runs: self.eval_instances,
            seed: derive_seed(self.seed, Stream::EvalTask, 0),
            split: Split::Test,
            jobs: self.jobs,
        }
    }
}

/// Evaluation score after a given epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochScore {
    pub epoch: usize,
    pub score: f64,
}

/// Outcome of [`meta_train`].
#[derive(Clone, Debug)]
pub struct MetaTrainReport {
    /// Lowest-scoring evaluated parameters.
    pub best: Checkpoint,
    /// Score of the initial parameters (epoch 0), which act as a no-op.
    pub initial_score: f64,
    pub scores: Vec<EpochScore>,
    /// Every evaluated checkpoint when `keep_history` is set.
    pub history: Vec<Checkpoint>,
    pub final_params: LstmOptimizerParams,
    /// Epochs stopped early by a non-finite value.
    pub aborted_epochs: Vec<usize>,
}

impl MetaTrainReport {
    /// Writes `epoch,score` rows, starting with epoch 0.
    pub fn write_scores_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "epoch,score")?;
        writeln!(out, "0,{}", self.initial_score)?;
        for s in &self.scores {
            writeln!(out, "{},{}", s.epoch, s.score)?;
        }
        Ok(())
    }
}

/// Runs the outer meta-training loop.
pub fn meta_train(config: &MetaTrainConfig, family: &dyn TaskFamily) -> Result<MetaTrainReport, MetaTrainError> {
    let init = LstmOptimizerParams::init(derive_seed(config.seed, Stream::OptimizerInit, 0), config.rank);
    meta_train_from(config, family, init)
}

/// [`meta_train`] starting from the given optimizer parameters.
pub fn meta_train_from(
    config: &MetaTrainConfig,
    family: &dyn TaskFamily,
    init: LstmOptimizerParams,
) -> Result<MetaTrainReport, MetaTrainError> {
    config.validate()?;
    if init.rank != config.rank {
        return Err(MetaTrainError::Config(format!(
            "initial parameters have rank {}, configuration has {}",
            init.rank, config.rank
        )));
    }
    let inner = InnerConfig {
        steps: config.steps,
        unroll: config.unroll,
        weights: config.unroll_weights(),
        dmd: dmd_config_for(config.rank, config.snapshots)?,
        snapshots: config.snapshots,
    };
    let eval_options = config.eval_options();
    let score_of = |params: &LstmOptimizerParams| -> Result<f64, MetaTrainError> {
        let kind = OptimizerKind::Learned(Checkpoint::new(params.clone(), config.snapshots));
        Ok(evaluate_optimizer(&kind, family, &eval_options)?.score())
    };

    let mut params = init;
    let mut meta_opt = AdamState::new(params.param_count(), config.meta_lr);
    let initial_score = score_of(&params)?;
    info!("epoch 0: score {initial_score}");
    let mut best: Option<Checkpoint> = None;
    let mut scores = Vec::new();
    let mut history = Vec::new();
    let mut aborted_epochs = Vec::new();

    for epoch in 1..=config.epochs {
        let mut task = family.instance(derive_seed(config.seed, Stream::TrainTask, epoch as u64), Split::Train);
        let theta0 = task.init_theta(derive_seed(config.seed, Stream::TrainTheta, epoch as u64));
        let outcome = train_inner(&inner, task.as_mut(), theta0, &mut params, &mut meta_opt)?;
        if outcome.aborted_at.is_some() {
            aborted_epochs.push(epoch);
        }
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let score = score_of(&params)?;
            info!("epoch {epoch}: score {score}");
            scores.push(EpochScore { epoch, score });
            let mut ckpt = Checkpoint::new(params.clone(), config.snapshots);
            ckpt.score = score.is_finite().then_some(score);
            ckpt.epoch = Some(epoch);
            let improves = match &best {
                None => true,
                Some(b) => score < b.score.unwrap_or(f64::INFINITY),
            };
            if improves {
                best = Some(ckpt.clone());
            }
            if config.keep_history {
                history.push(ckpt);
            }
        }
    }

    let best = best.unwrap_or_else(|| Checkpoint::new(params.clone(), config.snapshots));
    Ok(MetaTrainReport {
        best,
        initial_score,
        scores,
        history,
        final_params: params,
        aborted_epochs,
    })
}
