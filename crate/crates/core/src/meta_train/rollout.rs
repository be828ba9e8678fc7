use ::log::warn;

use super::{MetaTrainError, TrajectoryLog, TrajectoryRecord};
use crate::autodiff::{AutodiffError, NodeId, Tape, Tensor};
use crate::classic::{sgd_step, AdamState};
use crate::dmd::{dmd_eigenvalues, DmdConfig, DmdError, SnapshotWindow};
use crate::optimizee::{Optimizee, OptimizeeError, StepData};
use crate::optimizer_net::{
    optimizer_step, preprocess_gradient, CoordValues, LstmOptimizerParams, OptimizerInput, OptimizerNetError,
};

/// The DMD configuration implied by a rank and snapshot count; rank zero
/// disables DMD features.
pub fn dmd_config_for(rank: usize, snapshots: usize) -> Result<Option<DmdConfig>, DmdError> {
    if rank == 0 {
        Ok(None)
    } else {
        DmdConfig::new(rank, snapshots).map(Some)
    }
}

/// Everything that carries over from one inner step to the next.
#[derive(Clone, Debug)]
pub struct RolloutState {
    /// Number of completed steps.
    pub step: usize,
    pub theta: Vec<f64>,
    pub coords: CoordValues,
    pub window: SnapshotWindow,
}

impl RolloutState {
    /// Fresh state at `theta` with zero hidden states and an empty window.
    pub fn new(theta: Vec<f64>, hidden: usize, snapshots: usize) -> Self {
        let n = theta.len();
        RolloutState {
            step: 0,
            theta,
            coords: CoordValues::zeros(n, hidden),
            window: SnapshotWindow::new(snapshots),
        }
    }
}

/// Result of one truncated unroll.
#[derive(Clone, Debug)]
pub struct SegmentOutcome {
    /// Weighted loss sum over the segment.
    pub meta_loss: f64,
    /// Gradient of `meta_loss` with respect to the flattened parameters.
    pub grads: Vec<f64>,
    /// Per-step losses `L(theta_t)`.
    pub losses: Vec<f64>,
    /// The constant optimizer inputs used at each step.
    pub inputs: Vec<OptimizerInput>,
}

fn autodiff_non_finite(err: &AutodiffError) -> bool {
    matches!(err, AutodiffError::NonFinite { .. })
}

pub(crate) fn optimizee_err(step: usize, err: OptimizeeError) -> MetaTrainError {
    match err {
        OptimizeeError::Autodiff(ref e) if autodiff_non_finite(e) => MetaTrainError::Diverged { step },
        other => MetaTrainError::Optimizee(other),
    }
}

fn net_err(step: usize, err: OptimizerNetError) -> MetaTrainError {
    match err {
        OptimizerNetError::Autodiff(ref e) if autodiff_non_finite(e) => MetaTrainError::Diverged { step },
        other => MetaTrainError::OptimizerNet(other),
    }
}

fn tape_err(step: usize, err: AutodiffError) -> MetaTrainError {
    if autodiff_non_finite(&err) {
        MetaTrainError::Diverged { step }
    } else {
        MetaTrainError::Autodiff(err)
    }
}

/// Evaluates `L(theta_t)` and its gradient on a fresh sample.
fn observe(task: &mut dyn Optimizee, theta: &[f64], step: usize) -> Result<(StepData, f64, Vec<f64>), MetaTrainError> {
    let data = task.next_step_data();
    let (loss, grad) = task.loss_and_grad(theta, &data).map_err(|e| optimizee_err(step, e))?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(MetaTrainError::Diverged { step });
    }
    Ok((data, loss, grad))
}

/// Pushes the snapshot and returns the DMD features for this step.
fn dmd_features(window: &mut SnapshotWindow, dmd: Option<&DmdConfig>, theta: &[f64], loss: f64, step: usize) -> Result<Vec<f64>, MetaTrainError> {
    let Some(config) = dmd else {
        return Ok(Vec::new());
    };
    match window.push(theta, loss) {
        Ok(()) => {}
        Err(DmdError::NonFinite) => return Err(MetaTrainError::Diverged { step }),
        Err(e) => return Err(MetaTrainError::Dmd(e)),
    }
    if step > config.snapshots {
        Ok(dmd_eigenvalues(window, config).into_vec())
    } else {
        Ok(vec![0.0; config.feature_len()])
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `sum_k weights[k] * losses[k]` on the tape.
pub fn unroll_loss(tape: &mut Tape, losses: &[NodeId], weights: &[f64]) -> Result<NodeId, MetaTrainError> {
    if losses.is_empty() {
        return Err(MetaTrainError::Contract("unroll window is empty".into()));
    }
    if weights.len() < losses.len() {
        return Err(MetaTrainError::Contract(format!(
            "{} unroll weights for {} losses",
            weights.len(),
            losses.len()
        )));
    }
    let mut total = tape.scale(losses[0], weights[0])?;
    for (&l, &w) in losses.iter().zip(weights).skip(1) {
        let term = tape.scale(l, w)?;
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// Runs `len` inner steps on one tape and differentiates the weighted loss
/// sum with respect to the optimizer parameters.
///
/// The segment starts from detached copies of `state`, so no gradient flows
/// into earlier segments. On success `state` holds the values reached at
/// the end of the segment.
pub fn unroll_segment(
    params: &LstmOptimizerParams,
    dmd: Option<&DmdConfig>,
    task: &mut dyn Optimizee,
    state: &mut RolloutState,
    len: usize,
    weights: &[f64],
    log: &mut TrajectoryLog,
) -> Result<SegmentOutcome, MetaTrainError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let mut coords = state.coords.bind(&mut tape)?;
    let mut theta = tape.leaf(Tensor::vector(state.theta.clone()))?;
    let mut loss_nodes = Vec::with_capacity(len);
    let mut losses = Vec::with_capacity(len);
    let mut inputs = Vec::with_capacity(len);

    for _ in 0..len {
        let step = state.step + 1;
        let theta_now = tape.value(theta).data().to_vec();
        let (data, loss, grad) = observe(task, &theta_now, step)?;
        let loss_node = task.loss_node(&mut tape, theta, &data).map_err(|e| optimizee_err(step, e))?;
        let features = dmd_features(&mut state.window, dmd, &theta_now, loss, step)?;
        let input = OptimizerInput::new(preprocess_gradient(&grad, params.preprocess_p), features);
        let (update, next) = optimizer_step(&mut tape, &bound, &input, &coords).map_err(|e| net_err(step, e))?;
        theta = tape.add(theta, update).map_err(|e| tape_err(step, e))?;
        coords = next;
        log.push(TrajectoryRecord {
            step,
            loss,
            update_norm: norm(tape.value(update).data()),
            features: input.dmd_features.clone(),
        });
        loss_nodes.push(loss_node);
        losses.push(loss);
        inputs.push(input);
        state.step = step;
    }

    let meta = unroll_loss(&mut tape, &loss_nodes, weights)?;
    let meta_loss = tape.value(meta).data()[0];
    let grads = tape
        .gradients(meta, &bound.nodes())
        .map_err(|e| tape_err(state.step, e))?;
    let grads: Vec<f64> = grads.into_iter().flat_map(|g| g.into_data()).collect();
    state.theta = tape.value(theta).data().to_vec();
    state.coords = CoordValues::read(&tape, &coords);
    Ok(SegmentOutcome {
        meta_loss,
        grads,
        losses,
        inputs,
    })
}

/// Inner-loop settings shared by training and evaluation.
#[derive(Clone, Debug)]
pub struct InnerConfig {
    pub steps: usize,
    pub unroll: usize,
    pub weights: Vec<f64>,
    pub dmd: Option<DmdConfig>,
    pub snapshots: usize,
}

/// What happened during one optimizee training run under meta-training.
#[derive(Clone, Debug)]
pub struct InnerOutcome {
    pub log: TrajectoryLog,
    pub meta_updates: usize,
    /// Step at which a non-finite value stopped the run.
    pub aborted_at: Option<usize>,
}

/// Trains one optimizee for `steps` steps, applying a meta-update of the
/// optimizer parameters after every `unroll` steps and once more for a
/// trailing partial unroll.
pub fn train_inner(
    config: &InnerConfig,
    task: &mut dyn Optimizee,
    theta0: Vec<f64>,
    params: &mut LstmOptimizerParams,
    meta_opt: &mut AdamState,
) -> Result<InnerOutcome, MetaTrainError> {
    if config.unroll == 0 {
        return Err(MetaTrainError::Contract("unroll length must be positive".into()));
    }
    let mut state = RolloutState::new(theta0, params.hidden(), config.snapshots);
    let mut log = TrajectoryLog::new();
    let mut meta_updates = 0;
    while state.step < config.steps {
        let len = config.unroll.min(config.steps - state.step);
        let outcome = match unroll_segment(params, config.dmd.as_ref(), task, &mut state, len, &config.weights, &mut log) {
            Ok(o) => o,
            Err(MetaTrainError::Diverged { step }) => {
                warn!("inner run diverged at step {step}; abandoning this epoch");
                return Ok(InnerOutcome {
                    log,
                    meta_updates,
                    aborted_at: Some(step),
                });
            }
            Err(e) => return Err(e),
        };
        if outcome.grads.iter().any(|g| !g.is_finite()) {
            warn!("non-finite meta-gradient at step {}; abandoning this epoch", state.step);
            return Ok(InnerOutcome {
                log,
                meta_updates,
                aborted_at: Some(state.step),
            });
        }
        let mut flat = params.flatten();
        meta_opt.step(&mut flat, &outcome.grads);
        params.set_from_flat(&flat)?;
        meta_updates += 1;
    }
    Ok(InnerOutcome {
        log,
        meta_updates,
        aborted_at: None,
    })
}

/// Loss trajectory of one evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    /// `L(theta_t)` for each completed step.
    pub losses: Vec<f64>,
    /// Step whose loss or update was not finite.
    pub diverged_at: Option<usize>,
}

/// A frozen rule that maps gradients to parameter updates.
#[derive(Clone, Debug)]
pub enum UpdateRule<'a> {
    Learned {
        params: &'a LstmOptimizerParams,
        dmd: Option<DmdConfig>,
        snapshots: usize,
    },
    Adam { lr: f64 },
    Sgd { lr: f64 },
}

/// Runs `steps` optimization steps with a frozen update rule.
pub fn run_optimizee(
    rule: &UpdateRule<'_>,
    task: &mut dyn Optimizee,
    theta0: Vec<f64>,
    steps: usize,
    log: &mut TrajectoryLog,
) -> Result<RunOutcome, MetaTrainError> {
    let mut losses = Vec::with_capacity(steps);
    let result = match rule {
        UpdateRule::Learned { params, dmd, snapshots } => {
            run_learned(params, dmd.as_ref(), *snapshots, task, theta0, steps, log, &mut losses)
        }
        UpdateRule::Adam { lr } => {
            let mut adam = AdamState::new(theta0.len(), *lr);
            run_classic(task, theta0, steps, log, &mut losses, |theta, grad| adam.step(theta, grad))
        }
        UpdateRule::Sgd { lr } => run_classic(task, theta0, steps, log, &mut losses, |theta, grad| sgd_step(theta, grad, *lr)),
    };
    match result {
        Ok(()) => Ok(RunOutcome {
            losses,
            diverged_at: None,
        }),
        Err(MetaTrainError::Diverged { step }) => Ok(RunOutcome {
            losses,
            diverged_at: Some(step),
        }),
        Err(e) => Err(e),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_learned(
    params: &LstmOptimizerParams,
    dmd: Option<&DmdConfig>,
    snapshots: usize,
    task: &mut dyn Optimizee,
    theta0: Vec<f64>,
    steps: usize,
    log: &mut TrajectoryLog,
    losses: &mut Vec<f64>,
) -> Result<(), MetaTrainError> {
    let mut state = RolloutState::new(theta0, params.hidden(), snapshots);
    for step in 1..=steps {
        let (_, loss, grad) = observe(task, &state.theta, step)?;
        losses.push(loss);
        let features = dmd_features(&mut state.window, dmd, &state.theta, loss, step)?;
        let input = OptimizerInput::new(preprocess_gradient(&grad, params.preprocess_p), features);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape)?;
        let coords = state.coords.bind(&mut tape)?;
        let (update, next) = optimizer_step(&mut tape, &bound, &input, &coords).map_err(|e| net_err(step, e))?;
        let update = tape.value(update).data();
        for (t, u) in state.theta.iter_mut().zip(update) {
            *t += u;
        }
        if state.theta.iter().any(|t| !t.is_finite()) {
            return Err(MetaTrainError::Diverged { step });
        }
        log.push(TrajectoryRecord {
            step,
            loss,
            update_norm: norm(update),
            features: input.dmd_features,
        });
        state.coords = CoordValues::read(&tape, &next);
        state.step = step;
    }
    Ok(())
}

fn run_classic(
    task: &mut dyn Optimizee,
    mut theta: Vec<f64>,
    steps: usize,
    log: &mut TrajectoryLog,
    losses: &mut Vec<f64>,
    mut apply: impl FnMut(&mut [f64], &[f64]),
) -> Result<(), MetaTrainError> {
    for step in 1..=steps {
        let (_, loss, grad) = observe(task, &theta, step)?;
        losses.push(loss);
        let before = theta.clone();
        apply(&mut theta, &grad);
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(MetaTrainError::Diverged { step });
        }
        let delta: Vec<f64> = theta.iter().zip(&before).map(|(a, b)| a - b).collect();
        log.push(TrajectoryRecord {
            step,
            loss,
            update_norm: norm(&delta),
            features: Vec::new(),
        });
    }
    Ok(())
}
