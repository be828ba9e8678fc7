use rayon::prelude::*;

use super::rollout::{dmd_config_for, run_optimizee, UpdateRule};
use super::{MetaTrainError, TrajectoryLog};
use crate::datasets::Split;
use crate::optimizee::TaskFamily;
use crate::optimizer_net::Checkpoint;
use crate::rng::{derive_seed, Stream};

/// Number of trailing steps summed by the last-steps metric.
pub const LAST_STEPS: usize = 10;
/// Step at which the fixed-horizon metric is read.
pub const LOSS_STEP: usize = 300;

/// Mean and population standard deviation of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    /// `None` for an empty sample. A single value has zero spread.
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Stat {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

/// The optimizer being evaluated.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
pub enum OptimizerKind {
    Learned(Checkpoint),
    Adam { lr: f64 },
    Sgd { lr: f64 },
}

impl OptimizerKind {
    /// Display label, e.g. `L2O`, `L2O-DMD(1,100)`, `Adam`.
    pub fn label(&self) -> String {
        match self {
            OptimizerKind::Learned(c) if c.params.rank == 0 => "L2O".to_string(),
            OptimizerKind::Learned(c) => format!("L2O-DMD({},{})", c.params.rank, c.snapshots),
            OptimizerKind::Adam { .. } => "Adam".to_string(),
            OptimizerKind::Sgd { .. } => "SGD".to_string(),
        }
    }
}

/// Settings for a batch of independent evaluation runs.
#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub steps: usize,
    pub runs: usize,
    pub seed: u64,
    pub split: Split,
    /// Worker threads; results do not depend on it.
    pub jobs: usize,
}

/// One evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRun {
    pub index: usize,
    /// Finite losses observed before any divergence.
    pub losses: Vec<f64>,
    pub diverged_at: Option<usize>,
}

impl EvalRun {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// Sum of the last [`LAST_STEPS`] losses.
    pub fn last_sum(&self) -> f64 {
        let k = self.losses.len().min(LAST_STEPS);
        self.losses[self.losses.len() - k..].iter().sum()
    }
}

/// Aggregated evaluation statistics; diverged runs are excluded from all
/// means and counted separately.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub steps: usize,
    pub runs: Vec<EvalRun>,
    pub last_sum: Option<Stat>,
    pub loss_at_300: Option<Stat>,
    pub mean_curve: Vec<f64>,
    pub std_curve: Vec<f64>,
    pub divergences: usize,
}

impl EvalReport {
    pub fn from_runs(steps: usize, runs: Vec<EvalRun>) -> Self {
        let ok: Vec<&EvalRun> = runs.iter().filter(|r| !r.diverged()).collect();
        let last_sum = Stat::of(&ok.iter().map(|r| r.last_sum()).collect::<Vec<_>>());
        let loss_at_300 = if steps >= LOSS_STEP {
            Stat::of(&ok.iter().map(|r| r.losses[LOSS_STEP - 1]).collect::<Vec<_>>())
        } else {
            None
        };
        let mut mean_curve = Vec::new();
        let mut std_curve = Vec::new();
        if !ok.is_empty() {
            for t in 0..steps {
                let column: Vec<f64> = ok.iter().map(|r| r.losses[t]).collect();
                let s = Stat::of(&column).expect("non-empty");
                mean_curve.push(s.mean);
                std_curve.push(s.std);
            }
        }
        let divergences = runs.len() - ok.len();
        EvalReport {
            steps,
            runs,
            last_sum,
            loss_at_300,
            mean_curve,
            std_curve,
            divergences,
        }
    }

    pub fn divergence_rate(&self) -> f64 {
        if self.runs.is_empty() {
            0.0
        } else {
            self.divergences as f64 / self.runs.len() as f64
        }
    }

    /// Mean last-steps sum, or infinity when every run diverged.
    pub fn score(&self) -> f64 {
        self.last_sum.map_or(f64::INFINITY, |s| s.mean)
    }
}

/// Trains `runs` fresh optimizees with a frozen optimizer.
///
/// Run `i` uses the task and initial parameters derived from
/// `(seed, i)`, so different optimizers evaluated with the same seed see
/// identical problems. Runs execute on up to `jobs` threads and are
/// collected in index order.
pub fn evaluate_optimizer(
    kind: &OptimizerKind,
    family: &dyn TaskFamily,
    options: &EvalOptions,
) -> Result<EvalReport, MetaTrainError> {
    let rule = match kind {
        OptimizerKind::Learned(c) => UpdateRule::Learned {
            params: &c.params,
            dmd: dmd_config_for(c.params.rank, c.snapshots)?,
            snapshots: c.snapshots,
        },
        OptimizerKind::Adam { lr } => UpdateRule::Adam { lr: *lr },
        OptimizerKind::Sgd { lr } => UpdateRule::Sgd { lr: *lr },
    };
    let run_one = |index: usize| -> Result<EvalRun, MetaTrainError> {
        let mut task = family.instance(derive_seed(options.seed, Stream::EvalTask, index as u64), options.split);
        let theta0 = task.init_theta(derive_seed(options.seed, Stream::EvalTheta, index as u64));
        let mut log = TrajectoryLog::new();
        let out = run_optimizee(&rule, task.as_mut(), theta0, options.steps, &mut log)?;
        Ok(EvalRun {
            index,
            losses: out.losses,
            diverged_at: out.diverged_at,
        })
    };
    let runs: Vec<EvalRun> = if options.jobs <= 1 {
        (0..options.runs).map(run_one).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| MetaTrainError::Contract(format!("thread pool: {e}")))?;
        pool.install(|| (0..options.runs).into_par_iter().map(run_one).collect::<Result<_, _>>())?
    };
    Ok(EvalReport::from_runs(options.steps, runs))
}
