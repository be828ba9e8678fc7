use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

const MAIN_HELP: &str = "\
Settings are resolved in the order: command-line flag, then the --config
file, then built-in defaults. The config file is TOML with flat keys named
like the long flags, for example:

    task = \"mnist-train\"
    rank = 1
    snapshots = 100
    meta-lr = 0.001

The data directory defaults to $DMD_L2O_DATA_DIR, then ./data.

Exit codes: 0 success, 2 I/O error, 64 usage error, 65 data or contract error.";

#[derive(Parser, Debug)]
#[command(
    name = "dmd-l2o",
    version,
    about = "Meta-train and benchmark LSTM optimizers fed with DMD eigenvalue features",
    after_help = MAIN_HELP
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Meta-train an optimizer and keep the best-scoring checkpoint.
    #[command(after_help = "\
Outputs in --out-dir:
  checkpoint.json    best optimizer parameters with their score and epoch
  epoch_scores.csv   epoch,score (epoch 0 is the untrained optimizer)
  history/epoch_<N>.json  every evaluated checkpoint, with --keep-history")]
    MetaTrain(MetaTrainArgs),

    /// Evaluate one optimizer on a task over independent runs.
    #[command(after_help = "\
Outputs in --out-dir:
  runs.csv      run,step,loss,diverged  (one row per observed step)
  results.csv   task,optimizer,metric,mean,std,runs,divergences
                metrics: loss_at_300 (when steps >= 300) and last10_sum
  loss.svg      mean loss curve with a one-standard-deviation band")]
    Evaluate(EvaluateArgs),

    /// Evaluate checkpoints for several (R, m) pairs and overlay their curves.
    #[command(after_help = "\
Each --pair R,m is matched by position with a --checkpoint file.
Outputs in --out-dir:
  results.csv        task,optimizer,metric,mean,std,runs,divergences
  runs_<label>.csv   run,step,loss,diverged for each optimizer
  sweep.svg          mean curves smoothed by a rolling mean of 30 steps")]
    Sweep(SweepArgs),

    /// Sliding-window DMD eigenvalues of a trajectory CSV.
    #[command(after_help = "\
The input CSV has a header row; every column is one state component and
every row one snapshot. Outputs in --out-dir:
  eigenvalues.csv   step,re_1,im_1,...,re_R,im_R for each window ending at
                    row `step` (rows - m rows in total)
  modes.csv         mode,component,re,im for the last window, with --modes")]
    DmdAnalyze(DmdAnalyzeArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// TOML file with default values for any long flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for evaluation runs.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Dataset root directory.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct MetaTrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training task from the registry [default: mnist-train].
    #[arg(long)]
    pub task: Option<String>,
    /// DMD rank R; 0 trains the plain LSTM optimizer [default: 1].
    #[arg(long)]
    pub rank: Option<usize>,
    /// DMD snapshot count m [default: 100].
    #[arg(long)]
    pub snapshots: Option<usize>,
    /// Inner steps per epoch T [default: 100].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Outer epochs N [default: 1000].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Truncated unroll length u [default: 20].
    #[arg(long)]
    pub unroll: Option<usize>,
    /// Adam learning rate for the optimizer parameters [default: 0.001].
    #[arg(long)]
    pub meta_lr: Option<f64>,
    /// Epochs between evaluations [default: 20].
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Fresh optimizees per evaluation [default: 20].
    #[arg(long)]
    pub eval_instances: Option<usize>,
    /// Use only the first N training examples.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Also write every evaluated checkpoint.
    #[arg(long)]
    pub keep_history: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Task from the registry [default: mnist-1l].
    #[arg(long)]
    pub task: Option<String>,
    /// One of l2o, l2o-dmd, adam, sgd.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Checkpoint for l2o and l2o-dmd.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Expected DMD rank of the checkpoint.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Expected DMD snapshot count of the checkpoint.
    #[arg(long)]
    pub snapshots: Option<usize>,
    /// Optimization steps per run [default: 1000].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Independent runs [default: 30].
    #[arg(long)]
    pub runs: Option<usize>,
    /// Learning rate for adam [default: 0.01] or sgd [default: 0.1].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Dataset split the optimizees train on: train or test [default: train].
    #[arg(long)]
    pub split: Option<String>,
    /// Use only the first N training examples.
    #[arg(long)]
    pub train_limit: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Task from the registry [default: mnist-batch].
    #[arg(long)]
    pub task: Option<String>,
    /// A DMD configuration as `R,m`; repeat for each curve.
    #[arg(long = "pair", value_name = "R,m")]
    pub pairs: Vec<String>,
    /// Checkpoint for the pair at the same position.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// Also evaluate a baseline: adam or sgd.
    #[arg(long = "baseline")]
    pub baselines: Vec<String>,
    /// Optimization steps per run [default: 1000].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Independent runs [default: 30].
    #[arg(long)]
    pub runs: Option<usize>,
    /// Dataset split the optimizees train on [default: train].
    #[arg(long)]
    pub split: Option<String>,
    /// Use only the first N training examples.
    #[arg(long)]
    pub train_limit: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct DmdAnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trajectory CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// DMD rank R [default: 1].
    #[arg(long)]
    pub rank: Option<usize>,
    /// DMD snapshot count m [default: 100].
    #[arg(long)]
    pub snapshots: Option<usize>,
    /// Also write the DMD modes of the last window.
    #[arg(long)]
    pub modes: bool,
}
