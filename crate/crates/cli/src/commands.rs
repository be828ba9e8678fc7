use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dmd_l2o::datasets::Split;
use dmd_l2o::dmd::{dmd_modes, try_dmd_eigenvalues, DmdConfig, SnapshotWindow};
use dmd_l2o::meta_train::{
    evaluate_optimizer, meta_train, EvalOptions, EvalReport, MetaTrainConfig, OptimizerKind,
};
use dmd_l2o::optimizee::TaskFamily;
use dmd_l2o::optimizer_net::Checkpoint;
use dmd_l2o::report::{rolling_mean, write_runs_csv, LineChart, ResultsTable, Series};
use dmd_l2o::tasks::{build_family, find_task, task_names};
use log::info;

use crate::args::{DmdAnalyzeArgs, EvaluateArgs, MetaTrainArgs, SweepArgs};
use crate::error::CliError;
use crate::settings::{data_dir, pick, ConfigFile};

const DEFAULT_ADAM_LR: f64 = 0.01;
const DEFAULT_SGD_LR: f64 = 0.1;
const DEFAULT_EVAL_STEPS: usize = 1000;
const DEFAULT_EVAL_RUNS: usize = 30;
const SWEEP_SMOOTHING: usize = 30;

fn load_family(task: &str, data: &Path, train_limit: Option<usize>) -> Result<Box<dyn TaskFamily>, CliError> {
    let spec = find_task(task).ok_or_else(|| {
        CliError::Usage(format!("unknown task `{task}`; available tasks: {}", task_names().join(", ")))
    })?;
    if train_limit == Some(0) {
        return Err(CliError::Usage("--train-limit must be positive".into()));
    }
    info!("loading task {task} from {}", data.display());
    Ok(build_family(&spec, data, train_limit)?)
}

fn parse_split(text: &str) -> Result<Split, CliError> {
    match text {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(CliError::Usage(format!("split must be `train` or `test`, got `{other}`"))),
    }
}

fn positive(name: &str, value: usize) -> Result<usize, CliError> {
    if value == 0 {
        Err(CliError::Usage(format!("--{name} must be positive")))
    } else {
        Ok(value)
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Creates `path` and hands a buffered writer to `body`.
fn write_file<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), Box<dyn std::error::Error>>,
{
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    body(&mut out).map_err(|e| CliError::io(path, e))?;
    out.flush().map_err(|e| CliError::io(path, e))
}

fn summary(task: &str, label: &str, report: &EvalReport) -> String {
    let last = report
        .last_sum
        .map_or("all runs diverged".to_string(), |s| format!("last10_sum {:.6} ± {:.6}", s.mean, s.std));
    let at300 = report
        .loss_at_300
        .map_or(String::new(), |s| format!(", loss_at_300 {:.6} ± {:.6}", s.mean, s.std));
    format!(
        "{task} {label}: {last}{at300} ({} of {} runs diverged)",
        report.divergences,
        report.runs.len()
    )
}

/// File-name-safe form of an optimizer label.
fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c.to_ascii_lowercase() } else { '_' })
        .collect::<String>()
        .trim_end_matches('_')
        .to_string()
}

pub fn run_meta_train(args: MetaTrainArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let defaults = MetaTrainConfig::default();
    let task = pick(args.task, cfg.string("task")?, "mnist-train".to_string());
    let config = MetaTrainConfig {
        steps: pick(args.steps, cfg.usize("steps")?, defaults.steps),
        epochs: pick(args.epochs, cfg.usize("epochs")?, defaults.epochs),
        unroll: pick(args.unroll, cfg.usize("unroll")?, defaults.unroll),
        meta_lr: pick(args.meta_lr, cfg.f64("meta-lr")?, defaults.meta_lr),
        weights: None,
        rank: pick(args.rank, cfg.usize("rank")?, defaults.rank),
        snapshots: pick(args.snapshots, cfg.usize("snapshots")?, defaults.snapshots),
        eval_every: pick(args.eval_every, cfg.usize("eval-every")?, defaults.eval_every),
        eval_instances: pick(args.eval_instances, cfg.usize("eval-instances")?, defaults.eval_instances),
        seed: pick(args.common.seed, cfg.u64("seed")?, defaults.seed),
        jobs: pick(args.common.jobs, cfg.usize("jobs")?, defaults.jobs),
        keep_history: args.keep_history || cfg.bool("keep-history")?.unwrap_or(false),
    };
    config.validate()?;
    positive("epochs", config.epochs)?;
    positive("jobs", config.jobs)?;
    let train_limit = args.train_limit.or(cfg.usize("train-limit")?);
    let out_dir = pick(args.common.out_dir, cfg.path("out-dir")?, PathBuf::from("runs/meta-train"));
    let data = data_dir(args.common.data_dir, &cfg)?;

    let family = load_family(&task, &data, train_limit)?;
    info!(
        "meta-training on {task}: R={} m={} T={} N={} u={}",
        config.rank, config.snapshots, config.steps, config.epochs, config.unroll
    );
    let report = meta_train(&config, family.as_ref())?;

    create_dir(&out_dir)?;
    let ckpt_path = out_dir.join("checkpoint.json");
    report.best.save(&ckpt_path)?;
    write_file(&out_dir.join("epoch_scores.csv"), |out| Ok(report.write_scores_csv(out)?))?;
    if config.keep_history {
        let history = out_dir.join("history");
        create_dir(&history)?;
        for ckpt in &report.history {
            let epoch = ckpt.epoch.unwrap_or(0);
            ckpt.save(&history.join(format!("epoch_{epoch}.json")))?;
        }
    }
    let best = report
        .best
        .score
        .map_or("inf".to_string(), |s| s.to_string());
    println!(
        "best checkpoint: epoch {} score {best} (initial score {}) -> {}",
        report.best.epoch.unwrap_or(0),
        report.initial_score,
        ckpt_path.display()
    );
    if !report.aborted_epochs.is_empty() {
        println!("epochs stopped by non-finite values: {:?}", report.aborted_epochs);
    }
    Ok(())
}

/// Loads a checkpoint and checks it against the requested configuration.
fn load_checkpoint(
    path: &Path,
    want_dmd: Option<bool>,
    rank: Option<usize>,
    snapshots: Option<usize>,
) -> Result<Checkpoint, CliError> {
    let ckpt = Checkpoint::load(path)?;
    let have = (ckpt.params.rank, ckpt.snapshots);
    let mismatch = |what: String| CliError::Data(format!("{}: {what}", path.display()));
    match want_dmd {
        Some(true) if have.0 == 0 => return Err(mismatch("checkpoint has no DMD features; use --optimizer l2o".into())),
        Some(false) if have.0 > 0 => {
            return Err(mismatch(format!("checkpoint has DMD rank {}; use --optimizer l2o-dmd", have.0)))
        }
        _ => {}
    }
    if let Some(r) = rank {
        if r != have.0 {
            return Err(mismatch(format!("checkpoint has rank {}, expected {r}", have.0)));
        }
    }
    if let Some(m) = snapshots {
        if have.0 > 0 && m != have.1 {
            return Err(mismatch(format!("checkpoint has {} snapshots, expected {m}", have.1)));
        }
    }
    Ok(ckpt)
}

fn baseline(name: &str, lr: Option<f64>) -> Result<OptimizerKind, CliError> {
    match name {
        "adam" => Ok(OptimizerKind::Adam {
            lr: lr.unwrap_or(DEFAULT_ADAM_LR),
        }),
        "sgd" => Ok(OptimizerKind::Sgd {
            lr: lr.unwrap_or(DEFAULT_SGD_LR),
        }),
        other => Err(CliError::Usage(format!("unknown baseline `{other}`; expected adam or sgd"))),
    }
}

pub fn run_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let task = pick(args.task, cfg.string("task")?, "mnist-1l".to_string());
    let optimizer = args
        .optimizer
        .or(cfg.string("optimizer")?)
        .ok_or_else(|| CliError::Usage("--optimizer is required (l2o, l2o-dmd, adam or sgd)".into()))?;
    let lr = args.lr.or(cfg.f64("lr")?);
    if let Some(lr) = lr {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(CliError::Usage(format!("--lr must be positive, got {lr}")));
        }
    }
    let rank = args.rank.or(cfg.usize("rank")?);
    let snapshots = args.snapshots.or(cfg.usize("snapshots")?);
    let checkpoint = args.checkpoint.or(cfg.path("checkpoint")?);
    let kind = match optimizer.as_str() {
        "l2o" | "l2o-dmd" => {
            let path = checkpoint
                .ok_or_else(|| CliError::Usage(format!("--optimizer {optimizer} needs --checkpoint")))?;
            if let (Some(r), Some(m)) = (rank, snapshots) {
                if r > 0 && r > m {
                    return Err(CliError::Usage(format!("rank {r} exceeds snapshot count {m}")));
                }
            }
            OptimizerKind::Learned(load_checkpoint(&path, Some(optimizer == "l2o-dmd"), rank, snapshots)?)
        }
        "adam" | "sgd" => baseline(&optimizer, lr)?,
        other => {
            return Err(CliError::Usage(format!(
                "unknown optimizer `{other}`; expected l2o, l2o-dmd, adam or sgd"
            )))
        }
    };
    let options = EvalOptions {
        steps: positive("steps", pick(args.steps, cfg.usize("steps")?, DEFAULT_EVAL_STEPS))?,
        runs: positive("runs", pick(args.runs, cfg.usize("runs")?, DEFAULT_EVAL_RUNS))?,
        seed: pick(args.common.seed, cfg.u64("seed")?, 0),
        split: parse_split(&pick(args.split, cfg.string("split")?, "train".to_string()))?,
        jobs: positive("jobs", pick(args.common.jobs, cfg.usize("jobs")?, 1))?,
    };
    let train_limit = args.train_limit.or(cfg.usize("train-limit")?);
    let label = kind.label();
    let out_dir = pick(
        args.common.out_dir,
        cfg.path("out-dir")?,
        PathBuf::from("runs/evaluate").join(&task).join(slug(&label)),
    );
    let data = data_dir(args.common.data_dir, &cfg)?;

    let family = load_family(&task, &data, train_limit)?;
    info!("evaluating {label} on {task}: {} runs of {} steps", options.runs, options.steps);
    let report = evaluate_optimizer(&kind, family.as_ref(), &options)?;

    create_dir(&out_dir)?;
    write_file(&out_dir.join("runs.csv"), |out| Ok(write_runs_csv(&report.runs, out)?))?;
    let mut table = ResultsTable::new();
    table.add_report(&task, &label, &report);
    write_file(&out_dir.join("results.csv"), |out| Ok(table.write_csv(out)?))?;
    let chart = LineChart {
        title: format!("{label} on {task}"),
        x_label: "step".into(),
        y_label: "loss".into(),
        series: vec![Series {
            label: label.clone(),
            values: report.mean_curve.clone(),
            band: Some(report.std_curve.clone()),
        }],
    };
    write_file(&out_dir.join("loss.svg"), |out| Ok(out.write_all(chart.to_svg().as_bytes())?))?;
    println!("{}", summary(&task, &label, &report));
    Ok(())
}

/// Parses `R,m`.
fn parse_pair(text: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("--pair expects `R,m` with positive integers, got `{text}`"));
    let (r, m) = text.split_once(',').ok_or_else(bad)?;
    let r: usize = r.trim().parse().map_err(|_| bad())?;
    let m: usize = m.trim().parse().map_err(|_| bad())?;
    if r == 0 || m == 0 {
        return Err(bad());
    }
    if r > m {
        return Err(CliError::Usage(format!("--pair {text}: rank {r} exceeds snapshot count {m}")));
    }
    Ok((r, m))
}

pub fn run_sweep(args: SweepArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let task = pick(args.task, cfg.string("task")?, "mnist-batch".to_string());
    if args.pairs.is_empty() && args.baselines.is_empty() {
        return Err(CliError::Usage("sweep needs at least one --pair or --baseline".into()));
    }
    if args.pairs.len() != args.checkpoints.len() {
        return Err(CliError::Usage(format!(
            "{} --pair values but {} --checkpoint files; give one checkpoint per pair",
            args.pairs.len(),
            args.checkpoints.len()
        )));
    }
    let pairs = args.pairs.iter().map(|p| parse_pair(p)).collect::<Result<Vec<_>, _>>()?;
    let mut kinds = Vec::new();
    for ((r, m), path) in pairs.iter().zip(&args.checkpoints) {
        kinds.push(OptimizerKind::Learned(load_checkpoint(path, Some(true), Some(*r), Some(*m))?));
    }
    for name in &args.baselines {
        kinds.push(baseline(name, None)?);
    }
    let options = EvalOptions {
        steps: positive("steps", pick(args.steps, cfg.usize("steps")?, DEFAULT_EVAL_STEPS))?,
        runs: positive("runs", pick(args.runs, cfg.usize("runs")?, DEFAULT_EVAL_RUNS))?,
        seed: pick(args.common.seed, cfg.u64("seed")?, 0),
        split: parse_split(&pick(args.split, cfg.string("split")?, "train".to_string()))?,
        jobs: positive("jobs", pick(args.common.jobs, cfg.usize("jobs")?, 1))?,
    };
    let train_limit = args.train_limit.or(cfg.usize("train-limit")?);
    let out_dir = pick(
        args.common.out_dir,
        cfg.path("out-dir")?,
        PathBuf::from("runs/sweep").join(&task),
    );
    let data = data_dir(args.common.data_dir, &cfg)?;

    let family = load_family(&task, &data, train_limit)?;
    create_dir(&out_dir)?;
    let mut table = ResultsTable::new();
    let mut series = Vec::new();
    for kind in &kinds {
        let label = kind.label();
        info!("evaluating {label} on {task}");
        let report = evaluate_optimizer(kind, family.as_ref(), &options)?;
        let runs_path = out_dir.join(format!("runs_{}.csv", slug(&label)));
        write_file(&runs_path, |out| Ok(write_runs_csv(&report.runs, out)?))?;
        table.add_report(&task, &label, &report);
        series.push(Series {
            label: label.clone(),
            values: rolling_mean(&report.mean_curve, SWEEP_SMOOTHING),
            band: None,
        });
        println!("{}", summary(&task, &label, &report));
    }
    write_file(&out_dir.join("results.csv"), |out| Ok(table.write_csv(out)?))?;
    let chart = LineChart {
        title: format!("DMD configurations on {task}"),
        x_label: "step".into(),
        y_label: format!("loss (rolling mean of {SWEEP_SMOOTHING})"),
        series,
    };
    write_file(&out_dir.join("sweep.svg"), |out| Ok(out.write_all(chart.to_svg().as_bytes())?))?;
    Ok(())
}

/// Reads a headered CSV of numeric columns into rows.
fn read_trajectory(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let width = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .len();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if record.len() != width {
            return Err(CliError::Data(format!(
                "{}: row {} has {} columns, header has {width}",
                path.display(),
                i + 1,
                record.len()
            )));
        }
        let row = record
            .iter()
            .map(|field| field.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| CliError::Data(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn run_dmd_analyze(args: DmdAnalyzeArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let input = args
        .input
        .or(cfg.path("input")?)
        .ok_or_else(|| CliError::Usage("--input is required".into()))?;
    let rank = pick(args.rank, cfg.usize("rank")?, 1);
    let snapshots = pick(args.snapshots, cfg.usize("snapshots")?, 100);
    let config = DmdConfig::new(rank, snapshots).map_err(|e| CliError::Usage(e.to_string()))?;
    let want_modes = args.modes || cfg.bool("modes")?.unwrap_or(false);
    let out_dir = pick(args.common.out_dir, cfg.path("out-dir")?, PathBuf::from("runs/dmd-analyze"));

    let rows = read_trajectory(&input)?;
    if rows.len() < snapshots + 1 {
        return Err(CliError::Data(format!(
            "{}: {} rows, need at least {} for {snapshots} snapshots",
            input.display(),
            rows.len(),
            snapshots + 1
        )));
    }
    let data_err = |step: usize, e: dmd_l2o::dmd::DmdError| CliError::Data(format!("row {step}: {e}"));
    let mut window = SnapshotWindow::new(snapshots);
    let mut eigen_rows = Vec::with_capacity(rows.len() - snapshots);
    for (i, row) in rows.iter().enumerate() {
        let step = i + 1;
        window.push_state(row.clone()).map_err(|e| data_err(step, e))?;
        if window.is_full() {
            let features = try_dmd_eigenvalues(&window, &config).map_err(|e| data_err(step, e))?;
            eigen_rows.push((step, features.into_vec()));
        }
    }

    create_dir(&out_dir)?;
    write_file(&out_dir.join("eigenvalues.csv"), |out| {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        for k in 1..=rank {
            header.push(format!("re_{k}"));
            header.push(format!("im_{k}"));
        }
        w.write_record(&header)?;
        for (step, values) in &eigen_rows {
            let mut record = vec![step.to_string()];
            record.extend(values.iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    })?;
    if want_modes {
        let modes = dmd_modes(&window, &config).map_err(|e| data_err(rows.len(), e))?;
        write_file(&out_dir.join("modes.csv"), |out| {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["mode", "component", "re", "im"])?;
            for (k, mode) in modes.iter().enumerate() {
                for (j, z) in mode.iter().enumerate() {
                    w.write_record([(k + 1).to_string(), (j + 1).to_string(), z.re.to_string(), z.im.to_string()])?;
                }
            }
            w.flush()?;
            Ok(())
        })?;
    }
    println!(
        "{} windows of {snapshots} snapshots from {} -> {}",
        eigen_rows.len(),
        input.display(),
        out_dir.join("eigenvalues.csv").display()
    );
    Ok(())
}
