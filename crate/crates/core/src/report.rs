//! Result tables, per-run loss CSVs and SVG loss plots.

use std::fmt::Write as _;
use std::io;

use crate::meta_train::{EvalReport, EvalRun, Stat};

/// Metric name of the sum over the last ten steps.
pub const METRIC_LAST_SUM: &str = "last10_sum";
/// Metric name of the loss after 300 steps.
pub const METRIC_LOSS_300: &str = "loss_at_300";

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub task: String,
    pub optimizer: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
    pub divergences: usize,
}

/// Rows of `(task, optimizer, metric, mean, std, runs, divergences)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one row per available metric of `report`. A metric without any
    /// finite run is written as NaN.
    pub fn add_report(&mut self, task: &str, optimizer: &str, report: &EvalReport) {
        let mut push = |metric: &str, stat: Option<Stat>| {
            let (mean, std) = stat.map_or((f64::NAN, f64::NAN), |s| (s.mean, s.std));
            self.rows.push(ResultRow {
                task: task.to_string(),
                optimizer: optimizer.to_string(),
                metric: metric.to_string(),
                mean,
                std,
                runs: report.runs.len(),
                divergences: report.divergences,
            });
        };
        if report.steps >= crate::meta_train::LOSS_STEP {
            push(METRIC_LOSS_300, report.loss_at_300);
        }
        push(METRIC_LAST_SUM, report.last_sum);
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["task", "optimizer", "metric", "mean", "std", "runs", "divergences"])?;
        for r in &self.rows {
            w.write_record([
                r.task.clone(),
                r.optimizer.clone(),
                r.metric.clone(),
                r.mean.to_string(),
                r.std.to_string(),
                r.runs.to_string(),
                r.divergences.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes `run,step,loss,diverged` rows for every observed loss.
pub fn write_runs_csv<W: io::Write>(runs: &[EvalRun], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "step", "loss", "diverged"])?;
    for run in runs {
        for (t, loss) in run.losses.iter().enumerate() {
            w.write_record([
                run.index.to_string(),
                (t + 1).to_string(),
                loss.to_string(),
                run.diverged().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a per-run CSV back into runs. A run marked diverged gets
/// `diverged_at` one past its last recorded step.
pub fn read_runs_csv<R: io::Read>(input: R) -> csv::Result<Vec<EvalRun>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut runs: Vec<EvalRun> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or_default().to_string();
        let parse_err = |what: &str| csv::Error::from(io::Error::new(io::ErrorKind::InvalidData, format!("bad {what}")));
        let index: usize = field(0).parse().map_err(|_| parse_err("run"))?;
        let step: usize = field(1).parse().map_err(|_| parse_err("step"))?;
        let loss: f64 = field(2).parse().map_err(|_| parse_err("loss"))?;
        let diverged: bool = field(3).parse().map_err(|_| parse_err("diverged"))?;
        if runs.last().is_none_or(|r| r.index != index) {
            runs.push(EvalRun {
                index,
                losses: Vec::new(),
                diverged_at: None,
            });
        }
        let run = runs.last_mut().expect("just pushed");
        run.losses.push(loss);
        run.diverged_at = diverged.then_some(step + 1);
    }
    Ok(runs)
}

/// Trailing mean over up to `window` most recent values.
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0, "window must be positive");
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// One plotted curve with an optional symmetric band.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
    pub band: Option<Vec<f64>>,
}

/// Minimal static SVG line chart.
#[derive(Clone, Debug, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl LineChart {
    pub fn to_svg(&self) -> String {
        let (w, h) = (800.0, 500.0);
        let (left, right, top, bottom) = (70.0, 190.0, 40.0, 50.0);
        let pw = w - left - right;
        let ph = h - top - bottom;
        let points = self.series.iter().map(|s| s.values.len()).max().unwrap_or(0);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &self.series {
            for (i, &v) in s.values.iter().enumerate() {
                let b = s.band.as_ref().and_then(|b| b.get(i)).copied().unwrap_or(0.0);
                if (v - b).is_finite() && (v + b).is_finite() {
                    lo = lo.min(v - b);
                    hi = hi.max(v + b);
                }
            }
        }
        if !lo.is_finite() || !hi.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let x_of = |i: usize| left + pw * i as f64 / (points.max(2) - 1) as f64;
        let y_of = |v: f64| top + ph * (1.0 - (v - lo) / (hi - lo));

        let mut svg = String::new();
        let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
        let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
            left + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let v = lo + (hi - lo) * k as f64 / 4.0;
            let y = y_of(v);
            let _ = writeln!(
                svg,
                r##"<line x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"##,
                left + pw,
                left - 6.0,
                y + 4.0,
                format_tick(v)
            );
        }
        if points > 0 {
            for k in 0..=4 {
                let i = (points - 1) * k / 4;
                let _ = writeln!(
                    svg,
                    r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
                    x_of(i),
                    top + ph + 16.0,
                    i + 1
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
            left + pw / 2.0,
            h - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {})">{}</text>"#,
            top + ph / 2.0,
            top + ph / 2.0,
            escape(&self.y_label)
        );

        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let finite: Vec<(usize, f64)> = s.values.iter().copied().enumerate().filter(|(_, v)| v.is_finite()).collect();
            if let Some(band) = &s.band {
                let upper: Vec<String> = finite
                    .iter()
                    .map(|&(i, v)| format!("{:.2},{:.2}", x_of(i), y_of(v + band.get(i).copied().unwrap_or(0.0))))
                    .collect();
                let lower: Vec<String> = finite
                    .iter()
                    .rev()
                    .map(|&(i, v)| format!("{:.2},{:.2}", x_of(i), y_of(v - band.get(i).copied().unwrap_or(0.0))))
                    .collect();
                let _ = writeln!(
                    svg,
                    r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                    upper.join(" "),
                    lower.join(" ")
                );
            }
            let line: Vec<String> = finite.iter().map(|&(i, v)| format!("{:.2},{:.2}", x_of(i), y_of(v))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                line.join(" ")
            );
            let ly = top + 16.0 + 20.0 * k as f64;
            let lx = left + pw + 12.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
                lx + 20.0,
                lx + 26.0,
                ly + 4.0,
                escape(&s.label)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}
