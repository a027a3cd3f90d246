//! File output: per-step CSV logs, plot-ready series and a JSON summary, plus
//! the reader used by the `report` command.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Controller, ExperimentConfig};
use crate::error::{Result, SimError};
use crate::harness::{checkpoint, Checkpoint, ErrorSample, ExperimentResult, MetricsReport, Trajectory};

pub const STEPS_FILE: &str = "steps.csv";
pub const CANDIDATES_FILE: &str = "candidates.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const ELLIPSOIDS_FILE: &str = "ellipsoids.csv";
pub const ENVELOPES_FILE: &str = "envelopes.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Shortest representation that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.into()
}

fn indexed(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}_{i}"))
}

struct Csv {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl Csv {
    fn create(dir: &Path, name: &str, header: Vec<String>) -> Result<Self> {
        let path = dir.join(name);
        let writer = csv::Writer::from_path(&path).map_err(|e| SimError::csv(&path, e))?;
        let mut csv = Self { path, writer };
        csv.row(header)?;
        Ok(csv)
    }

    fn row(&mut self, fields: Vec<String>) -> Result<()> {
        self.writer.write_record(&fields).map_err(|e| SimError::csv(&self.path, e))
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush().map_err(|e| SimError::io(&self.path, e))?;
        Ok(self.path)
    }
}

/// Column headers of the per-step log for the given dimensions.
pub fn steps_header(n: usize, m: usize, r: usize) -> Vec<String> {
    let mut h: Vec<String> = ["controller", "run", "k", "failed"].map(String::from).to_vec();
    h.extend(indexed("x", n));
    h.extend(indexed("y", m));
    h.extend(indexed("u", r));
    h.extend(indexed("xhat", n));
    h.extend(["estimate_error", "control_error", "true_distance", "weights_kept"].map(String::from));
    h
}

pub fn candidates_header(r: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "controller",
        "run",
        "k",
        "candidate",
        "weight",
        "frozen",
        "likelihood",
        "beta",
        "q",
        "det",
        "rho",
        "worst_case_cost",
        "lmi_min_eigenvalue",
        "adversary_excess",
        "control_fallback",
    ]
    .map(String::from)
    .to_vec();
    h.extend(indexed("u", r));
    h
}

fn write_steps(dir: &Path, res: &ExperimentResult) -> Result<PathBuf> {
    let sys = &res.experiment.system;
    let (n, m, r) = (sys.state_dim(), sys.output_dim(), sys.input_dim());
    let mut csv = Csv::create(dir, STEPS_FILE, steps_header(n, m, r))?;
    for t in res.runs.iter().flat_map(|run| &run.trajectories) {
        for s in &t.steps {
            let mut row = vec![t.controller.to_string(), t.run.to_string(), s.k.to_string(), flag(t.failure.is_some())];
            row.extend(s.state.iter().copied().map(num));
            match &s.observation {
                Some(y) => row.extend(y.iter().copied().map(num)),
                None => row.extend(std::iter::repeat_n(String::new(), m)),
            }
            row.extend(s.control.iter().copied().map(num));
            row.extend(s.estimate.iter().copied().map(num));
            row.push(num(s.estimate_error));
            row.push(num(s.control_error));
            row.push(opt(s.true_distance));
            row.push(flag(s.weights_kept));
            csv.row(row)?;
        }
    }
    csv.finish()
}

fn write_candidates(dir: &Path, res: &ExperimentResult) -> Result<PathBuf> {
    let r = res.experiment.system.input_dim();
    let mut csv = Csv::create(dir, CANDIDATES_FILE, candidates_header(r))?;
    for t in res.runs.iter().flat_map(|run| &run.trajectories) {
        for s in &t.steps {
            for (i, c) in s.candidates.iter().enumerate() {
                let mut row = vec![
                    t.controller.to_string(),
                    t.run.to_string(),
                    s.k.to_string(),
                    (i + 1).to_string(),
                    num(c.weight),
                    flag(c.frozen),
                    opt(c.likelihood),
                    opt(c.beta),
                    opt(c.q),
                    num(c.det),
                    opt(c.rho),
                    opt(c.worst_case_cost),
                    opt(c.lmi_min_eigenvalue),
                    opt(c.adversary_excess),
                    flag(c.control_fallback),
                ];
                match &c.control {
                    Some(u) => row.extend(u.iter().copied().map(num)),
                    None => row.extend(std::iter::repeat_n(String::new(), r)),
                }
                csv.row(row)?;
            }
        }
    }
    csv.finish()
}

fn write_weights(dir: &Path, res: &ExperimentResult) -> Result<PathBuf> {
    let s = res.experiment.config.candidates.len();
    let mut header: Vec<String> = ["controller", "run", "k"].map(String::from).to_vec();
    header.extend(indexed("w", s));
    let mut csv = Csv::create(dir, WEIGHTS_FILE, header)?;
    for t in res.runs.iter().flat_map(|run| &run.trajectories) {
        for step in &t.steps {
            let mut row = vec![t.controller.to_string(), t.run.to_string(), step.k.to_string()];
            row.extend(step.candidates.iter().map(|c| num(c.weight)));
            row.extend(std::iter::repeat_n(String::new(), s - step.candidates.len()));
            csv.row(row)?;
        }
    }
    csv.finish()
}

fn write_ellipsoids(dir: &Path, res: &ExperimentResult) -> Result<PathBuf> {
    let n = res.experiment.system.state_dim();
    let mut header: Vec<String> = ["controller", "run", "k", "candidate"].map(String::from).to_vec();
    header.extend(indexed("c", n));
    for i in 1..=n {
        header.extend((1..=n).map(|j| format!("p_{i}_{j}")));
    }
    let mut csv = Csv::create(dir, ELLIPSOIDS_FILE, header)?;
    let snapshot = res.experiment.config.snapshot_runs;
    for t in res.runs.iter().take(snapshot).flat_map(|run| &run.trajectories) {
        for step in &t.steps {
            for (i, c) in step.candidates.iter().enumerate() {
                let mut row = vec![t.controller.to_string(), t.run.to_string(), step.k.to_string(), (i + 1).to_string()];
                row.extend(c.center.iter().copied().map(num));
                row.extend(c.shape.transpose().iter().copied().map(num));
                csv.row(row)?;
            }
        }
    }
    csv.finish()
}

/// Spread across runs of the tracked signal (the state when regulating,
/// `T x` when tracking) at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopePoint {
    pub controller: Controller,
    pub k: usize,
    pub component: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Value in the first successful run.
    pub sample: f64,
    pub reference: Option<f64>,
}

pub fn envelopes(res: &ExperimentResult) -> Vec<EnvelopePoint> {
    let exp = &res.experiment;
    let mut out = Vec::new();
    for &c in &exp.config.controllers {
        let runs: Vec<&Trajectory> = res.trajectories(c).filter(|t| t.failure.is_none()).collect();
        let Some(first) = runs.first() else { continue };
        for (idx, step) in first.steps.iter().enumerate() {
            let outputs: Vec<_> =
                runs.iter().filter_map(|t| t.steps.get(idx)).map(|s| exp.tracked_output(&s.state)).collect();
            let sample = exp.tracked_output(&step.state);
            let reference = exp.tracking.as_ref().map(|(_, r)| r(step.k));
            for comp in 0..sample.len() {
                let vals = outputs.iter().map(|o| o[comp]);
                let min = vals.clone().fold(f64::INFINITY, f64::min);
                let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
                let mean = vals.sum::<f64>() / outputs.len() as f64;
                out.push(EnvelopePoint {
                    controller: c,
                    k: step.k,
                    component: comp + 1,
                    min,
                    max,
                    mean,
                    sample: sample[comp],
                    reference: reference.as_ref().map(|r| r[comp]),
                });
            }
        }
    }
    out
}

fn write_envelopes(dir: &Path, res: &ExperimentResult) -> Result<PathBuf> {
    let header = ["controller", "k", "component", "min", "max", "mean", "sample", "reference"].map(String::from).to_vec();
    let mut csv = Csv::create(dir, ENVELOPES_FILE, header)?;
    for p in envelopes(res) {
        csv.row(vec![
            p.controller.to_string(),
            p.k.to_string(),
            p.component.to_string(),
            num(p.min),
            num(p.max),
            num(p.mean),
            num(p.sample),
            opt(p.reference),
        ])?;
    }
    csv.finish()
}

/// Contents of the summary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub metrics: MetricsReport,
}

fn write_summary(dir: &Path, res: &ExperimentResult) -> Result<PathBuf> {
    let path = dir.join(SUMMARY_FILE);
    let summary = Summary { config: res.experiment.config.clone(), metrics: res.metrics.clone() };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| SimError::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| SimError::io(&path, e))?;
    Ok(path)
}

/// Write every output file into `dir`, creating it if needed.
pub fn write_all(dir: &Path, res: &ExperimentResult) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    Ok(vec![
        write_steps(dir, res)?,
        write_candidates(dir, res)?,
        write_weights(dir, res)?,
        write_ellipsoids(dir, res)?,
        write_envelopes(dir, res)?,
        write_summary(dir, res)?,
    ])
}

pub fn read_summary(dir: &Path) -> Result<Summary> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| SimError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| SimError::json(&path, e))
}

/// Read the error columns back from a per-step log.
pub fn read_error_samples(dir: &Path) -> Result<Vec<ErrorSample>> {
    let path = dir.join(STEPS_FILE);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| SimError::csv(&path, e))?;
    let header = reader.headers().map_err(|e| SimError::csv(&path, e))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SimError::Report(format!("{}: missing column {name}", path.display())))
    };
    let (ic, ir, ik, ifl, ie, ie2) = (
        col("controller")?,
        col("run")?,
        col("k")?,
        col("failed")?,
        col("estimate_error")?,
        col("control_error")?,
    );
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| SimError::csv(&path, e))?;
        let bad = |what: &str| SimError::Report(format!("{}: row {}: bad {what}", path.display(), line + 2));
        out.push(ErrorSample {
            controller: rec[ic].parse().map_err(|_| bad("controller"))?,
            run: rec[ir].parse().map_err(|_| bad("run"))?,
            k: rec[ik].parse().map_err(|_| bad("k"))?,
            failed: &rec[ifl] == "1",
            estimate_error: rec[ie].parse().map_err(|_| bad("estimate_error"))?,
            control_error: rec[ie2].parse().map_err(|_| bad("control_error"))?,
        });
    }
    Ok(out)
}

/// Recompute checkpoint metrics from an output directory's per-step log.
pub fn report(dir: &Path, horizons: &[usize]) -> Result<Vec<Checkpoint>> {
    let samples = read_error_samples(dir)?;
    if samples.is_empty() {
        return Err(SimError::Report(format!("{}: no steps recorded", dir.display())));
    }
    Ok(horizons.iter().map(|&t| checkpoint(&samples, t)).collect())
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}%", 100.0 * x)).unwrap_or_else(|| "-".into())
}

/// Plain-text table of the checkpoint metrics.
pub fn format_table(title: &str, checkpoints: &[Checkpoint]) -> String {
    let mut s = format!("{title}\n");
    s += &format!("{:<28}", "T");
    for c in checkpoints {
        s += &format!("{:>12}", c.horizon);
    }
    s.push('\n');
    let mut rows: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for c in checkpoints {
        for ctl in Controller::ALL {
            let m = c.controllers.get(&ctl);
            let label = ctl.name().to_uppercase();
            rows.entry(format!("1 {label} estimate error"))
                .or_default()
                .push(m.map(|m| format!("{:.4}", m.estimate_error_per_step)).unwrap_or_else(|| "-".into()));
            rows.entry(format!("2 {label} control error"))
                .or_default()
                .push(m.map(|m| format!("{:.4}", m.control_error_per_step)).unwrap_or_else(|| "-".into()));
        }
        rows.entry("3 ORC estimate improvement".into()).or_default().push(pct(c.orc_over_arc_estimate));
        rows.entry("4 ARC control improvement".into()).or_default().push(pct(c.arc_over_rc_control));
        rows.entry("5 ORC control improvement".into()).or_default().push(pct(c.orc_over_arc_control));
    }
    for (label, vals) in rows {
        s += &format!("{:<28}", &label[2..]);
        for v in vals {
            s += &format!("{v:>12}");
        }
        s.push('\n');
    }
    s
}
