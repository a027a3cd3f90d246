//! Monte Carlo runs of the ARC, ORC and RC controllers and the cumulative
//! error metrics computed from them.

use std::collections::BTreeMap;

use arcset::adaptive::{CandidateBank, ControlContext, StepReport};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Controller, Experiment};
use crate::error::Result;
use crate::plant::{into_ellipsoid, plant_step, NoiseDraws};

/// Per-candidate record of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub weight: f64,
    pub frozen: bool,
    pub likelihood: Option<f64>,
    pub beta: Option<f64>,
    pub q: Option<f64>,
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub det: f64,
    pub rho: Option<f64>,
    pub worst_case_cost: Option<f64>,
    pub control: Option<DVector<f64>>,
    pub control_fallback: bool,
    pub lmi_min_eigenvalue: Option<f64>,
    pub adversary_excess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub state: DVector<f64>,
    pub observation: Option<DVector<f64>>,
    pub control: DVector<f64>,
    /// Weighted center of the filtered sets.
    pub estimate: DVector<f64>,
    /// `‖x(k) − x̂(k)‖²`.
    pub estimate_error: f64,
    /// `‖x(k)‖²`, or `‖T x(k) − r(k)‖²` when tracking.
    pub control_error: f64,
    pub weights_kept: bool,
    /// Normalized distance of `x(k)` from the true candidate's filtered set.
    pub true_distance: Option<f64>,
    pub candidates: Vec<CandidateRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub controller: Controller,
    pub run: usize,
    pub steps: Vec<StepRecord>,
    pub failure: Option<String>,
}

impl Trajectory {
    /// `Σ_{k=1}^{T} e(k)` for the given per-step error.
    pub fn cumulative(&self, horizon: usize, error: impl Fn(&StepRecord) -> f64) -> f64 {
        self.steps.iter().filter(|s| s.k >= 1 && s.k <= horizon).map(error).sum()
    }
}

/// Everything produced by one run: one trajectory per controller.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

impl RunResult {
    pub fn trajectory(&self, c: Controller) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.controller == c)
    }
}

/// Seed of run `run` derived from the experiment seed.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    seed.wrapping_add((run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn thetas_for(exp: &Experiment, c: Controller) -> (Vec<Vec<f64>>, bool) {
    match c {
        Controller::Arc => (exp.config.candidates.clone(), true),
        Controller::Orc => (vec![exp.true_theta.clone()], true),
        Controller::Rc => (vec![exp.true_theta.clone()], false),
    }
}

fn true_position(exp: &Experiment, c: Controller) -> Option<usize> {
    match c {
        Controller::Arc => exp.true_index,
        Controller::Orc | Controller::Rc => Some(0),
    }
}

fn record(exp: &Experiment, c: Controller, report: &StepReport, x: &DVector<f64>, y: Option<&DVector<f64>>) -> StepRecord {
    let n = x.len();
    let mut estimate = DVector::zeros(n);
    for cand in &report.candidates {
        if cand.weight > 0.0 {
            estimate.axpy(cand.weight, cand.estimate.center(), 1.0);
        }
    }
    let k = report.step;
    let candidates = report
        .candidates
        .iter()
        .map(|r| CandidateRecord {
            weight: r.weight,
            frozen: r.frozen,
            likelihood: r.likelihood,
            beta: r.beta,
            q: r.q,
            center: r.estimate.center().clone(),
            shape: r.estimate.shape().clone(),
            det: r.estimate.determinant(),
            rho: r.rho,
            worst_case_cost: r.worst_case_cost,
            control: r.control.clone(),
            control_fallback: r.control_fallback,
            lmi_min_eigenvalue: r.lmi_min_eigenvalue,
            adversary_excess: r.adversary_excess,
        })
        .collect();
    StepRecord {
        k,
        state: x.clone(),
        observation: y.cloned(),
        control: report.control.clone(),
        estimate_error: (x - &estimate).norm_squared(),
        estimate,
        control_error: exp.control_error(k, x),
        weights_kept: report.weights_kept,
        true_distance: true_position(exp, c).map(|i| report.candidates[i].estimate.normalized_distance(x)),
        candidates,
    }
}

/// Simulate one controller against fixed noise draws.
pub fn simulate(exp: &Experiment, c: Controller, run: usize, seed: u64, draws: &NoiseDraws) -> Trajectory {
    let mut steps = Vec::with_capacity(exp.config.steps);
    let failure = simulate_into(exp, c, seed, draws, &mut steps).err().map(|e| e.to_string());
    if let Some(msg) = &failure {
        log::error!("{c} run {run} failed: {msg}");
    }
    Trajectory { controller: c, run, steps, failure }
}

fn simulate_into(
    exp: &Experiment,
    c: Controller,
    seed: u64,
    draws: &NoiseDraws,
    steps: &mut Vec<StepRecord>,
) -> Result<()> {
    let (thetas, learning) = thetas_for(exp, c);
    let input_dim = exp.system.input_dim();
    let mut bank = CandidateBank::new(thetas, exp.prior.clone(), input_dim, learning)?;
    let ctx = ControlContext {
        system: &exp.system,
        cost: &exp.cost,
        tolerances: exp.tolerances,
        adversary_draws: exp.config.adversary_draws,
        adversary_seed: seed,
    };
    let mut x = into_ellipsoid(exp.prior.center(), exp.prior.shape(), &draws.initial);
    let mut y: Option<DVector<f64>> = None;
    for k in 0..exp.config.steps {
        let report = bank.advance(&ctx, y.as_ref())?;
        steps.push(record(exp, c, &report, &x, y.as_ref()));
        if k + 1 < exp.config.steps {
            let (next, obs) =
                plant_step(&exp.system, &exp.true_theta, &x, &report.control, k, &draws.process[k], &draws.output[k + 1])?;
            x = next;
            y = Some(obs);
        }
    }
    Ok(())
}

/// Run every selected controller for run index `run`.
pub fn run_once(exp: &Experiment, run: usize) -> RunResult {
    let seed = run_seed(exp.config.seed, run);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = NoiseDraws::draw(
        exp.system.state_dim(),
        exp.system.output_dim(),
        exp.config.steps,
        exp.config.noise,
        &mut rng,
    );
    let trajectories = exp.config.controllers.iter().map(|&c| simulate(exp, c, run, seed, &draws)).collect();
    RunResult { run, seed, trajectories }
}

/// Mean cumulative errors of one controller at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// Mean over runs of `Σ_{k=1}^{T} ‖x(k) − x̂(k)‖²`.
    pub estimate_error: f64,
    /// Mean over runs of `Σ_{k=1}^{T}` of the control (or tracking) error.
    pub control_error: f64,
    /// The two sums above divided by `T`.
    pub estimate_error_per_step: f64,
    pub control_error_per_step: f64,
}

/// `(baseline − candidate) / baseline`.
pub fn improvement(baseline: f64, candidate: f64) -> f64 {
    (baseline - candidate) / baseline
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub horizon: usize,
    pub controllers: BTreeMap<Controller, ErrorMetrics>,
    /// ARC control improvement over RC.
    pub arc_over_rc_control: Option<f64>,
    /// ORC control improvement over ARC.
    pub orc_over_arc_control: Option<f64>,
    /// ORC estimate improvement over ARC.
    pub orc_over_arc_estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub controller: Controller,
    pub run: usize,
    pub message: String,
}

/// Aggregate solver diagnostics over every solved problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub solves: usize,
    pub min_lmi_eigenvalue: f64,
    /// Largest sampled `cost − bound`; nonpositive when every bound held.
    pub max_adversary_excess: Option<f64>,
    pub control_fallbacks: usize,
    pub weights_kept_events: usize,
    /// Largest normalized distance of the true state from the true candidate's set.
    pub max_true_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub runs: usize,
    pub successful_runs: usize,
    pub failed: Vec<FailedRun>,
    pub checkpoints: Vec<Checkpoint>,
    pub certificates: CertificateSummary,
}

/// Per-step errors of one trajectory, the input of every metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub controller: Controller,
    pub run: usize,
    pub k: usize,
    pub estimate_error: f64,
    pub control_error: f64,
    /// Whether the trajectory this step belongs to aborted.
    pub failed: bool,
}

pub fn error_samples<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>) -> Vec<ErrorSample> {
    trajectories
        .into_iter()
        .flat_map(|t| {
            t.steps.iter().map(move |s| ErrorSample {
                controller: t.controller,
                run: t.run,
                k: s.k,
                estimate_error: s.estimate_error,
                control_error: s.control_error,
                failed: t.failure.is_some(),
            })
        })
        .collect()
}

/// Mean over successful runs of the cumulative errors `Σ_{k=1}^{T}` of `c`.
pub fn error_metrics(samples: &[ErrorSample], c: Controller, horizon: usize) -> Option<ErrorMetrics> {
    let mut per_run: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.controller == c && !s.failed) {
        let entry = per_run.entry(s.run).or_insert((0.0, 0.0));
        if s.k >= 1 && s.k <= horizon {
            entry.0 += s.estimate_error;
            entry.1 += s.control_error;
        }
    }
    if per_run.is_empty() {
        return None;
    }
    let count = per_run.len() as f64;
    let est = per_run.values().map(|v| v.0).sum::<f64>() / count;
    let ctl = per_run.values().map(|v| v.1).sum::<f64>() / count;
    let t = horizon as f64;
    Some(ErrorMetrics {
        estimate_error: est,
        control_error: ctl,
        estimate_error_per_step: est / t,
        control_error_per_step: ctl / t,
    })
}

pub fn checkpoint(samples: &[ErrorSample], horizon: usize) -> Checkpoint {
    let mut controllers = BTreeMap::new();
    for c in Controller::ALL {
        if let Some(m) = error_metrics(samples, c, horizon) {
            controllers.insert(c, m);
        }
    }
    let get = |c: Controller| controllers.get(&c).copied();
    let ratio = |base: Option<ErrorMetrics>, cand: Option<ErrorMetrics>, f: fn(&ErrorMetrics) -> f64| {
        base.zip(cand).map(|(b, c)| improvement(f(&b), f(&c)))
    };
    Checkpoint {
        horizon,
        arc_over_rc_control: ratio(get(Controller::Rc), get(Controller::Arc), |m| m.control_error),
        orc_over_arc_control: ratio(get(Controller::Arc), get(Controller::Orc), |m| m.control_error),
        orc_over_arc_estimate: ratio(get(Controller::Arc), get(Controller::Orc), |m| m.estimate_error),
        controllers,
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub experiment: Experiment,
    pub runs: Vec<RunResult>,
    pub metrics: MetricsReport,
}

impl ExperimentResult {
    pub fn trajectories(&self, c: Controller) -> impl Iterator<Item = &Trajectory> {
        self.runs.iter().filter_map(move |r| r.trajectory(c))
    }

    pub fn all_succeeded(&self) -> bool {
        self.metrics.failed.is_empty()
    }
}

fn summarize(exp: &Experiment, runs: &[RunResult]) -> MetricsReport {
    let all: Vec<&Trajectory> = runs.iter().flat_map(|r| &r.trajectories).collect();
    let failed: Vec<FailedRun> = all
        .iter()
        .filter_map(|t| {
            t.failure.as_ref().map(|m| FailedRun { controller: t.controller, run: t.run, message: m.clone() })
        })
        .collect();
    let successful_runs = runs.iter().filter(|r| r.trajectories.iter().all(|t| t.failure.is_none())).count();

    let mut cert = CertificateSummary {
        solves: 0,
        min_lmi_eigenvalue: f64::INFINITY,
        max_adversary_excess: None,
        control_fallbacks: 0,
        weights_kept_events: 0,
        max_true_distance: 0.0,
    };
    for s in all.iter().flat_map(|t| &t.steps) {
        cert.weights_kept_events += usize::from(s.weights_kept);
        if let Some(d) = s.true_distance {
            cert.max_true_distance = cert.max_true_distance.max(d);
        }
        for c in &s.candidates {
            cert.control_fallbacks += usize::from(c.control_fallback);
            if let Some(e) = c.lmi_min_eigenvalue {
                cert.solves += 1;
                cert.min_lmi_eigenvalue = cert.min_lmi_eigenvalue.min(e);
            }
            if let Some(x) = c.adversary_excess {
                cert.max_adversary_excess = Some(cert.max_adversary_excess.map_or(x, |m: f64| m.max(x)));
            }
        }
    }

    let samples = error_samples(all.iter().copied());
    let checkpoints = exp.config.checkpoints.iter().map(|&t| checkpoint(&samples, t)).collect();
    MetricsReport {
        name: exp.config.name.clone(),
        runs: runs.len(),
        successful_runs,
        failed,
        checkpoints,
        certificates: cert,
    }
}

/// Run all Monte Carlo runs of `exp` and compute the metrics.
pub fn run_experiment(exp: &Experiment) -> ExperimentResult {
    let runs: Vec<RunResult> = (0..exp.config.runs).into_par_iter().map(|run| run_once(exp, run)).collect();
    let metrics = summarize(exp, &runs);
    ExperimentResult { experiment: exp.clone(), runs, metrics }
}
