//! Experiment configuration: a TOML file describing the plant, the candidate
//! parameters, the cost and the Monte Carlo settings.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use arcset::mpc::{CostMode, CostSpec, VectorFn};
use arcset::sdp::SolverTolerances;
use arcset::system::{matrix_fn, param_fn, UncertainSystem};
use arcset::Ellipsoid;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::expr::Expr;

pub const EXAMPLE1: &str = include_str!("../configs/example1.toml");
pub const EXAMPLE2: &str = include_str!("../configs/example2.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Controller {
    /// Full candidate bank with set learning and posterior weights.
    Arc,
    /// Single candidate at the true parameter with set learning.
    Orc,
    /// Single candidate at the true parameter, sets propagated without measurements.
    Rc,
}

impl Controller {
    pub const ALL: [Controller; 3] = [Controller::Arc, Controller::Orc, Controller::Rc];

    pub fn name(self) -> &'static str {
        match self {
            Controller::Arc => "arc",
            Controller::Orc => "orc",
            Controller::Rc => "rc",
        }
    }
}

impl fmt::Display for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Controller {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "arc" => Ok(Controller::Arc),
            "orc" => Ok(Controller::Orc),
            "rc" => Ok(Controller::Rc),
            other => Err(SimError::Config(format!("unknown controller {other:?} (expected arc, orc or rc)"))),
        }
    }
}

/// How plant noise and the initial state are drawn inside their ellipsoids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDistribution {
    /// Uniform over the solid ellipsoid.
    #[default]
    Uniform,
    /// Uniform over the ellipsoid's surface.
    Boundary,
}

/// A matrix entry: either a literal or an expression in `k` and `thetaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Value(f64),
    Expr(String),
}

pub type MatrixSpec = Vec<Vec<Entry>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub state_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub a: MatrixSpec,
    pub b: MatrixSpec,
    pub c: MatrixSpec,
    pub process_noise: MatrixSpec,
    pub output_noise: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub center: Vec<f64>,
    pub shape: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Regulation,
    Tracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub kind: CostKind,
    /// `Q(k)` for regulation, `Q_T(k)` for tracking.
    pub state_weight: MatrixSpec,
    pub input_weight: MatrixSpec,
    /// Tracked output map `T` (tracking only).
    #[serde(default)]
    pub output_map: Option<Vec<Vec<f64>>>,
    /// One expression in `k` per tracked output (tracking only).
    #[serde(default)]
    pub reference: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub gap: f64,
    pub stalled_gap: f64,
    pub max_newton_steps: usize,
    pub barrier_growth: f64,
    pub unbounded_norm: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let t = SolverTolerances::default();
        Self {
            gap: t.gap,
            stalled_gap: t.stalled_gap,
            max_newton_steps: t.max_newton_steps,
            barrier_growth: t.barrier_growth,
            unbounded_norm: t.unbounded_norm,
        }
    }
}

impl From<SolverConfig> for SolverTolerances {
    fn from(c: SolverConfig) -> Self {
        SolverTolerances {
            gap: c.gap,
            stalled_gap: c.stalled_gap,
            max_newton_steps: c.max_newton_steps,
            barrier_growth: c.barrier_growth,
            unbounded_norm: c.unbounded_norm,
        }
    }
}

fn default_runs() -> usize {
    100
}

fn default_controllers() -> Vec<Controller> {
    Controller::ALL.to_vec()
}

fn default_snapshot_runs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Number of control steps `k = 0, …, steps − 1`.
    pub steps: usize,
    /// Prediction horizon of the robust controller.
    pub horizon: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_controllers")]
    pub controllers: Vec<Controller>,
    /// Horizons `T` at which cumulative metrics are reported.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    pub candidates: Vec<Vec<f64>>,
    /// Index of the plant's parameter in `candidates`.
    #[serde(default)]
    pub true_candidate: Option<usize>,
    /// Plant parameter given explicitly; must be flagged as a robustness
    /// experiment when it is not one of the candidates.
    #[serde(default)]
    pub true_theta: Option<Vec<f64>>,
    #[serde(default)]
    pub robustness: bool,
    #[serde(default)]
    pub noise: NoiseDistribution,
    /// Sampled disturbances checked against every solved bound; 0 disables it.
    #[serde(default)]
    pub adversary_draws: usize,
    /// Runs whose ellipsoids are written to the snapshot file.
    #[serde(default = "default_snapshot_runs")]
    pub snapshot_runs: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub system: SystemConfig,
    pub initial: InitialConfig,
    pub cost: CostConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))
    }

    pub fn example1() -> Self {
        Self::from_toml(EXAMPLE1).expect("bundled preset parses")
    }

    pub fn example2() -> Self {
        Self::from_toml(EXAMPLE2).expect("bundled preset parses")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Matrix of parsed expressions.
#[derive(Debug, Clone)]
pub struct MatrixExpr {
    rows: usize,
    cols: usize,
    entries: Vec<Expr>,
}

impl MatrixExpr {
    pub fn parse(name: &str, spec: &MatrixSpec, rows: usize, cols: usize) -> Result<Self> {
        if spec.len() != rows || spec.iter().any(|r| r.len() != cols) {
            let got_cols = spec.first().map_or(0, |r| r.len());
            return Err(SimError::Config(format!(
                "{name} must be {rows}x{cols}, got {}x{got_cols}",
                spec.len()
            )));
        }
        let mut entries = Vec::with_capacity(rows * cols);
        for row in spec {
            for entry in row {
                let expr = match entry {
                    Entry::Value(v) => Expr::parse(&format!("{v:?}")),
                    Entry::Expr(s) => Expr::parse(s),
                }
                .map_err(|e| SimError::Config(format!("{name}: {e}")))?;
                entries.push(expr);
            }
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn params_needed(&self) -> usize {
        self.entries.iter().map(Expr::params_needed).max().unwrap_or(0)
    }

    /// Evaluate at `k`; callers guarantee `theta` is long enough.
    pub fn eval(&self, k: usize, theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            self.rows,
            self.cols,
            self.entries.iter().map(|e| e.eval(k, theta).expect("parameter length checked at load")),
        )
    }
}

/// A validated configuration with its generators built.
#[derive(Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub system: UncertainSystem,
    pub cost: CostSpec,
    pub prior: Ellipsoid,
    pub true_theta: Vec<f64>,
    pub true_index: Option<usize>,
    pub tolerances: SolverTolerances,
    /// Tracked output map and reference, when tracking.
    pub tracking: Option<(DMatrix<f64>, VectorFn)>,
}

impl fmt::Debug for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Experiment")
            .field("name", &self.config.name)
            .field("true_theta", &self.true_theta)
            .finish_non_exhaustive()
    }
}

fn constant_in_theta(name: &str, m: &MatrixExpr) -> Result<()> {
    if m.params_needed() > 0 {
        return Err(SimError::Config(format!("{name} may depend on k only, not on parameters")));
    }
    Ok(())
}

fn check_finite_at_start(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Config(format!("{name} is not finite at k = 0")));
    }
    Ok(())
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let cfg = &config;
        if cfg.steps == 0 {
            return Err(SimError::Config("steps must be at least 1".into()));
        }
        if cfg.horizon == 0 {
            return Err(SimError::Config("horizon must be at least 1".into()));
        }
        if cfg.runs == 0 {
            return Err(SimError::Config("runs must be at least 1".into()));
        }
        if cfg.controllers.is_empty() {
            return Err(SimError::Config("no controllers selected".into()));
        }
        if cfg.candidates.is_empty() {
            return Err(SimError::Config("candidate list is empty".into()));
        }
        if let Some(&t) = cfg.checkpoints.iter().find(|&&t| t == 0 || t >= cfg.steps) {
            return Err(SimError::Config(format!("checkpoint {t} outside 1..{}", cfg.steps)));
        }
        let dim = cfg.candidates[0].len();
        if cfg.candidates.iter().any(|c| c.len() != dim) {
            return Err(SimError::Config("candidates have different lengths".into()));
        }

        let (true_theta, true_index) = match (&cfg.true_theta, cfg.true_candidate) {
            (Some(theta), index) => {
                let found = cfg.candidates.iter().position(|c| c == theta);
                if let (Some(i), Some(found)) = (index, found) {
                    if i != found {
                        return Err(SimError::Config("true_candidate does not match true_theta".into()));
                    }
                }
                if found.is_none() && !cfg.robustness {
                    return Err(SimError::Config(
                        "true parameter is not a candidate; set robustness = true to allow this".into(),
                    ));
                }
                (theta.clone(), found)
            }
            (None, Some(i)) => {
                let theta = cfg
                    .candidates
                    .get(i)
                    .ok_or_else(|| SimError::Config(format!("true_candidate {i} out of range")))?;
                (theta.clone(), Some(i))
            }
            (None, None) => return Err(SimError::Config("set true_candidate or true_theta".into())),
        };
        if true_theta.len() != dim {
            return Err(SimError::Config("true parameter has the wrong length".into()));
        }

        let s = &cfg.system;
        let (n, r, m) = (s.state_dim, s.input_dim, s.output_dim);
        let a = Arc::new(MatrixExpr::parse("system.a", &s.a, n, n)?);
        let b = Arc::new(MatrixExpr::parse("system.b", &s.b, n, r)?);
        let c = Arc::new(MatrixExpr::parse("system.c", &s.c, m, n)?);
        let pw = Arc::new(MatrixExpr::parse("system.process_noise", &s.process_noise, n, n)?);
        let pv = Arc::new(MatrixExpr::parse("system.output_noise", &s.output_noise, m, m)?);
        for (name, mx) in [("system.a", &a), ("system.b", &b), ("system.c", &c)] {
            if mx.params_needed() > dim {
                return Err(SimError::Config(format!(
                    "{name} uses theta{} but candidates have {dim} components",
                    mx.params_needed()
                )));
            }
            for theta in cfg.candidates.iter().chain(std::iter::once(&true_theta)) {
                check_finite_at_start(name, &mx.eval(0, theta))?;
            }
        }
        constant_in_theta("system.process_noise", &pw)?;
        constant_in_theta("system.output_noise", &pv)?;

        let system = UncertainSystem::new(
            n,
            r,
            m,
            param_fn({
                let a = a.clone();
                move |k, th| a.eval(k, th)
            }),
            param_fn({
                let b = b.clone();
                move |k, th| b.eval(k, th)
            }),
            param_fn({
                let c = c.clone();
                move |k, th| c.eval(k, th)
            }),
            matrix_fn({
                let pw = pw.clone();
                move |k| pw.eval(k, &[])
            }),
            matrix_fn({
                let pv = pv.clone();
                move |k| pv.eval(k, &[])
            }),
        )?;
        system.process_noise(0)?;
        system.output_noise(1)?;

        let cc = &cfg.cost;
        let input_weight = Arc::new(MatrixExpr::parse("cost.input_weight", &cc.input_weight, r, r)?);
        constant_in_theta("cost.input_weight", &input_weight)?;
        let r_fn = matrix_fn({
            let w = input_weight.clone();
            move |k| w.eval(k, &[])
        });
        let (cost, tracking) = match cc.kind {
            CostKind::Regulation => {
                let q = Arc::new(MatrixExpr::parse("cost.state_weight", &cc.state_weight, n, n)?);
                constant_in_theta("cost.state_weight", &q)?;
                let q_fn = matrix_fn(move |k| q.eval(k, &[]));
                (CostSpec::regulation(cfg.horizon, q_fn, r_fn), None)
            }
            CostKind::Tracking => {
                let rows = cc
                    .output_map
                    .as_ref()
                    .ok_or_else(|| SimError::Config("tracking cost needs output_map".into()))?;
                let p = rows.len();
                if p == 0 || rows.iter().any(|row| row.len() != n) {
                    return Err(SimError::Config(format!("output_map must have {n} columns")));
                }
                let map = DMatrix::from_row_iterator(p, n, rows.iter().flatten().copied());
                let q = Arc::new(MatrixExpr::parse("cost.state_weight", &cc.state_weight, p, p)?);
                constant_in_theta("cost.state_weight", &q)?;
                let refs = cc
                    .reference
                    .as_ref()
                    .ok_or_else(|| SimError::Config("tracking cost needs reference".into()))?;
                if refs.len() != p {
                    return Err(SimError::Config(format!("reference needs {p} expression(s)")));
                }
                let refs: Vec<Expr> = refs
                    .iter()
                    .map(|s| Expr::parse(s).map_err(|e| SimError::Config(format!("cost.reference: {e}"))))
                    .collect::<Result<_>>()?;
                if refs.iter().any(|e| e.params_needed() > 0) {
                    return Err(SimError::Config("cost.reference may depend on k only".into()));
                }
                let reference: VectorFn = Arc::new(move |k| {
                    DVector::from_iterator(refs.len(), refs.iter().map(|e| e.eval(k, &[]).expect("checked")))
                });
                let q_fn = matrix_fn(move |k| q.eval(k, &[]));
                let cost = CostSpec::tracking(cfg.horizon, map.clone(), q_fn, reference.clone(), r_fn);
                (cost, Some((map, reference)))
            }
        };
        cost.state_weight(0, n)?;
        cost.input_weight(0, r)?;
        if let CostMode::Tracking { .. } = cost.mode {
            debug_assert!(tracking.is_some());
        }

        let ic = &cfg.initial;
        if ic.center.len() != n || ic.shape.len() != n || ic.shape.iter().any(|row| row.len() != n) {
            return Err(SimError::Config(format!("initial set must be {n}-dimensional")));
        }
        let prior = Ellipsoid::new(
            DVector::from_vec(ic.center.clone()),
            DMatrix::from_row_iterator(n, n, ic.shape.iter().flatten().copied()),
        )?;

        let tolerances = SolverTolerances::from(cfg.solver);
        Ok(Self { config, system, cost, prior, true_theta, true_index, tolerances, tracking })
    }

    /// Instantaneous control error: `‖x‖²` when regulating, `‖T x − r(k)‖²` when tracking.
    pub fn control_error(&self, k: usize, x: &DVector<f64>) -> f64 {
        match &self.tracking {
            None => x.norm_squared(),
            Some((map, reference)) => (map * x - reference(k)).norm_squared(),
        }
    }

    /// Tracked output `T x`, or the state itself when regulating.
    pub fn tracked_output(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.tracking {
            None => x.clone(),
            Some((map, _)) => map * x,
        }
    }
}
