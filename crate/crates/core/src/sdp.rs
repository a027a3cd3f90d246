//! Linear-matrix-inequality programs with a single PSD block:
//!
//! ```text
//! minimize    cᵀx
//! subject to  F0 + Σ xᵢ Fᵢ ⪰ 0,   xⱼ ≥ 0 for variables declared nonnegative
//! ```
//!
//! The solver is a primal log-barrier method with a phase-I search for a
//! strictly feasible start. Problems here have a handful of variables and an
//! LMI of dimension ≲ 20, so dense Newton steps are cheap. Solves are pure
//! functions of their inputs and can run concurrently.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{self, asymmetry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Free,
    NonNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone)]
struct Variable {
    name: String,
    sign: Sign,
    objective: f64,
    coefficient: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    constant: DMatrix<f64>,
    vars: Vec<Variable>,
}

impl SdpProblem {
    /// Problem with LMI constant term `constant` and no variables yet.
    pub fn new(constant: DMatrix<f64>) -> Result<Self> {
        if !constant.is_square() {
            return Err(Error::Input("LMI constant term must be square".into()));
        }
        check_symmetric("constant", &constant)?;
        Ok(Self { constant, vars: Vec::new() })
    }

    pub fn add_variable(
        &mut self,
        name: impl Into<String>,
        sign: Sign,
        coefficient: DMatrix<f64>,
    ) -> Result<VarId> {
        let name = name.into();
        if coefficient.shape() != self.constant.shape() {
            return Err(Error::Dimension(format!(
                "coefficient of {name} is {}x{}, LMI is {}x{}",
                coefficient.nrows(),
                coefficient.ncols(),
                self.dim(),
                self.dim()
            )));
        }
        check_symmetric(&name, &coefficient)?;
        self.vars.push(Variable { name, sign, objective: 0.0, coefficient });
        Ok(VarId(self.vars.len() - 1))
    }

    pub fn set_objective(&mut self, var: VarId, weight: f64) -> Result<()> {
        let v = self
            .vars
            .get_mut(var.0)
            .ok_or_else(|| Error::Input(format!("objective references undeclared variable {}", var.0)))?;
        v.objective = weight;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn name(&self, var: VarId) -> &str {
        &self.vars[var.0].name
    }

    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        self.vars.iter().zip(x.iter()).map(|(v, xi)| v.objective * xi).sum()
    }

    /// `F0 + Σ xᵢ Fᵢ`.
    pub fn lmi_at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut f = self.constant.clone();
        for (v, xi) in self.vars.iter().zip(x.iter()) {
            f += &v.coefficient * *xi;
        }
        f
    }

    /// Plain-text listing of every matrix in the problem.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "LMI dimension {} with {} variables", self.dim(), self.num_vars());
        let _ = writeln!(out, "minimize {}", {
            let terms: Vec<String> = self
                .vars
                .iter()
                .filter(|v| v.objective != 0.0)
                .map(|v| format!("{:+e}*{}", v.objective, v.name))
                .collect();
            if terms.is_empty() { "0".to_string() } else { terms.join(" ") }
        });
        let _ = writeln!(out, "F0 ={}", self.constant);
        for v in &self.vars {
            let sign = match v.sign {
                Sign::Free => "free",
                Sign::NonNegative => ">= 0",
            };
            let _ = writeln!(out, "F[{}] ({sign}) ={}", v.name, v.coefficient);
        }
        out
    }

    fn blocks(&self) -> Vec<Block> {
        let n = self.num_vars();
        let mut blocks = vec![Block {
            constant: self.constant.clone(),
            coefficients: self.vars.iter().map(|v| v.coefficient.clone()).collect(),
        }];
        for (j, v) in self.vars.iter().enumerate() {
            if v.sign == Sign::NonNegative {
                let coefficients = (0..n)
                    .map(|i| DMatrix::from_element(1, 1, if i == j { 1.0 } else { 0.0 }))
                    .collect();
                blocks.push(Block { constant: DMatrix::zeros(1, 1), coefficients });
            }
        }
        blocks
    }
}

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    if asymmetry(m) > 1e-12 * scale {
        return Err(Error::Input(format!("LMI matrix {name} is not symmetric")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("LMI matrix {name} has non-finite entries")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverTolerances {
    /// Stop once the barrier duality-gap bound is below `gap * (1 + |cᵀx|)`.
    pub gap: f64,
    /// Gap accepted when Newton stalls before reaching `gap`.
    pub stalled_gap: f64,
    pub max_newton_steps: usize,
    /// Barrier parameter growth per outer iteration.
    pub barrier_growth: f64,
    /// Variables beyond this norm are reported as unbounded.
    pub unbounded_norm: f64,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self {
            gap: 1e-8,
            stalled_gap: 1e-6,
            max_newton_steps: 2000,
            barrier_growth: 12.0,
            unbounded_norm: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub status: SolverStatus,
    pub x: DVector<f64>,
    pub objective: f64,
    /// Final duality-gap bound `m / t`.
    pub gap: f64,
    pub newton_steps: usize,
}

impl SolverResult {
    pub fn value(&self, var: VarId) -> f64 {
        self.x[var.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    /// Smallest eigenvalue of `F(x)` at the returned point.
    pub min_eigenvalue: f64,
    /// Largest violation `max(0, −xⱼ)` over nonnegative variables.
    pub sign_violation: f64,
}

pub fn certificate(problem: &SdpProblem, result: &SolverResult) -> Certificate {
    let min_eigenvalue = linalg::min_eigenvalue(&problem.lmi_at(&result.x));
    let sign_violation = problem
        .vars
        .iter()
        .zip(result.x.iter())
        .filter(|(v, _)| v.sign == Sign::NonNegative)
        .map(|(_, x)| (-x).max(0.0))
        .fold(0.0, f64::max);
    Certificate { min_eigenvalue, sign_violation }
}

#[derive(Debug, Clone)]
struct Block {
    constant: DMatrix<f64>,
    coefficients: Vec<DMatrix<f64>>,
}

impl Block {
    fn at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut f = self.constant.clone();
        for (c, xi) in self.coefficients.iter().zip(x.iter()) {
            if *xi != 0.0 {
                f += c * *xi;
            }
        }
        f
    }

    fn dim(&self) -> usize {
        self.constant.nrows()
    }
}

fn cholesky_all(blocks: &[Block], x: &DVector<f64>) -> Option<Vec<Cholesky<f64, Dyn>>> {
    blocks.iter().map(|b| b.at(x).cholesky()).collect()
}

fn barrier_value(t: f64, c: &DVector<f64>, chols: &[Cholesky<f64, Dyn>], x: &DVector<f64>) -> f64 {
    let logdet: f64 = chols
        .iter()
        .map(|ch| 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
        .sum();
    t * c.dot(x) - logdet
}

/// Gradient and Hessian of `t cᵀx − Σ log det Fb(x)`.
fn newton_system(
    t: f64,
    c: &DVector<f64>,
    blocks: &[Block],
    chols: &[Cholesky<f64, Dyn>],
) -> (DVector<f64>, DMatrix<f64>) {
    let n = c.len();
    let mut grad = c * t;
    let mut hess = DMatrix::zeros(n, n);
    for (b, ch) in blocks.iter().zip(chols) {
        let l = ch.l();
        // Ŝᵢ = L⁻¹ Fᵢ L⁻ᵀ, so tr(F⁻¹Fᵢ) = tr Ŝᵢ and tr(F⁻¹FᵢF⁻¹Fⱼ) = ⟨Ŝᵢ, Ŝⱼ⟩.
        let scaled: Vec<Option<DMatrix<f64>>> = b
            .coefficients
            .iter()
            .map(|fi| {
                if fi.iter().all(|v| *v == 0.0) {
                    return None;
                }
                let half = l.solve_lower_triangular(fi).expect("nonsingular factor");
                let s = l
                    .solve_lower_triangular(&half.transpose())
                    .expect("nonsingular factor");
                Some(s)
            })
            .collect();
        for i in 0..n {
            let Some(si) = &scaled[i] else { continue };
            grad[i] -= si.trace();
            for j in 0..=i {
                let Some(sj) = &scaled[j] else { continue };
                let h = si.dot(sj);
                hess[(i, j)] += h;
                if i != j {
                    hess[(j, i)] += h;
                }
            }
        }
    }
    (grad, hess)
}

fn newton_direction(grad: &DVector<f64>, hess: &DMatrix<f64>) -> Option<DVector<f64>> {
    let scale = hess.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut reg = 0.0;
    for _ in 0..8 {
        let h = hess + DMatrix::identity(hess.nrows(), hess.ncols()) * reg;
        if let Some(ch) = h.cholesky() {
            let d = -ch.solve(grad);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    None
}

enum Centering {
    Converged,
    Stopped,
    Stalled,
    Unbounded,
    Failed,
}

struct Barrier<'a> {
    blocks: &'a [Block],
    c: &'a DVector<f64>,
    tol: &'a SolverTolerances,
    steps: usize,
}

impl Barrier<'_> {
    /// Minimize the barrier function at parameter `t` starting from a strictly
    /// feasible `x`. `stop` is checked after every accepted step.
    fn center(&mut self, t: f64, x: &mut DVector<f64>, stop: &dyn Fn(&DVector<f64>) -> bool) -> Centering {
        let Some(mut chols) = cholesky_all(self.blocks, x) else {
            return Centering::Failed;
        };
        loop {
            if self.steps >= self.tol.max_newton_steps {
                return Centering::Stalled;
            }
            let (grad, hess) = newton_system(t, self.c, self.blocks, &chols);
            let Some(mut dir) = newton_direction(&grad, &hess) else {
                return Centering::Failed;
            };
            let decrement = -grad.dot(&dir);
            if !decrement.is_finite() {
                return Centering::Failed;
            }
            if decrement < 1e-10 {
                return Centering::Converged;
            }
            // Flat directions of the barrier give arbitrarily long Newton
            // steps; limit growth to a factor per step.
            let cap = 10.0 * (1.0 + x.norm());
            let len = dir.norm();
            if len > cap {
                dir *= cap / len;
            }
            let slope = -grad.dot(&dir);
            let f0 = barrier_value(t, self.c, &chols, x);
            let mut alpha = 1.0;
            let accepted = loop {
                let trial = &*x + &dir * alpha;
                if let Some(tc) = cholesky_all(self.blocks, &trial) {
                    let f1 = barrier_value(t, self.c, &tc, &trial);
                    if f1 <= f0 - 0.25 * alpha * slope {
                        break Some((trial, tc));
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    break None;
                }
            };
            self.steps += 1;
            let Some((trial, tc)) = accepted else {
                return Centering::Stalled;
            };
            *x = trial;
            chols = tc;
            if stop(x) {
                return Centering::Stopped;
            }
            if x.norm() > self.tol.unbounded_norm {
                return Centering::Unbounded;
            }
        }
    }
}

/// Solve `problem` to the requested tolerances.
pub fn solve(problem: &SdpProblem, tol: &SolverTolerances) -> Result<SolverResult> {
    if problem.dim() == 0 {
        return Err(Error::Input("LMI has dimension 0".into()));
    }
    let n = problem.num_vars();
    let blocks = problem.blocks();
    let mut steps = 0;

    let mut x = DVector::from_iterator(
        n,
        problem.vars.iter().map(|v| if v.sign == Sign::NonNegative { 1.0 } else { 0.0 }),
    );
    if cholesky_all(&blocks, &x).is_none() {
        match phase_one(&blocks, &x, tol, &mut steps) {
            PhaseOne::Feasible(start) => x = start,
            PhaseOne::Infeasible => {
                return Ok(finish(problem, SolverStatus::Infeasible, x, f64::INFINITY, steps))
            }
            PhaseOne::Failed => {
                return Ok(finish(problem, SolverStatus::NumericalFailure, x, f64::INFINITY, steps))
            }
        }
    }

    let c = DVector::from_iterator(n, problem.vars.iter().map(|v| v.objective));
    let m: f64 = blocks.iter().map(|b| b.dim() as f64).sum();
    let mut barrier = Barrier { blocks: &blocks, c: &c, tol, steps };
    let mut t = 1.0 / (1.0 + c.norm()).max(1e-12);
    let never = |_: &DVector<f64>| false;
    loop {
        let outcome = barrier.center(t, &mut x, &never);
        let gap = m / t;
        let target = tol.gap * (1.0 + problem.objective_value(&x).abs());
        let status = match outcome {
            Centering::Converged | Centering::Stopped if gap <= target => Some(SolverStatus::Optimal),
            Centering::Converged | Centering::Stopped => None,
            Centering::Stalled => Some(if gap <= tol.stalled_gap * (1.0 + problem.objective_value(&x).abs()) {
                SolverStatus::Optimal
            } else {
                SolverStatus::NumericalFailure
            }),
            Centering::Unbounded => Some(SolverStatus::Unbounded),
            Centering::Failed => Some(SolverStatus::NumericalFailure),
        };
        if let Some(status) = status {
            return Ok(finish(problem, status, x, gap, barrier.steps));
        }
        t *= tol.barrier_growth;
    }
}

fn finish(problem: &SdpProblem, status: SolverStatus, x: DVector<f64>, gap: f64, steps: usize) -> SolverResult {
    let objective = problem.objective_value(&x);
    SolverResult { status, x, objective, gap, newton_steps: steps }
}

enum PhaseOne {
    Feasible(DVector<f64>),
    Infeasible,
    Failed,
}

/// Minimize `s` subject to `Fb(x) + s I ≻ 0` for every block, stopping as soon
/// as `s < 0`. The search is confined to a box `|xᵢ| < R` so the centering
/// problem stays bounded; the box grows when no feasible point lies inside it.
fn phase_one(blocks: &[Block], x0: &DVector<f64>, tol: &SolverTolerances, steps: &mut usize) -> PhaseOne {
    let worst = blocks
        .iter()
        .map(|b| -linalg::min_eigenvalue(&b.at(x0)))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut radius = 10.0 * (1.0 + x0.amax() + worst.max(0.0));
    while radius < tol.unbounded_norm {
        match phase_one_in_box(blocks, x0, worst, radius, tol, steps) {
            PhaseOne::Infeasible => radius *= 1e3,
            outcome => return outcome,
        }
    }
    PhaseOne::Infeasible
}

fn phase_one_in_box(
    blocks: &[Block],
    x0: &DVector<f64>,
    worst: f64,
    radius: f64,
    tol: &SolverTolerances,
    steps: &mut usize,
) -> PhaseOne {
    let n = x0.len();
    let mut lifted: Vec<Block> = blocks
        .iter()
        .map(|b| {
            let mut coefficients = b.coefficients.clone();
            coefficients.push(DMatrix::identity(b.dim(), b.dim()));
            Block { constant: b.constant.clone(), coefficients }
        })
        .collect();
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut coefficients = vec![DMatrix::zeros(1, 1); n + 1];
            coefficients[i][(0, 0)] = sign;
            lifted.push(Block { constant: DMatrix::from_element(1, 1, radius), coefficients });
        }
    }
    let mut x = x0.clone().insert_row(n, worst.max(0.0) + 1.0);
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let m: f64 = lifted.iter().map(|b| b.dim() as f64).sum();
    let mut barrier = Barrier { blocks: &lifted, c: &c, tol, steps: *steps };
    let mut t = 1.0;
    let feasible = |x: &DVector<f64>| x[n] < 0.0;
    let outcome = loop {
        match barrier.center(t, &mut x, &feasible) {
            Centering::Stopped => break PhaseOne::Feasible(x.rows(0, n).into_owned()),
            Centering::Converged => {
                // The optimum of s is within m/t of the current value.
                if x[n] - m / t >= 0.0 || m / t < tol.gap * (1.0 + x[n].abs()) {
                    break PhaseOne::Infeasible;
                }
            }
            Centering::Unbounded | Centering::Stalled | Centering::Failed => break PhaseOne::Failed,
        }
        t *= tol.barrier_growth;
    };
    *steps = barrier.steps;
    if let PhaseOne::Feasible(ref xf) = outcome {
        if cholesky_all(blocks, xf).is_none() {
            return PhaseOne::Failed;
        }
    }
    outcome
}
