//! Min-max receding-horizon control over an ellipsoidal state set.
//!
//! Over the horizon `t = k, …, k+Np−1` the cost
//! `J = Σ x(t)ᵀQ(t)x(t) + u(t)ᵀR(t)u(t)` (or its tracking form) is written as a
//! quadratic in the input sequence `U`, the estimation error `η = x(k) − x̂`
//! and the noise sequence `W`. The worst case over `η ∈ E(0, P)` and
//! `w(t) ∈ E(0, Pw(t))` is bounded with the S-procedure, which gives a single
//! LMI in `(z, ρ, τ1, τ2)` with `U = ℬ^{-1/2} z − ℬ⁻¹ b̂`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::ellipsoid::Ellipsoid;
use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};
use crate::sdp::{self, Certificate, Sign, SdpProblem, SolverStatus, SolverTolerances, VarId};
use crate::system::{MatrixFn, UncertainSystem};

/// Vector generator depending on the step.
pub type VectorFn = Arc<dyn Fn(usize) -> DVector<f64> + Send + Sync>;

/// Floor added to singular process-noise blocks before they are inverted.
pub const NOISE_BLOCK_FLOOR: f64 = 1e-12;

#[derive(Clone)]
pub enum CostMode {
    /// Penalize `x(t)ᵀ Q(t) x(t)`.
    Regulation { q: MatrixFn },
    /// Penalize `(T x(t) − r(t))ᵀ Q_T(t) (T x(t) − r(t))`.
    Tracking { output_map: DMatrix<f64>, q: MatrixFn, reference: VectorFn },
}

#[derive(Clone)]
pub struct CostSpec {
    pub horizon: usize,
    pub r: MatrixFn,
    pub mode: CostMode,
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            CostMode::Regulation { .. } => "regulation",
            CostMode::Tracking { .. } => "tracking",
        };
        f.debug_struct("CostSpec")
            .field("horizon", &self.horizon)
            .field("mode", &mode)
            .finish_non_exhaustive()
    }
}

impl CostSpec {
    pub fn regulation(horizon: usize, q: MatrixFn, r: MatrixFn) -> Self {
        Self { horizon, r, mode: CostMode::Regulation { q } }
    }

    pub fn tracking(
        horizon: usize,
        output_map: DMatrix<f64>,
        q: MatrixFn,
        reference: VectorFn,
        r: MatrixFn,
    ) -> Self {
        Self { horizon, r, mode: CostMode::Tracking { output_map, q, reference } }
    }

    /// State weight `Q(t)`, or `Tᵀ Q_T(t) T` when tracking.
    pub fn state_weight(&self, t: usize, n: usize) -> Result<DMatrix<f64>> {
        let q = match &self.mode {
            CostMode::Regulation { q } => {
                let q = q(t);
                if q.shape() != (n, n) {
                    return Err(Error::CostSpec(format!("Q({t}) must be {n}x{n}")));
                }
                q
            }
            CostMode::Tracking { output_map, q, .. } => {
                let p = output_map.nrows();
                if output_map.ncols() != n {
                    return Err(Error::CostSpec(format!("tracking map must have {n} columns")));
                }
                let qt = q(t);
                if qt.shape() != (p, p) {
                    return Err(Error::CostSpec(format!("Q_T({t}) must be {p}x{p}")));
                }
                check_psd(&format!("Q_T({t})"), &qt)?;
                output_map.transpose() * qt * output_map
            }
        };
        check_psd(&format!("Q({t})"), &q)?;
        Ok(symmetrize(&q))
    }

    pub fn input_weight(&self, t: usize, r: usize) -> Result<DMatrix<f64>> {
        let w = (self.r)(t);
        if w.shape() != (r, r) {
            return Err(Error::CostSpec(format!("R({t}) must be {r}x{r}")));
        }
        if linalg::asymmetry(&w) > 1e-10 || linalg::min_eigenvalue(&w) <= 0.0 {
            return Err(Error::CostSpec(format!("R({t}) must be symmetric positive definite")));
        }
        Ok(symmetrize(&w))
    }
}

fn check_psd(what: &str, m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    if linalg::asymmetry(m) > 1e-10 * scale || linalg::min_eigenvalue(m) < -1e-10 * scale {
        return Err(Error::CostSpec(format!("{what} must be symmetric positive semidefinite")));
    }
    Ok(())
}

/// The horizon cost as a quadratic form
/// `J = UᵀℬU + 2b̂ᵀU + ξᵀĈξ + 2ĉᵀξ + 2UᵀD̂ξ + offset` with `ξ = [η; W]`.
#[derive(Debug, Clone)]
pub struct PredictionMatrices {
    pub step: usize,
    pub horizon: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    /// `x(t) = Ã_t x(k) + B̃_t U + C̃_t W` for `t = k, …, k+Np−1`.
    pub propagation: Vec<DMatrix<f64>>,
    pub input_response: Vec<DMatrix<f64>>,
    pub noise_response: Vec<DMatrix<f64>>,
    /// `𝒜 = Σ ÃᵀQÃ`.
    pub state_cost: DMatrix<f64>,
    /// `ℬ = Σ B̃ᵀQB̃ + diag(R)`.
    pub input_cost: DMatrix<f64>,
    /// `𝒞 = Σ C̃ᵀQC̃`.
    pub noise_cost: DMatrix<f64>,
    /// `𝒟 = Σ B̃ᵀQC̃`.
    pub input_noise_cost: DMatrix<f64>,
    /// `S_B = Σ B̃ᵀQÃ`.
    pub input_state_cost: DMatrix<f64>,
    /// `S_C = Σ C̃ᵀQÃ`.
    pub noise_state_cost: DMatrix<f64>,
    pub input_linear: DVector<f64>,
    pub disturbance_cost: DMatrix<f64>,
    pub disturbance_linear: DVector<f64>,
    pub input_disturbance_cost: DMatrix<f64>,
    pub offset: f64,
}

impl PredictionMatrices {
    pub fn input_len(&self) -> usize {
        self.horizon * self.input_dim
    }

    pub fn disturbance_len(&self) -> usize {
        (self.horizon + 1) * self.state_dim
    }

    /// Evaluate the quadratic form at `(U, η, W)`.
    pub fn cost(&self, u: &DVector<f64>, eta: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let xi = stack(eta, w);
        linalg::bilinear(u, &self.input_cost, u)
            + 2.0 * self.input_linear.dot(u)
            + linalg::bilinear(&xi, &self.disturbance_cost, &xi)
            + 2.0 * self.disturbance_linear.dot(&xi)
            + 2.0 * linalg::bilinear(u, &self.input_disturbance_cost, &xi)
            + self.offset
    }
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

/// Build the horizon matrices for candidate `theta` at step `k` around the
/// state-set center `center = x̂(k|k)`.
pub fn build_prediction(
    sys: &UncertainSystem,
    theta: &[f64],
    cost: &CostSpec,
    k: usize,
    center: &DVector<f64>,
) -> Result<PredictionMatrices> {
    let np = cost.horizon;
    if np == 0 {
        return Err(Error::CostSpec("horizon must be at least 1".into()));
    }
    let n = sys.state_dim();
    let r = sys.input_dim();
    if center.len() != n {
        return Err(Error::Dimension(format!("center has length {}, expected {n}", center.len())));
    }
    let a: Vec<DMatrix<f64>> = (0..np).map(|l| sys.a(k + l, theta)).collect::<Result<_>>()?;
    let b: Vec<DMatrix<f64>> = (0..np).map(|l| sys.b(k + l, theta)).collect::<Result<_>>()?;

    // transition[j][l] = A(k+j−1)…A(k+l) maps x(k+l) to x(k+j), identity when l = j.
    let mut transition = vec![vec![DMatrix::identity(n, n); np]; np];
    for j in 0..np {
        for l in (0..j).rev() {
            transition[j][l] = &transition[j][l + 1] * &a[l];
        }
    }

    let mut propagation = Vec::with_capacity(np);
    let mut input_response = Vec::with_capacity(np);
    let mut noise_response = Vec::with_capacity(np);
    for j in 0..np {
        let mut bt = DMatrix::zeros(n, np * r);
        let mut ct = DMatrix::zeros(n, np * n);
        for l in 0..j {
            let to = &transition[j][l + 1];
            bt.view_mut((0, l * r), (n, r)).copy_from(&(to * &b[l]));
            ct.view_mut((0, l * n), (n, n)).copy_from(to);
        }
        propagation.push(transition[j][0].clone());
        input_response.push(bt);
        noise_response.push(ct);
    }

    let mut state_cost = DMatrix::zeros(n, n);
    let mut input_cost = DMatrix::zeros(np * r, np * r);
    let mut noise_cost = DMatrix::zeros(np * n, np * n);
    let mut input_noise_cost = DMatrix::zeros(np * r, np * n);
    let mut input_state_cost = DMatrix::zeros(np * r, n);
    let mut noise_state_cost = DMatrix::zeros(np * n, n);
    let mut weights = Vec::with_capacity(np);
    for j in 0..np {
        let q = cost.state_weight(k + j, n)?;
        let (at, bt, ct) = (&propagation[j], &input_response[j], &noise_response[j]);
        state_cost += at.transpose() * &q * at;
        input_cost += bt.transpose() * &q * bt;
        noise_cost += ct.transpose() * &q * ct;
        input_noise_cost += bt.transpose() * &q * ct;
        input_state_cost += bt.transpose() * &q * at;
        noise_state_cost += ct.transpose() * &q * at;
        let rw = cost.input_weight(k + j, r)?;
        let mut block = input_cost.view_mut((j * r, j * r), (r, r));
        block += rw;
        weights.push(q);
    }
    let state_cost = symmetrize(&state_cost);
    let input_cost = symmetrize(&input_cost);
    let noise_cost = symmetrize(&noise_cost);
    if linalg::min_eigenvalue(&input_cost) <= 0.0 {
        return Err(Error::CostSpec("input cost matrix is not positive definite".into()));
    }

    let (input_linear, eta_linear, noise_linear, offset) = match &cost.mode {
        CostMode::Regulation { .. } => (
            &input_state_cost * center,
            &state_cost * center,
            &noise_state_cost * center,
            linalg::bilinear(center, &state_cost, center),
        ),
        CostMode::Tracking { output_map, q, reference } => {
            let p = output_map.nrows();
            let mut bl = DVector::zeros(np * r);
            let mut el = DVector::zeros(n);
            let mut wl = DVector::zeros(np * n);
            let mut off = 0.0;
            for j in 0..np {
                let t = k + j;
                let rt = reference(t);
                if rt.len() != p {
                    return Err(Error::CostSpec(format!("reference r({t}) must have length {p}")));
                }
                let qt = q(t);
                let residual = output_map * &propagation[j] * center - rt;
                let weighted = &qt * &residual;
                bl += (output_map * &input_response[j]).transpose() * &weighted;
                el += (output_map * &propagation[j]).transpose() * &weighted;
                wl += (output_map * &noise_response[j]).transpose() * &weighted;
                off += residual.dot(&weighted);
            }
            (bl, el, wl, off)
        }
    };

    let dn = (np + 1) * n;
    let mut disturbance_cost = DMatrix::zeros(dn, dn);
    disturbance_cost.view_mut((0, 0), (n, n)).copy_from(&state_cost);
    disturbance_cost.view_mut((n, 0), (np * n, n)).copy_from(&noise_state_cost);
    disturbance_cost.view_mut((0, n), (n, np * n)).copy_from(&noise_state_cost.transpose());
    disturbance_cost.view_mut((n, n), (np * n, np * n)).copy_from(&noise_cost);
    let disturbance_linear = stack(&eta_linear, &noise_linear);
    let mut input_disturbance_cost = DMatrix::zeros(np * r, dn);
    input_disturbance_cost.view_mut((0, 0), (np * r, n)).copy_from(&input_state_cost);
    input_disturbance_cost.view_mut((0, n), (np * r, np * n)).copy_from(&input_noise_cost);

    Ok(PredictionMatrices {
        step: k,
        horizon: np,
        state_dim: n,
        input_dim: r,
        propagation,
        input_response,
        noise_response,
        state_cost,
        input_cost,
        noise_cost,
        input_noise_cost,
        input_state_cost,
        noise_state_cost,
        input_linear,
        disturbance_cost: symmetrize(&disturbance_cost),
        disturbance_linear,
        input_disturbance_cost,
        offset,
    })
}

/// The LMI program for one candidate together with what is needed to map its
/// solution back to inputs.
///
/// The disturbance block is assembled in the coordinates `ξ = S ζ` with
/// `S = blockdiag(P^{1/2}, Pw(k)^{1/2}, …)`. This congruence leaves the
/// feasible set in `(z, ρ, τ1, τ2)` unchanged and turns the S-procedure
/// multipliers' matrices into identities, which keeps the LMI well scaled
/// when the state set is small or a noise shape is nearly singular.
#[derive(Debug, Clone)]
pub struct AssembledSdp {
    pub problem: SdpProblem,
    pub z: Vec<VarId>,
    pub rho: VarId,
    pub tau_state: VarId,
    pub tau_noise: VarId,
    /// `ℬ^{-1/2}`.
    pub input_cost_inv_sqrt: DMatrix<f64>,
    /// `ℬ⁻¹ b̂`.
    pub input_shift: DVector<f64>,
    /// `offset − b̂ᵀℬ⁻¹b̂`: the part of the cost not bounded by `ρ`.
    pub cost_constant: f64,
    pub state_shape: DMatrix<f64>,
    pub noise_shapes: Vec<DMatrix<f64>>,
}

pub fn assemble_sdp(
    pm: &PredictionMatrices,
    state_set: &Ellipsoid,
    noise_shapes: &[DMatrix<f64>],
) -> Result<AssembledSdp> {
    let n = pm.state_dim;
    let np = pm.horizon;
    let nu = pm.input_len();
    let nd = pm.disturbance_len();
    if state_set.dim() != n {
        return Err(Error::Assembly(format!("state set has dimension {}, expected {n}", state_set.dim())));
    }
    if noise_shapes.len() != np || noise_shapes.iter().any(|p| p.shape() != (n, n)) {
        return Err(Error::Assembly(format!("expected {np} process-noise blocks of size {n}x{n}")));
    }
    let state_shape = symmetrize(state_set.shape());
    let state_root = linalg::sym_sqrt(&state_shape);
    if linalg::sym_inv_sqrt(&state_shape).is_none() {
        return Err(Error::Assembly("state-set shape P(k|k) is not positive definite".into()));
    }
    let mut noise_regularized = Vec::with_capacity(np);
    let mut roots = vec![state_root];
    for (l, p) in noise_shapes.iter().enumerate() {
        let reg = linalg::regularize(&symmetrize(p), NOISE_BLOCK_FLOOR);
        if linalg::min_eigenvalue(&reg) <= 0.0 {
            return Err(Error::Assembly(format!("process-noise block Pw({}) is not usable", pm.step + l)));
        }
        roots.push(linalg::sym_sqrt(&reg));
        noise_regularized.push(reg);
    }
    let scaling = linalg::block_diag(&roots);

    let inv_sqrt = linalg::sym_inv_sqrt(&pm.input_cost)
        .ok_or_else(|| Error::Assembly("input cost matrix ℬ is not positive definite".into()))?;
    let inv = &inv_sqrt * &inv_sqrt;
    let input_shift = &inv * &pm.input_linear;
    let h = &pm.disturbance_linear - pm.input_disturbance_cost.transpose() * &input_shift;
    let f = &inv_sqrt * &pm.input_disturbance_cost;
    let f_scaled = &f * &scaling;
    let h_scaled = &scaling * &h;
    let g_scaled = symmetrize(
        &(f_scaled.transpose() * &f_scaled - &scaling * &pm.disturbance_cost * &scaling),
    );

    let dim = nu + 1 + nd;
    let s = nu; // row of the scalar entry
    let d0 = nu + 1; // first row of the disturbance block
    let mut constant = DMatrix::zeros(dim, dim);
    constant.view_mut((0, 0), (nu, nu)).fill_with_identity();
    constant.view_mut((0, d0), (nu, nd)).copy_from(&f_scaled);
    constant.view_mut((d0, 0), (nd, nu)).copy_from(&f_scaled.transpose());
    constant.view_mut((s, d0), (1, nd)).copy_from(&(-h_scaled.transpose()));
    constant.view_mut((d0, s), (nd, 1)).copy_from(&(-&h_scaled));
    constant.view_mut((d0, d0), (nd, nd)).copy_from(&g_scaled);

    let mut problem = SdpProblem::new(constant)?;
    let mut z = Vec::with_capacity(nu);
    for i in 0..nu {
        let mut m = DMatrix::zeros(dim, dim);
        m[(i, s)] = 1.0;
        m[(s, i)] = 1.0;
        z.push(problem.add_variable(format!("z[{i}]"), Sign::Free, m)?);
    }
    let mut m = DMatrix::zeros(dim, dim);
    m[(s, s)] = 1.0;
    let rho = problem.add_variable("rho", Sign::Free, m)?;
    problem.set_objective(rho, 1.0)?;

    let mut m = DMatrix::zeros(dim, dim);
    m[(s, s)] = -1.0;
    m.view_mut((d0, d0), (n, n)).fill_with_identity();
    let tau_state = problem.add_variable("tau_state", Sign::NonNegative, m)?;

    let mut m = DMatrix::zeros(dim, dim);
    m[(s, s)] = -(np as f64);
    m.view_mut((d0 + n, d0 + n), (np * n, np * n)).fill_with_identity();
    let tau_noise = problem.add_variable("tau_noise", Sign::NonNegative, m)?;

    Ok(AssembledSdp {
        problem,
        z,
        rho,
        tau_state,
        tau_noise,
        cost_constant: pm.offset - pm.input_linear.dot(&input_shift),
        input_cost_inv_sqrt: inv_sqrt,
        input_shift,
        state_shape,
        noise_shapes: noise_regularized,
    })
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    /// Bound on the cost above [`AssembledSdp::cost_constant`].
    pub rho: f64,
    pub tau_state: f64,
    pub tau_noise: f64,
    pub z: DVector<f64>,
    /// Input sequence `U` over the horizon.
    pub inputs: DVector<f64>,
    /// First input `u(k)`.
    pub u0: DVector<f64>,
    pub status: SolverStatus,
    /// `ρ + offset − b̂ᵀℬ⁻¹b̂`: guaranteed bound on the horizon cost.
    pub worst_case_cost: f64,
    pub certificate: Certificate,
}

/// `U = ℬ^{-1/2} z − ℬ⁻¹ b̂`.
pub fn recover_inputs(sdp: &AssembledSdp, z: &DVector<f64>) -> DVector<f64> {
    &sdp.input_cost_inv_sqrt * z - &sdp.input_shift
}

pub fn solve_and_recover(sdp: &AssembledSdp, pm: &PredictionMatrices, tol: &SolverTolerances) -> Result<SdpSolution> {
    let result = sdp::solve(&sdp.problem, tol)?;
    if result.status != SolverStatus::Optimal {
        return Err(Error::ControlFailure(result.status));
    }
    let z = DVector::from_iterator(sdp.z.len(), sdp.z.iter().map(|v| result.value(*v)));
    let inputs = recover_inputs(sdp, &z);
    let u0 = inputs.rows(0, pm.input_dim).into_owned();
    let rho = result.value(sdp.rho);
    Ok(SdpSolution {
        rho,
        tau_state: result.value(sdp.tau_state),
        tau_noise: result.value(sdp.tau_noise),
        z,
        inputs,
        u0,
        status: result.status,
        worst_case_cost: rho + sdp.cost_constant,
        certificate: sdp::certificate(&sdp.problem, &result),
    })
}

/// Outcome of probing a solution with sampled disturbances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversaryReport {
    pub draws: usize,
    /// Largest sampled `J − cost_constant`.
    pub max_cost: f64,
    /// Largest `J − cost_constant − ρ − 1e-6·(1 + |ρ|)`; nonpositive when the bound holds.
    pub max_excess: f64,
}

impl AdversaryReport {
    pub fn holds(&self) -> bool {
        self.max_excess <= 0.0
    }
}

/// Evaluate the cost of `sol.inputs` against `draws` sampled `(η, W)`, half
/// uniform in the solid sets and half on their boundaries.
pub fn sample_adversary<R: Rng + ?Sized>(
    sdp: &AssembledSdp,
    pm: &PredictionMatrices,
    sol: &SdpSolution,
    draws: usize,
    rng: &mut R,
) -> AdversaryReport {
    let n = pm.state_dim;
    let origin = DVector::zeros(n);
    let state = Ellipsoid::from_parts(origin.clone(), sdp.state_shape.clone());
    let noises: Vec<Ellipsoid> =
        sdp.noise_shapes.iter().map(|p| Ellipsoid::from_parts(origin.clone(), p.clone())).collect();
    let tol = 1e-6 * (1.0 + sol.rho.abs());
    // Half of the draws are interior points, half lie on the boundaries.
    let on_boundary = draws / 2;
    let inside = draws - on_boundary;
    let mut sample = |e: &Ellipsoid| {
        let mut pts = e.sample_uniform(inside, rng);
        pts.extend(e.sample_boundary(on_boundary, rng));
        pts
    };
    let etas = sample(&state);
    let ws: Vec<Vec<DVector<f64>>> = noises.iter().map(&mut sample).collect();
    let mut max_cost = f64::NEG_INFINITY;
    for (i, eta) in etas.iter().enumerate() {
        let mut w = DVector::zeros(pm.horizon * n);
        for (l, draws) in ws.iter().enumerate() {
            w.rows_mut(l * n, n).copy_from(&draws[i]);
        }
        let cost = pm.cost(&sol.inputs, eta, &w) - sdp.cost_constant;
        max_cost = max_cost.max(cost);
    }
    AdversaryReport { draws, max_cost, max_excess: max_cost - sol.rho - tol }
}

/// Build, assemble and solve the control problem for one candidate.
pub fn robust_control(
    sys: &UncertainSystem,
    theta: &[f64],
    cost: &CostSpec,
    k: usize,
    state_set: &Ellipsoid,
    tol: &SolverTolerances,
) -> Result<(PredictionMatrices, AssembledSdp, SdpSolution)> {
    let pm = build_prediction(sys, theta, cost, k, state_set.center())?;
    let noise: Vec<DMatrix<f64>> =
        (0..cost.horizon).map(|l| sys.process_noise(k + l)).collect::<Result<_>>()?;
    let sdp = assemble_sdp(&pm, state_set, &noise)?;
    let sol = solve_and_recover(&sdp, &pm, tol)?;
    Ok((pm, sdp, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{constant, param_fn};
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn scalar_system() -> UncertainSystem {
        UncertainSystem::new(
            1,
            1,
            1,
            param_fn(|_, _| DMatrix::from_element(1, 1, 1.2)),
            param_fn(|_, _| DMatrix::from_element(1, 1, 1.0)),
            param_fn(|_, _| DMatrix::from_element(1, 1, 1.0)),
            constant(DMatrix::from_element(1, 1, 0.01)),
            constant(DMatrix::from_element(1, 1, 0.01)),
        )
        .unwrap()
    }

    #[test]
    fn single_step_horizon_collapses() {
        let sys = scalar_system();
        let cost = CostSpec::regulation(
            1,
            constant(DMatrix::from_element(1, 1, 2.0)),
            constant(DMatrix::from_element(1, 1, 3.0)),
        );
        let pm = build_prediction(&sys, &[], &cost, 0, &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(pm.input_cost, DMatrix::from_element(1, 1, 3.0));
        assert!(pm.input_disturbance_cost.iter().all(|v| *v == 0.0));
        assert_eq!(pm.disturbance_cost[(0, 0)], 2.0);
        assert_eq!(pm.disturbance_cost[(1, 1)], 0.0);
        assert_eq!(pm.offset, 2.0);
    }

    #[test]
    fn shifted_z_gives_zero_inputs() {
        let sys = scalar_system();
        let cost = CostSpec::regulation(
            2,
            constant(DMatrix::identity(1, 1)),
            constant(DMatrix::identity(1, 1)),
        );
        let set = Ellipsoid::new(DVector::from_element(1, 2.0), DMatrix::identity(1, 1)).unwrap();
        let pm = build_prediction(&sys, &[], &cost, 0, set.center()).unwrap();
        let sdp = assemble_sdp(&pm, &set, &[DMatrix::identity(1, 1) * 0.01, DMatrix::identity(1, 1) * 0.01]).unwrap();
        let root = linalg::sym_sqrt(&pm.input_cost);
        let z = root * &sdp.input_shift;
        assert!(recover_inputs(&sdp, &z).amax() < 1e-12);
    }

    #[test]
    fn scalar_problem_is_certified() {
        let sys = scalar_system();
        let cost = CostSpec::regulation(
            2,
            constant(DMatrix::identity(1, 1)),
            constant(DMatrix::identity(1, 1)),
        );
        let set = Ellipsoid::new(DVector::from_element(1, 2.0), DMatrix::identity(1, 1) * 0.5).unwrap();
        let (pm, sdp, sol) =
            robust_control(&sys, &[], &cost, 0, &set, &SolverTolerances::default()).unwrap();
        assert_eq!(sdp.problem.dim(), 2 + 1 + 3);
        assert!(sol.certificate.min_eigenvalue >= -1e-7);
        assert!(sol.tau_state >= 0.0 && sol.tau_noise >= 0.0);
        // Stabilizing direction: the first input pushes the state toward 0.
        assert!(sol.u0[0] < 0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let report = sample_adversary(&sdp, &pm, &sol, 1000, &mut rng);
        assert!(report.holds(), "{report:?}");
        assert_relative_eq!(sol.worst_case_cost, sol.rho + sdp.cost_constant);
    }
}
