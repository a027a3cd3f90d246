//! Ellipsoidal sets `E(c, P) = {x : (x - c)ᵀ P⁻¹ (x - c) ≤ 1}` and the outer
//! approximations used by the set-membership filter.
//!
//! A zero shape matrix is a point set. Singular shapes are allowed anywhere a
//! set is only mapped, summed or sampled; operations that need `P⁻¹` check for
//! positive definiteness themselves.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::linalg::{self, asymmetry, symmetrize};

/// Symmetry tolerance on `‖P − Pᵀ‖_max`.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Lower bound on the smallest eigenvalue of a valid shape.
pub const PSD_TOL: f64 = 1e-10;
/// Default slack for membership tests.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Upper end of the bracket searched for the intersection scalar.
pub const Q_MAX: f64 = 1e6;
const Q_START: f64 = 1e-6;
const Q_ABS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: DVector<f64>,
    shape: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>) -> Result<Self> {
        let n = center.len();
        if shape.nrows() != n || shape.ncols() != n {
            return Err(Error::Dimension(format!(
                "center has length {n} but shape is {}x{}",
                shape.nrows(),
                shape.ncols()
            )));
        }
        if center.iter().chain(shape.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("ellipsoid has non-finite entries".into()));
        }
        let skew = asymmetry(&shape);
        if skew > SYMMETRY_TOL {
            return Err(Error::Input(format!("shape is not symmetric (skew {skew:e})")));
        }
        if n > 0 {
            let eig = linalg::sym_eigen(&shape);
            let lo = eig.eigenvalues.min();
            let scale = eig.eigenvalues.amax().max(1.0);
            if lo < -PSD_TOL * scale {
                return Err(Error::Input(format!(
                    "shape is not positive semidefinite (min eigenvalue {lo:e})"
                )));
            }
        }
        Ok(Self { center, shape })
    }

    /// The singleton `{c}`.
    pub fn point(center: DVector<f64>) -> Self {
        let n = center.len();
        Self { center, shape: DMatrix::zeros(n, n) }
    }

    /// Build from operations whose result is symmetric PSD up to rounding.
    pub(crate) fn from_parts(center: DVector<f64>, shape: DMatrix<f64>) -> Self {
        Self { center, shape: symmetrize(&shape) }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.center, self.shape)
    }

    pub fn trace(&self) -> f64 {
        self.shape.trace()
    }

    pub fn determinant(&self) -> f64 {
        self.shape.determinant()
    }

    /// True when the shape is exactly zero.
    pub fn is_point(&self) -> bool {
        self.shape.iter().all(|v| *v == 0.0)
    }

    /// `sqrt(det P)`; the `π^{n/2}/Γ(n/2+1)` unit-ball factor is left out.
    pub fn volume_factor(&self) -> f64 {
        self.determinant().max(0.0).sqrt()
    }

    /// `(x − c)ᵀ P⁻¹ (x − c)`, using the pseudo-inverse on the range of `P`.
    /// Points off the range of a singular shape map to `+∞`.
    pub fn normalized_distance(&self, x: &DVector<f64>) -> f64 {
        Membership::new(self).distance(x)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.normalized_distance(x) <= 1.0 + tol
    }

    /// Reusable membership test for many points.
    pub fn membership(&self) -> Membership {
        Membership::new(self)
    }

    /// Exact image `E(Mc + b, M P Mᵀ)`.
    pub fn affine_image(&self, m: &DMatrix<f64>, b: &DVector<f64>) -> Result<Ellipsoid> {
        if m.ncols() != self.dim() || m.nrows() != b.len() {
            return Err(Error::Dimension(format!(
                "affine map {}x{} with offset {} applied to a {}-dimensional set",
                m.nrows(),
                m.ncols(),
                b.len(),
                self.dim()
            )));
        }
        Ok(Ellipsoid::from_parts(
            m * &self.center + b,
            m * &self.shape * m.transpose(),
        ))
    }

    /// Samples uniform on the solid ellipsoid. Singular shapes are sampled
    /// uniformly inside their range space; a point set returns its center.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<DVector<f64>> {
        self.sample_with(count, rng, false)
    }

    /// [`Self::sample_uniform`] driven by a ChaCha generator seeded with `seed`.
    pub fn sample_uniform_seeded(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_uniform(count, &mut rng)
    }

    /// Samples uniform on the boundary surface of the unit-ball parameterization.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<DVector<f64>> {
        self.sample_with(count, rng, true)
    }

    fn sample_with<R: Rng + ?Sized>(
        &self,
        count: usize,
        rng: &mut R,
        boundary: bool,
    ) -> Vec<DVector<f64>> {
        let basis = RangeBasis::new(&self.shape);
        let k = basis.axes.len();
        let unit = Uniform::new(0.0, 1.0).expect("valid range");
        (0..count)
            .map(|_| {
                let mut x = self.center.clone();
                if k == 0 {
                    return x;
                }
                let dir: Vec<f64> = loop {
                    let g: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
                    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 1e-300 {
                        break g.into_iter().map(|v| v / norm).collect();
                    }
                };
                let radius = if boundary {
                    1.0
                } else {
                    let u: f64 = unit.sample(rng);
                    u.powf(1.0 / k as f64)
                };
                for (d, (scale, axis)) in dir.iter().zip(&basis.axes) {
                    x.axpy(radius * d * scale, axis, 1.0);
                }
                x
            })
            .collect()
    }
}

/// Principal axes spanning the range of a PSD matrix, scaled by `sqrt(λ)`.
struct RangeBasis {
    axes: Vec<(f64, DVector<f64>)>,
}

impl RangeBasis {
    fn new(shape: &DMatrix<f64>) -> Self {
        if shape.nrows() == 0 || shape.iter().all(|v| *v == 0.0) {
            return Self { axes: Vec::new() };
        }
        let eig = linalg::sym_eigen(shape);
        let cutoff = eig.eigenvalues.amax() * 1e-13;
        let axes = eig
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, l)| **l > cutoff)
            .map(|(j, l)| (l.sqrt(), eig.eigenvectors.column(j).into_owned()))
            .collect();
        Self { axes }
    }
}

/// Precomputed pseudo-inverse quadratic form of an ellipsoid.
pub struct Membership {
    center: DVector<f64>,
    range: Vec<(f64, DVector<f64>)>,
    null: Vec<DVector<f64>>,
    null_tol: f64,
}

impl Membership {
    fn new(e: &Ellipsoid) -> Self {
        let n = e.dim();
        let mut range = Vec::new();
        let mut null = Vec::new();
        if n > 0 {
            let eig = linalg::sym_eigen(&e.shape);
            let top = eig.eigenvalues.amax();
            let cutoff = top * 1e-13;
            for (j, l) in eig.eigenvalues.iter().enumerate() {
                let v = eig.eigenvectors.column(j).into_owned();
                if *l > cutoff && *l > 0.0 {
                    range.push((1.0 / l, v));
                } else {
                    null.push(v);
                }
            }
        }
        let scale = e.center.amax().max(1.0);
        Self { center: e.center.clone(), range, null, null_tol: 1e-9 * scale }
    }

    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.center;
        if self.null.iter().any(|v| v.dot(&d).abs() > self.null_tol) {
            return f64::INFINITY;
        }
        self.range.iter().map(|(inv, v)| inv * v.dot(&d).powi(2)).sum()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.distance(x) <= 1.0 + tol
    }
}

fn check_same_dim(e1: &Ellipsoid, e2: &Ellipsoid) -> Result<()> {
    if e1.dim() != e2.dim() {
        return Err(Error::Dimension(format!(
            "sets of dimension {} and {}",
            e1.dim(),
            e2.dim()
        )));
    }
    Ok(())
}

/// `E(c1 + c2, (1 + 1/p) P1 + (1 + p) P2) ⊇ e1 ⊕ e2` for any `p > 0`.
///
/// A point-set summand bypasses the scalar: the sum with `{c}` is the shift.
pub fn outer_minkowski_sum(e1: &Ellipsoid, e2: &Ellipsoid, p: f64) -> Result<Ellipsoid> {
    check_same_dim(e1, e2)?;
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::Input(format!("sum scalar must be positive, got {p}")));
    }
    let center = &e1.center + &e2.center;
    if e2.is_point() {
        return Ok(Ellipsoid::from_parts(center, e1.shape.clone()));
    }
    if e1.is_point() {
        return Ok(Ellipsoid::from_parts(center, e2.shape.clone()));
    }
    let shape = &e1.shape * (1.0 + 1.0 / p) + &e2.shape * (1.0 + p);
    Ok(Ellipsoid::from_parts(center, shape))
}

/// Trace-minimizing scalar `p = sqrt(tr P1 / tr P2)`.
pub fn optimal_sum_scalar(e1: &Ellipsoid, e2: &Ellipsoid) -> Result<f64> {
    check_same_dim(e1, e2)?;
    let (t1, t2) = (e1.trace(), e2.trace());
    if t1 <= 0.0 || t2 <= 0.0 {
        return Err(Error::DegenerateSummand);
    }
    Ok((t1 / t2).sqrt())
}

/// Outer sum with the trace-optimal scalar, falling back to the point-set
/// path when either summand is degenerate.
pub fn outer_sum_min_trace(e1: &Ellipsoid, e2: &Ellipsoid) -> Result<Ellipsoid> {
    match optimal_sum_scalar(e1, e2) {
        Ok(p) => outer_minkowski_sum(e1, e2, p),
        Err(Error::DegenerateSummand) => {
            let center = &e1.center + &e2.center;
            let shape = if e1.trace() <= 0.0 { e2.shape.clone() } else { e1.shape.clone() };
            Ok(Ellipsoid::from_parts(center, shape))
        }
        Err(e) => Err(e),
    }
}

/// Outer bound of `e1 ∩ e2` for a given `q ≥ 0`.
///
/// With `L = P1 (P1 + q⁻¹P2)⁻¹` and
/// `β(q) = 1 + q − q (a2 − a1)ᵀ (q P1 + P2)⁻¹ (a2 − a1)` the bound is
/// `E(a1 + L (a2 − a1), β (I − L) P1)`. `q = 0` returns `e1` with `β = 1`.
/// A non-positive `β` is reported as [`Error::EmptyIntersection`].
pub fn outer_intersection(e1: &Ellipsoid, e2: &Ellipsoid, q: f64) -> Result<(Ellipsoid, f64)> {
    check_same_dim(e1, e2)?;
    if !(q >= 0.0 && q.is_finite()) {
        return Err(Error::Input(format!("intersection scalar must be nonnegative, got {q}")));
    }
    if q == 0.0 {
        return Ok((e1.clone(), 1.0));
    }
    let p1 = &e1.shape;
    let pencil = p1 * q + &e2.shape;
    let chol = symmetrize(&pencil).cholesky().ok_or_else(|| {
        Error::Input("q·P1 + P2 is not positive definite; P1 must be positive definite".into())
    })?;
    let diff = &e2.center - &e1.center;
    let beta = 1.0 + q - q * diff.dot(&chol.solve(&diff));
    if beta <= 0.0 {
        return Err(Error::EmptyIntersection { beta });
    }
    // L = q P1 (q P1 + P2)⁻¹, so (I − L) P1 = P1 − q P1 (q P1 + P2)⁻¹ P1.
    let gain_t = chol.solve(&(p1 * q)); // (qP1 + P2)⁻¹ q P1 = Lᵀ
    let center = &e1.center + gain_t.transpose() * &diff;
    let shape = (p1 - gain_t.transpose() * p1) * beta;
    Ok((Ellipsoid::from_parts(center, shape), beta))
}

/// Trace-optimal `q` for intersecting two full-dimensional ellipsoids.
///
/// Returns 0 when the trace is already increasing at `q = 0`; otherwise the
/// root of the stationarity condition found by bracketing and bisection.
pub fn optimal_intersection_scalar(e1: &Ellipsoid, e2: &Ellipsoid) -> Result<f64> {
    check_same_dim(e1, e2)?;
    let n = e1.dim();
    let innovation = &e2.center - &e1.center;
    trace_optimal_scalar(&e1.shape, &DMatrix::identity(n, n), &e2.shape, &innovation)
}

/// Intersection geometry in gain form: a prior shape `P` (n×n, PD), an
/// observation map `C` (m×n), an observation noise shape `Pv` (m×m, PD) and
/// the innovation `ε = y − C x̂`. The observation set is the slab
/// `{x : (y − Cx)ᵀ Pv⁻¹ (y − Cx) ≤ 1}`.
#[derive(Debug, Clone)]
pub struct GainGeometry {
    prior_trace: f64,
    output_cov: DMatrix<f64>,
    noise: DMatrix<f64>,
    innovation: DVector<f64>,
    lambdas: Vec<f64>,
    weights: Vec<f64>,
    slope_at_zero: f64,
}

impl GainGeometry {
    pub fn new(
        prior: &DMatrix<f64>,
        obs_map: &DMatrix<f64>,
        noise: &DMatrix<f64>,
        innovation: &DVector<f64>,
    ) -> Result<Self> {
        let n = prior.nrows();
        let m = obs_map.nrows();
        if prior.ncols() != n || obs_map.ncols() != n || noise.shape() != (m, m) || innovation.len() != m
        {
            return Err(Error::Dimension(format!(
                "prior {}x{}, map {}x{}, noise {}x{}, innovation {}",
                prior.nrows(),
                prior.ncols(),
                obs_map.nrows(),
                obs_map.ncols(),
                noise.nrows(),
                noise.ncols(),
                innovation.len()
            )));
        }
        let noise_inv = linalg::spd_inverse(noise)
            .ok_or_else(|| Error::Input("observation noise shape is not positive definite".into()))?;
        let info = obs_map.transpose() * &noise_inv * obs_map;
        let root = linalg::sym_sqrt(prior);
        let eig = linalg::sym_eigen(&(&root * &info * &root));
        let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
        let weights: Vec<f64> = (0..n)
            .map(|j| {
                let u = eig.eigenvectors.column(j);
                (u.transpose() * prior * u)[(0, 0)]
            })
            .collect();
        let prior_trace = prior.trace();
        let slope_at_zero = (1.0 - linalg::bilinear(innovation, &noise_inv, innovation)) * prior_trace
            - (prior * &info * prior).trace();
        Ok(Self {
            prior_trace,
            output_cov: symmetrize(&(obs_map * prior * obs_map.transpose())),
            noise: noise.clone(),
            innovation: innovation.clone(),
            lambdas,
            weights,
            slope_at_zero,
        })
    }

    /// `(1 − εᵀPv⁻¹ε)·tr P − tr(P Cᵀ Pv⁻¹ C P)`: positive means `q = 0` is optimal.
    pub fn slope_at_zero(&self) -> f64 {
        self.slope_at_zero
    }

    /// `β(q)` and `β'(q)`, written with `(Pv + q C P Cᵀ)⁻¹` so `q = 0` is regular.
    pub fn beta_and_derivative(&self, q: f64) -> (f64, f64) {
        let s = &self.noise + &self.output_cov * q;
        match symmetrize(&s).cholesky() {
            Some(chol) => {
                let a = chol.solve(&self.innovation);
                let beta = 1.0 + q - q * self.innovation.dot(&a);
                let dbeta = 1.0 - a.dot(&(&self.noise * &a));
                (beta, dbeta)
            }
            None => (f64::NAN, f64::NAN),
        }
    }

    /// Trace of `(I − KC) P` as a function of `q`, and its derivative.
    fn shrunk_trace(&self, q: f64) -> (f64, f64) {
        self.lambdas.iter().zip(&self.weights).fold((0.0, 0.0), |(t, dt), (l, d)| {
            let den = 1.0 + q * l;
            (t + d / den, dt - d * l / (den * den))
        })
    }

    /// Trace of `β(q) (I − KC) P`.
    pub fn fused_trace(&self, q: f64) -> f64 {
        if q == 0.0 {
            return self.prior_trace;
        }
        self.beta_and_derivative(q).0 * self.shrunk_trace(q).0
    }

    /// Derivative of [`Self::fused_trace`]; its root is the optimal `q`.
    pub fn stationarity(&self, q: f64) -> f64 {
        if q == 0.0 {
            return self.slope_at_zero;
        }
        let (beta, dbeta) = self.beta_and_derivative(q);
        let (t, dt) = self.shrunk_trace(q);
        dbeta * t + beta * dt
    }

    /// Trace-minimizing `q ∈ [0, Q_MAX]`.
    pub fn optimal_scalar(&self) -> Result<f64> {
        if self.slope_at_zero > 0.0 {
            return Ok(0.0);
        }
        let mut lo = 0.0;
        let mut hi = Q_START;
        loop {
            let g = self.stationarity(hi);
            if !g.is_finite() {
                return Err(Error::RootNotBracketed {
                    q_max: Q_MAX,
                    detail: format!("stationarity is not finite at q = {hi:e}"),
                });
            }
            if g > 0.0 {
                break;
            }
            lo = hi;
            if hi >= Q_MAX {
                return Err(Error::RootNotBracketed {
                    q_max: Q_MAX,
                    detail: format!("trace still decreasing at q = {hi:e} (slope {g:e})"),
                });
            }
            hi = (hi * 2.0).min(Q_MAX);
        }
        while hi - lo > Q_ABS_TOL * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.stationarity(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Trace-optimal intersection scalar in gain form.
pub fn trace_optimal_scalar(
    prior: &DMatrix<f64>,
    obs_map: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    innovation: &DVector<f64>,
) -> Result<f64> {
    GainGeometry::new(prior, obs_map, noise, innovation)?.optimal_scalar()
}
