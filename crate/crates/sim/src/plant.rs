//! The true plant `x(k+1) = A x + B u + w`, `y(k+1) = C x(k+1) + v` with noise
//! drawn inside its ellipsoidal bounds.

use arcset::linalg;
use arcset::system::UncertainSystem;
use arcset::Ellipsoid;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::config::NoiseDistribution;
use crate::error::Result;

/// A draw from the unit ball (or sphere) of dimension `dim`.
pub fn unit_draw<R: Rng + ?Sized>(dim: usize, dist: NoiseDistribution, rng: &mut R) -> DVector<f64> {
    let ball = Ellipsoid::new(DVector::zeros(dim), DMatrix::identity(dim, dim)).expect("unit ball is valid");
    match dist {
        NoiseDistribution::Uniform => ball.sample_uniform(1, rng).remove(0),
        NoiseDistribution::Boundary => ball.sample_boundary(1, rng).remove(0),
    }
}

/// Map a unit-ball point into `E(center, shape)` through the symmetric square root.
pub fn into_ellipsoid(center: &DVector<f64>, shape: &DMatrix<f64>, unit: &DVector<f64>) -> DVector<f64> {
    center + linalg::sym_sqrt(shape) * unit
}

/// Unit-ball draws for one run, shared by every controller so that the
/// variants face identical initial states and noise sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraws {
    pub initial: DVector<f64>,
    /// `process[k]` scales to `w(k)`.
    pub process: Vec<DVector<f64>>,
    /// `output[k]` scales to `v(k)`; entry 0 is unused.
    pub output: Vec<DVector<f64>>,
}

impl NoiseDraws {
    pub fn draw<R: Rng + ?Sized>(
        state_dim: usize,
        output_dim: usize,
        steps: usize,
        dist: NoiseDistribution,
        rng: &mut R,
    ) -> Self {
        let initial = unit_draw(state_dim, dist, rng);
        let process = (0..steps).map(|_| unit_draw(state_dim, dist, rng)).collect();
        let output = (0..=steps).map(|_| unit_draw(output_dim, dist, rng)).collect();
        Self { initial, process, output }
    }
}

/// Advance the plant one step from `x(k)` under `u(k)` with the given unit
/// draws for `w(k)` and `v(k+1)`; returns `(x(k+1), y(k+1))`.
pub fn plant_step(
    sys: &UncertainSystem,
    theta: &[f64],
    x: &DVector<f64>,
    u: &DVector<f64>,
    k: usize,
    w_unit: &DVector<f64>,
    v_unit: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let w = linalg::sym_sqrt(&sys.process_noise(k)?) * w_unit;
    let next = sys.a(k, theta)? * x + sys.b(k, theta)? * u + w;
    let v = linalg::sym_sqrt(&sys.output_noise(k + 1)?) * v_unit;
    let y = sys.c(k + 1, theta)? * &next + v;
    Ok((next, y))
}

/// [`plant_step`] with fresh draws from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_plant_step<R: Rng + ?Sized>(
    sys: &UncertainSystem,
    theta: &[f64],
    x: &DVector<f64>,
    u: &DVector<f64>,
    k: usize,
    dist: NoiseDistribution,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let w = unit_draw(sys.state_dim(), dist, rng);
    let v = unit_draw(sys.output_dim(), dist, rng);
    plant_step(sys, theta, x, u, k, &w, &v)
}
