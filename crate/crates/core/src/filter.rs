//! Ellipsoidal set-membership filter for one parameter candidate.
//!
//! The filter keeps a set `E(x̂(k|k), P(k|k))` guaranteed to contain the state
//! when the candidate is the true parameter. A time update bounds the
//! reachable set with an outer Minkowski sum, and a measurement update
//! intersects the prediction with the slab of states consistent with `y(k)`.

use nalgebra::{DMatrix, DVector};

use crate::ellipsoid::{self, Ellipsoid, GainGeometry};
use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};
use crate::system::UncertainSystem;

/// Floor added to a singular observation-noise shape before inversion.
pub const NOISE_FLOOR: f64 = 1e-12;
/// Smallest eigenvalue kept when repairing an updated shape.
pub const SHAPE_FLOOR: f64 = 1e-14;

/// Filtered set `E(x̂(k|k), P(k|k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub estimate: Ellipsoid,
    pub step: usize,
    /// Set once a measurement proved the candidate inconsistent with the data.
    pub frozen: bool,
}

impl FilterState {
    pub fn new(estimate: Ellipsoid, step: usize) -> Self {
        Self { estimate, step, frozen: false }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }
}

/// Predicted set `E(x̂(k|k−1), P(k|k−1))`; `step` is `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedState {
    pub estimate: Ellipsoid,
    pub step: usize,
}

impl PredictedState {
    /// Treat the prediction as the filtered set when no measurement is used.
    pub fn into_filtered(self) -> FilterState {
        FilterState::new(self.estimate, self.step)
    }
}

/// Result of a measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementUpdate {
    pub state: FilterState,
    /// Scale factor of the fused set; `1` when the measurement was not used.
    pub beta: f64,
    /// `y − C x̂(k|k−1)`.
    pub innovation: DVector<f64>,
    /// Fusion scalar chosen by the trace criterion.
    pub q: f64,
}

/// Propagate the filtered set at step `k` through the dynamics with input `u`.
pub fn time_update(
    fs: &FilterState,
    sys: &UncertainSystem,
    theta: &[f64],
    u: &DVector<f64>,
) -> Result<PredictedState> {
    if fs.frozen {
        return Err(Error::Input("time update on a frozen filter".into()));
    }
    if u.len() != sys.input_dim() {
        return Err(Error::Dimension(format!(
            "input has length {}, system expects {}",
            u.len(),
            sys.input_dim()
        )));
    }
    let k = fs.step;
    let a = sys.a(k, theta)?;
    let b = sys.b(k, theta)?;
    let image = fs.estimate.affine_image(&a, &(&b * u))?;
    let noise = Ellipsoid::from_parts(DVector::zeros(sys.state_dim()), sys.process_noise(k)?);
    let estimate = ellipsoid::outer_sum_min_trace(&image, &noise)?;
    Ok(PredictedState { estimate, step: k + 1 })
}

/// Right inverse `Cᵀ (C Cᵀ)⁻¹` of a full-row-rank matrix.
pub fn right_inverse(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = c * c.transpose();
    let scale = gram.amax().max(f64::MIN_POSITIVE);
    if linalg::min_eigenvalue(&gram) <= 1e-12 * scale {
        return Err(Error::Input("observation matrix does not have full row rank".into()));
    }
    let inv = linalg::spd_inverse(&gram)
        .ok_or_else(|| Error::Input("observation matrix does not have full row rank".into()))?;
    Ok(c.transpose() * inv)
}

/// States consistent with `y` through the right inverse of `C(k)`:
/// `E(C⁺y, C⁺ Pv (C⁺)ᵀ)`. Rank-deficient in state space when `m < n`.
pub fn observation_set(
    sys: &UncertainSystem,
    theta: &[f64],
    k: usize,
    y: &DVector<f64>,
) -> Result<Ellipsoid> {
    check_output(sys, y)?;
    let c = sys.c(k, theta)?;
    let pinv = right_inverse(&c)?;
    let shape = &pinv * sys.output_noise(k)? * pinv.transpose();
    Ok(Ellipsoid::from_parts(&pinv * y, shape))
}

fn check_output(sys: &UncertainSystem, y: &DVector<f64>) -> Result<()> {
    if y.len() != sys.output_dim() {
        return Err(Error::Dimension(format!(
            "observation has length {}, system expects {}",
            y.len(),
            sys.output_dim()
        )));
    }
    Ok(())
}

/// Fuse the prediction with the observation `y(k)` in gain form.
///
/// With `S = Pv + q C P Cᵀ`, `G = P Cᵀ S⁻¹` and `K = q G`:
/// `x̂⁺ = x̂ + K ε`, `P⁺ = β [(I − KC) P (I − KC)ᵀ + q G Pv Gᵀ]` and
/// `β = 1 + q − q εᵀ S⁻¹ ε`. This never inverts the state-space observation
/// shape, which is singular whenever `m < n`.
pub fn measurement_update(
    pred: &PredictedState,
    sys: &UncertainSystem,
    theta: &[f64],
    y: &DVector<f64>,
) -> Result<MeasurementUpdate> {
    check_output(sys, y)?;
    let k = pred.step;
    let c = sys.c(k, theta)?;
    let noise = linalg::regularize(&sys.output_noise(k)?, NOISE_FLOOR);
    let prior = pred.estimate.shape();
    let center = pred.estimate.center();
    let innovation = y - &c * center;

    let geometry = GainGeometry::new(prior, &c, &noise, &innovation)?;
    let q = match geometry.optimal_scalar() {
        Ok(q) => q,
        Err(Error::RootNotBracketed { q_max, detail }) => {
            let at_max = geometry.fused_trace(q_max);
            let q = if at_max.is_finite() && at_max > 0.0 && at_max < geometry.fused_trace(0.0) {
                q_max
            } else {
                0.0
            };
            log::debug!("step {k}: intersection scalar not bracketed ({detail}); using q = {q:e}");
            q
        }
        Err(e) => return Err(e),
    };

    if q == 0.0 {
        return Ok(MeasurementUpdate {
            state: FilterState::new(pred.estimate.clone(), k),
            beta: 1.0,
            innovation,
            q,
        });
    }

    let s = &noise + &c * prior * c.transpose() * q;
    let chol = symmetrize(&s)
        .cholesky()
        .ok_or_else(|| Error::ShapeRepair("innovation shape is not positive definite".into()))?;
    let beta = 1.0 + q - q * innovation.dot(&chol.solve(&innovation));
    if beta <= 0.0 {
        return Err(Error::EmptyIntersection { beta });
    }
    let gain_unit = chol.solve(&(&c * prior)).transpose(); // P Cᵀ S⁻¹
    let gain = &gain_unit * q;
    let n = sys.state_dim();
    let residual = DMatrix::identity(n, n) - &gain * &c;
    let raw = (&residual * prior * residual.transpose()
        + &gain_unit * &noise * gain_unit.transpose() * q)
        * beta;
    let shape = repair_shape(&raw)?;
    let estimate = Ellipsoid::from_parts(center + gain * &innovation, shape);
    Ok(MeasurementUpdate { state: FilterState::new(estimate, k), beta, innovation, q })
}

/// Symmetrize and clamp the spectrum at [`SHAPE_FLOOR`].
pub fn repair_shape(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::ShapeRepair("updated shape has non-finite entries".into()));
    }
    Ok(linalg::clamp_spectrum(p, SHAPE_FLOOR))
}

/// Outer bound of the output set `{C x + v}` over the prediction:
/// `E(C x̂(k|k−1), (1 + 1/p) C P Cᵀ + (1 + p) Pv)` with the trace-optimal `p`.
pub fn predicted_output_set(
    pred: &PredictedState,
    sys: &UncertainSystem,
    theta: &[f64],
) -> Result<Ellipsoid> {
    let k = pred.step;
    let c = sys.c(k, theta)?;
    let image = pred.estimate.affine_image(&c, &DVector::zeros(sys.output_dim()))?;
    let noise = Ellipsoid::from_parts(DVector::zeros(sys.output_dim()), sys.output_noise(k)?);
    ellipsoid::outer_sum_min_trace(&image, &noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{constant, param_fn};
    use approx::assert_relative_eq;

    fn identity_system(pw: f64, pv: f64) -> UncertainSystem {
        UncertainSystem::new(
            2,
            1,
            2,
            param_fn(|_, _| DMatrix::identity(2, 2)),
            param_fn(|_, _| DMatrix::zeros(2, 1)),
            param_fn(|_, _| DMatrix::identity(2, 2)),
            constant(DMatrix::identity(2, 2) * pw),
            constant(DMatrix::identity(2, 2) * pv),
        )
        .unwrap()
    }

    fn prior() -> Ellipsoid {
        Ellipsoid::new(
            DVector::from_vec(vec![5.0, -5.0]),
            DMatrix::from_row_slice(2, 2, &[10.0, 8.0, 8.0, 10.0]),
        )
        .unwrap()
    }

    #[test]
    fn noiseless_identity_prediction() {
        let sys = identity_system(0.0, 1.0);
        let fs = FilterState::new(prior(), 0);
        let pred = time_update(&fs, &sys, &[], &DVector::zeros(1)).unwrap();
        assert_eq!(pred.estimate, prior());
        assert_eq!(pred.step, 1);
    }

    #[test]
    fn identity_observation_set() {
        let sys = identity_system(0.0, 0.5);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let o = observation_set(&sys, &[], 1, &y).unwrap();
        assert_relative_eq!(o.center(), &y, epsilon = 1e-15);
        assert_relative_eq!(o.shape(), &(DMatrix::identity(2, 2) * 0.5), epsilon = 1e-15);
    }

    #[test]
    fn zero_innovation_with_wide_noise_keeps_prediction() {
        let sys = identity_system(0.0, 1e4);
        let pred = PredictedState { estimate: prior(), step: 1 };
        let y = prior().center().clone();
        let up = measurement_update(&pred, &sys, &[], &y).unwrap();
        assert_eq!(up.q, 0.0);
        assert_eq!(up.beta, 1.0);
        assert_eq!(up.state.estimate, prior());
    }

    #[test]
    fn informative_measurement_shrinks_trace() {
        let sys = identity_system(0.0, 0.1);
        let pred = PredictedState { estimate: prior(), step: 1 };
        let y = DVector::from_vec(vec![5.2, -4.9]);
        let up = measurement_update(&pred, &sys, &[], &y).unwrap();
        assert!(up.q > 0.0);
        assert!(up.state.estimate.trace() < prior().trace());
    }

    #[test]
    fn inconsistent_measurement_is_empty() {
        let sys = identity_system(0.0, 0.01);
        let pred = PredictedState { estimate: prior(), step: 1 };
        let y = DVector::from_vec(vec![50.0, 50.0]);
        assert!(matches!(
            measurement_update(&pred, &sys, &[], &y),
            Err(Error::EmptyIntersection { .. })
        ));
    }

    #[test]
    fn double_degenerate_output_set_is_point() {
        let sys = identity_system(0.0, 0.0);
        let pred = PredictedState {
            estimate: Ellipsoid::point(DVector::from_vec(vec![1.0, 2.0])),
            step: 0,
        };
        let out = predicted_output_set(&pred, &sys, &[]).unwrap();
        assert!(out.is_point());
        assert_eq!(out.center(), &DVector::from_vec(vec![1.0, 2.0]));
    }

    #[test]
    fn right_inverse_of_row() {
        let c = DMatrix::from_row_slice(1, 2, &[0.2, 1.0]);
        let pinv = right_inverse(&c).unwrap();
        assert_relative_eq!((&c * &pinv)[(0, 0)], 1.0, epsilon = 1e-15);
        assert!(right_inverse(&DMatrix::zeros(1, 2)).is_err());
    }
}
