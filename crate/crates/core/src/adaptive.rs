//! Multiple-model adaptation: a bank of parameter candidates, each with its
//! own set-membership filter and robust controller, weighted by posterior
//! probabilities computed from the volume of the predicted output sets.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ellipsoid::{Ellipsoid, MEMBERSHIP_TOL};
use crate::error::{Error, Result};
use crate::filter::{self, FilterState, PredictedState, NOISE_FLOOR};
use crate::linalg;
use crate::mpc::{self, CostSpec};
use crate::sdp::SolverTolerances;
use crate::system::UncertainSystem;

/// Midpoints of `⌈(hi − lo) / (2 eps)⌉` equal sub-intervals of `[lo, hi]`, so
/// every point of the interval is within `eps` of a candidate.
pub fn discretize_interval(lo: f64, hi: f64, eps: f64) -> Result<Vec<f64>> {
    if !(hi > lo) || !(eps > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Input(format!("cannot discretize [{lo}, {hi}] with eps {eps}")));
    }
    let count = ((hi - lo) / (2.0 * eps)).ceil().max(1.0) as usize;
    let width = (hi - lo) / count as f64;
    Ok((0..count).map(|i| lo + width * (i as f64 + 0.5)).collect())
}

/// `1 / sqrt(det P_y)` when `y` lies in the predicted output set, else 0.
/// The unit-ball volume constant is common to all candidates and dropped.
pub fn likelihood(output_set: &Ellipsoid, y: &DVector<f64>) -> f64 {
    let shape = linalg::regularize(output_set.shape(), NOISE_FLOOR);
    let set = Ellipsoid::from_parts(output_set.center().clone(), shape);
    if !set.contains(y, MEMBERSHIP_TOL) {
        return 0.0;
    }
    let det = set.determinant();
    if det > 0.0 {
        1.0 / det.sqrt()
    } else {
        0.0
    }
}

/// Bayes update `π'_i ∝ L_i π_i`. When every product is zero the previous
/// weights are returned unchanged and the flag is set.
pub fn update_weights(weights: &[f64], likelihoods: &[f64]) -> (Vec<f64>, bool) {
    let products: Vec<f64> = weights.iter().zip(likelihoods).map(|(p, l)| p * l).collect();
    let total: f64 = products.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return (weights.to_vec(), true);
    }
    (products.iter().map(|p| p / total).collect(), false)
}

/// `u = Σ π_i u_i` over candidates that produced a control.
pub fn aggregate_control(weights: &[f64], controls: &[Option<DVector<f64>>], dim: usize) -> DVector<f64> {
    let mut u = DVector::zeros(dim);
    for (w, c) in weights.iter().zip(controls) {
        if let Some(c) = c {
            if *w > 0.0 {
                u.axpy(*w, c, 1.0);
            }
        }
    }
    u
}

fn normalize(weights: &mut [f64]) -> bool {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return false;
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    true
}

/// Everything the bank needs besides the observations.
#[derive(Debug, Clone)]
pub struct ControlContext<'a> {
    pub system: &'a UncertainSystem,
    pub cost: &'a CostSpec,
    pub tolerances: SolverTolerances,
    /// Sampled disturbances used to check every solved problem; 0 disables it.
    pub adversary_draws: usize,
    /// Seed for the adversary sampler; mixed with the step and candidate index.
    pub adversary_seed: u64,
}

#[derive(Debug, Clone)]
struct Candidate {
    theta: Vec<f64>,
    weight: f64,
    filter: FilterState,
    prediction: Option<PredictedState>,
    last_control: DVector<f64>,
}

/// Per-candidate record of one step.
#[derive(Debug, Clone)]
pub struct CandidateReport {
    pub weight: f64,
    pub frozen: bool,
    pub likelihood: Option<f64>,
    pub beta: Option<f64>,
    pub q: Option<f64>,
    /// Filtered set `E(x̂(k|k), P(k|k))` used by the controller.
    pub estimate: Ellipsoid,
    pub rho: Option<f64>,
    pub worst_case_cost: Option<f64>,
    pub control: Option<DVector<f64>>,
    /// Set when the solver failed and the previous input was reused.
    pub control_fallback: bool,
    pub lmi_min_eigenvalue: Option<f64>,
    pub adversary_excess: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub step: usize,
    pub control: DVector<f64>,
    /// True when every likelihood product vanished and weights were kept.
    pub weights_kept: bool,
    pub candidates: Vec<CandidateReport>,
}

impl StepReport {
    pub fn weights(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.weight).collect()
    }
}

/// Candidates `θ_1 … θ_s` with weights and one filter each.
///
/// With `learning` disabled the measurement step is skipped entirely: sets are
/// only propagated and weights never change.
#[derive(Debug, Clone)]
pub struct CandidateBank {
    candidates: Vec<Candidate>,
    learning: bool,
    input_dim: usize,
    step: usize,
}

impl CandidateBank {
    pub fn new(thetas: Vec<Vec<f64>>, prior: Ellipsoid, input_dim: usize, learning: bool) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::Input("candidate bank needs at least one candidate".into()));
        }
        if linalg::min_eigenvalue(prior.shape()) <= 0.0 {
            return Err(Error::Input("initial state set must have a positive definite shape".into()));
        }
        let weight = 1.0 / thetas.len() as f64;
        let candidates = thetas
            .into_iter()
            .map(|theta| Candidate {
                theta,
                weight,
                filter: FilterState::new(prior.clone(), 0),
                prediction: None,
                last_control: DVector::zeros(input_dim),
            })
            .collect();
        Ok(Self { candidates, learning, input_dim, step: 0 })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn weights(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.weight).collect()
    }

    pub fn theta(&self, i: usize) -> &[f64] {
        &self.candidates[i].theta
    }

    pub fn filter(&self, i: usize) -> &FilterState {
        &self.candidates[i].filter
    }

    /// Run one step: fold in `y(k)` (absent at `k = 0`), compute the adaptive
    /// control `u(k)`, then predict every live candidate's set to `k + 1`.
    pub fn advance(&mut self, ctx: &ControlContext<'_>, y: Option<&DVector<f64>>) -> Result<StepReport> {
        let k = self.step;
        let s = self.candidates.len();
        let mut likelihoods: Vec<Option<f64>> = vec![None; s];
        let mut betas: Vec<Option<f64>> = vec![None; s];
        let mut qs: Vec<Option<f64>> = vec![None; s];
        let mut weights_kept = false;

        if let Some(y) = y {
            if k == 0 {
                return Err(Error::Input("no observation is used at step 0".into()));
            }
            if self.learning {
                for (i, c) in self.candidates.iter().enumerate() {
                    if c.filter.frozen {
                        likelihoods[i] = Some(0.0);
                        continue;
                    }
                    let pred = c.prediction.as_ref().expect("live candidates carry a prediction");
                    let out = filter::predicted_output_set(pred, ctx.system, &c.theta)?;
                    likelihoods[i] = Some(likelihood(&out, y));
                }
                let ls: Vec<f64> = likelihoods.iter().map(|l| l.unwrap_or(0.0)).collect();
                let (updated, kept) = update_weights(&self.weights(), &ls);
                if kept {
                    log::warn!("step {k}: all likelihoods vanished; keeping previous weights");
                }
                weights_kept = kept;
                for (c, w) in self.candidates.iter_mut().zip(updated) {
                    c.weight = w;
                }
            }

            let mut froze = false;
            for (i, c) in self.candidates.iter_mut().enumerate() {
                if c.filter.frozen {
                    continue;
                }
                let pred = c.prediction.take().expect("live candidates carry a prediction");
                if !self.learning {
                    c.filter = pred.into_filtered();
                    continue;
                }
                match filter::measurement_update(&pred, ctx.system, &c.theta, y) {
                    Ok(up) => {
                        betas[i] = Some(up.beta);
                        qs[i] = Some(up.q);
                        c.filter = up.state;
                    }
                    Err(Error::EmptyIntersection { beta }) => {
                        log::debug!("step {k}: candidate {i} inconsistent with data (beta {beta:e})");
                        betas[i] = Some(beta);
                        c.filter = pred.into_filtered();
                        c.filter.freeze();
                        c.weight = 0.0;
                        froze = true;
                    }
                    Err(e) => return Err(e),
                }
            }
            if froze {
                let mut w = self.weights();
                if !normalize(&mut w) {
                    return Err(Error::Input(format!("step {k}: every candidate is inconsistent with the data")));
                }
                for (c, w) in self.candidates.iter_mut().zip(w) {
                    c.weight = w;
                }
            }
        } else if k > 0 {
            for c in self.candidates.iter_mut().filter(|c| !c.filter.frozen) {
                let pred = c.prediction.take().expect("live candidates carry a prediction");
                c.filter = pred.into_filtered();
            }
        }

        let mut reports = Vec::with_capacity(s);
        let mut controls: Vec<Option<DVector<f64>>> = vec![None; s];
        for (i, c) in self.candidates.iter_mut().enumerate() {
            let mut report = CandidateReport {
                weight: c.weight,
                frozen: c.filter.frozen,
                likelihood: likelihoods[i],
                beta: betas[i],
                q: qs[i],
                estimate: c.filter.estimate.clone(),
                rho: None,
                worst_case_cost: None,
                control: None,
                control_fallback: false,
                lmi_min_eigenvalue: None,
                adversary_excess: None,
            };
            if !c.filter.frozen && c.weight > 0.0 {
                match mpc::robust_control(ctx.system, &c.theta, ctx.cost, k, &c.filter.estimate, &ctx.tolerances) {
                    Ok((pm, sdp, sol)) => {
                        if ctx.adversary_draws > 0 {
                            let seed = ctx.adversary_seed ^ ((k as u64) << 32) ^ (i as u64).wrapping_mul(0x9E37_79B9);
                            let mut rng = ChaCha8Rng::seed_from_u64(seed);
                            let adv = mpc::sample_adversary(&sdp, &pm, &sol, ctx.adversary_draws, &mut rng);
                            report.adversary_excess = Some(adv.max_excess);
                        }
                        report.rho = Some(sol.rho);
                        report.worst_case_cost = Some(sol.worst_case_cost);
                        report.lmi_min_eigenvalue = Some(sol.certificate.min_eigenvalue);
                        c.last_control = sol.u0.clone();
                    }
                    Err(Error::ControlFailure(status)) => {
                        log::warn!("step {k}: candidate {i} solver returned {status:?}; reusing previous input");
                        report.control_fallback = true;
                    }
                    Err(e) => return Err(e),
                }
                report.control = Some(c.last_control.clone());
                controls[i] = Some(c.last_control.clone());
            }
            reports.push(report);
        }
        let u = aggregate_control(&self.weights(), &controls, self.input_dim);

        for c in self.candidates.iter_mut().filter(|c| !c.filter.frozen) {
            c.prediction = Some(filter::time_update(&c.filter, ctx.system, &c.theta, &u)?);
        }
        self.step += 1;
        Ok(StepReport { step: k, control: u, weights_kept, candidates: reports })
    }

    /// Predicted set `E(x̂(k+1|k), P(k+1|k))` of candidate `i` after the last step.
    pub fn prediction(&self, i: usize) -> Option<&PredictedState> {
        self.candidates[i].prediction.as_ref()
    }

    /// Weighted center `Σ π_i x̂_i(k|k)` of the filtered sets.
    pub fn weighted_center(&self) -> DVector<f64> {
        let n = self.candidates[0].filter.estimate.dim();
        let mut x = DVector::zeros(n);
        for c in &self.candidates {
            if c.weight > 0.0 {
                x.axpy(c.weight, c.filter.estimate.center(), 1.0);
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn discretize_examples() {
        assert_eq!(discretize_interval(0.0, 1.0, 0.25).unwrap(), vec![0.25, 0.75]);
        assert_eq!(discretize_interval(-1.0, 1.0, 0.5).unwrap(), vec![-0.5, 0.5]);
        assert!(discretize_interval(1.0, 0.0, 0.1).is_err());
        assert!(discretize_interval(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn likelihood_examples() {
        let set = Ellipsoid::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[10.0, 8.0, 8.0, 10.0]),
        )
        .unwrap();
        assert_relative_eq!(likelihood(&set, &DVector::from_vec(vec![0.0, 0.0])), 1.0 / 6.0, epsilon = 1e-14);
        assert_eq!(likelihood(&set, &DVector::from_vec(vec![10.0, -10.0])), 0.0);
    }

    #[test]
    fn bayes_arithmetic() {
        let (w, kept) = update_weights(&[0.5, 0.5], &[2.0, 1.0]);
        assert!(!kept);
        assert_relative_eq!(w[0], 2.0 / 3.0);
        assert_relative_eq!(w[1], 1.0 / 3.0);
        let (w, _) = update_weights(&[0.2, 0.8], &[3.0, 3.0]);
        assert_relative_eq!(w[0], 0.2);
        let (w, kept) = update_weights(&[0.2, 0.8], &[0.0, 0.0]);
        assert!(kept);
        assert_eq!(w, vec![0.2, 0.8]);
    }

    #[test]
    fn aggregation() {
        let u1 = DVector::from_vec(vec![1.5]);
        let u2 = DVector::from_vec(vec![-1.5]);
        let u = aggregate_control(&[0.5, 0.5], &[Some(u1.clone()), Some(u2)], 1);
        assert_eq!(u[0], 0.0);
        let u = aggregate_control(&[1.0, 0.0, 0.0], &[Some(u1.clone()), None, None], 1);
        assert_eq!(u, u1);
    }
}
