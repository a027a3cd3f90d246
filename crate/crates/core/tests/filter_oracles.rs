use arcset::ellipsoid::{outer_intersection, Ellipsoid};
use arcset::filter::{
    measurement_update, observation_set, predicted_output_set, time_update, FilterState, PredictedState,
};
use arcset::system::{matrix_fn, param_fn, UncertainSystem};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const THETA1: [f64; 6] = [0.0, 0.25, 0.0, 0.0, 0.3, 0.0];

/// The first example's plant written out by hand.
fn example_one() -> UncertainSystem {
    UncertainSystem::new(
        2,
        1,
        1,
        param_fn(|k, th| {
            let s = 1.0 + 0.2 * (k as f64).sin();
            DMatrix::from_row_slice(2, 2, &[0.6 + th[0], 0.7, th[1], 0.5 + th[2]]) * s
        }),
        param_fn(|_, th| DMatrix::from_column_slice(2, 1, &[1.0 + th[3], th[4]])),
        param_fn(|_, th| DMatrix::from_row_slice(1, 2, &[0.2 + th[5], 1.0])),
        matrix_fn(|k| DMatrix::identity(2, 2) * (0.1 * (k as f64).atan()).powi(2)),
        matrix_fn(|k| DMatrix::from_element(1, 1, (0.15 * (k as f64).atan()).powi(2))),
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
fn initial_set_determinant() {
    assert!((prior().determinant() - 36.0).abs() <= 1e-12);
}

#[test]
fn prediction_inflates_by_noise_and_contains_reachable_set() {
    let sys = example_one();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let fs = FilterState::new(prior(), 1);
    let u = DVector::from_element(1, -2.0);
    let pred = time_update(&fs, &sys, &THETA1, &u).unwrap();
    let a = sys.a(1, &THETA1).unwrap();
    let b = sys.b(1, &THETA1).unwrap();
    assert!(pred.estimate.trace() > (&a * prior().shape() * a.transpose()).trace());
    assert_eq!(pred.estimate.center(), &(&a * prior().center() + &b * &u));

    let noise = Ellipsoid::new(DVector::zeros(2), sys.process_noise(1).unwrap()).unwrap();
    let test = pred.estimate.membership();
    let xs = prior().sample_uniform(10_000, &mut rng);
    let ws = noise.sample_uniform(10_000, &mut rng);
    for (x, w) in xs.iter().zip(&ws) {
        assert!(test.contains(&(&a * x + &b * &u + w), 1e-9));
    }
}

#[test]
fn observation_set_of_first_example() {
    let sys = example_one();
    let y = DVector::from_element(1, 0.7);
    let c = sys.c(3, &THETA1).unwrap();
    assert!(((&c * c.transpose())[(0, 0)] - 1.04).abs() < 1e-15);
    let o = observation_set(&sys, &THETA1, 3, &y).unwrap();
    assert!(((&c * o.center())[(0, 0)] - 0.7).abs() < 1e-15);

    // States reached by moving from the center along C's row to the edge of
    // the noise interval sit exactly on the set's boundary.
    let pv = sys.output_noise(3).unwrap()[(0, 0)];
    let dir = c.transpose() / 1.04;
    for sign in [-1.0, 1.0] {
        let x = o.center() + &dir * (sign * pv.sqrt());
        assert!(((&c * &x)[(0, 0)] - 0.7 - sign * pv.sqrt()).abs() < 1e-12);
        assert!((o.normalized_distance(&x) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn fused_set_contains_consistent_states_and_shrinks() {
    let sys = example_one();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pred = PredictedState { estimate: prior(), step: 2 };
    let c = sys.c(2, &THETA1).unwrap();
    let pv = sys.output_noise(2).unwrap();
    let noise = Ellipsoid::new(DVector::zeros(1), pv).unwrap();
    for _ in 0..20 {
        let x = prior().sample_uniform(1, &mut rng).remove(0);
        let v = noise.sample_uniform(1, &mut rng).remove(0);
        let y = &c * &x + v;
        let up = measurement_update(&pred, &sys, &THETA1, &y).unwrap();
        assert!(up.beta > 0.0);
        assert!(up.state.estimate.contains(&x, 1e-9));
        if up.q > 0.0 {
            assert!(up.state.estimate.trace() <= prior().trace());
        }
        // Any state of the prior consistent with y must be kept.
        let test = up.state.estimate.membership();
        let bound = noise.membership();
        for z in prior().sample_uniform(2_000, &mut rng) {
            if bound.contains(&(&y - &c * &z), 0.0) {
                assert!(test.contains(&z, 1e-9));
            }
        }
    }
}

#[test]
fn output_set_contains_next_observation() {
    let sys = example_one();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pred = PredictedState { estimate: prior(), step: 1 };
    let out = predicted_output_set(&pred, &sys, &THETA1).unwrap();
    let c = sys.c(1, &THETA1).unwrap();
    let noise = Ellipsoid::new(DVector::zeros(1), sys.output_noise(1).unwrap()).unwrap();
    let test = out.membership();
    let xs = prior().sample_uniform(5_000, &mut rng);
    let vs = noise.sample_boundary(5_000, &mut rng);
    for (x, v) in xs.iter().zip(&vs) {
        assert!(test.contains(&(&c * x + v), 1e-9));
    }
}

#[test]
fn identity_observation_without_noise_maps_state_set() {
    let sys = UncertainSystem::new(
        2,
        1,
        2,
        param_fn(|_, _| DMatrix::identity(2, 2)),
        param_fn(|_, _| DMatrix::zeros(2, 1)),
        param_fn(|_, _| DMatrix::identity(2, 2)),
        matrix_fn(|_| DMatrix::zeros(2, 2)),
        matrix_fn(|_| DMatrix::zeros(2, 2)),
    )
    .unwrap();
    let pred = PredictedState { estimate: prior(), step: 0 };
    let out = predicted_output_set(&pred, &sys, &[]).unwrap();
    assert_eq!(out.center(), prior().center());
    assert_eq!(out.shape(), prior().shape());
}

#[test]
fn gain_form_matches_set_form_with_square_output() {
    let sys = UncertainSystem::new(
        2,
        1,
        2,
        param_fn(|_, _| DMatrix::identity(2, 2)),
        param_fn(|_, _| DMatrix::zeros(2, 1)),
        param_fn(|_, _| DMatrix::from_row_slice(2, 2, &[1.0, 0.4, -0.3, 0.8])),
        matrix_fn(|_| DMatrix::zeros(2, 2)),
        matrix_fn(|_| DMatrix::from_row_slice(2, 2, &[6.0, 1.0, 1.0, 4.0])),
    )
    .unwrap();
    let pred = PredictedState { estimate: prior(), step: 1 };
    for y in [[5.0, -4.0], [4.2, -5.1], [6.0, -3.5]] {
        let y = DVector::from_row_slice(&y);
        let up = measurement_update(&pred, &sys, &[], &y).unwrap();
        assert!(up.q > 0.0);
        let obs = observation_set(&sys, &[], 1, &y).unwrap();
        let (fused, beta) = outer_intersection(&prior(), &obs, up.q).unwrap();
        let scale = fused.shape().norm();
        assert!((beta - up.beta).abs() <= 1e-10, "{beta} vs {}", up.beta);
        assert!((fused.center() - up.state.estimate.center()).norm() <= 1e-10 * scale);
        assert!((fused.shape() - up.state.estimate.shape()).norm() <= 1e-10 * scale);
    }
}
