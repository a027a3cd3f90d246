use std::sync::Arc;

use arcset::ellipsoid::Ellipsoid;
use arcset::mpc::{assemble_sdp, build_prediction, robust_control, sample_adversary, CostSpec};
use arcset::sdp::{self, SolverStatus, SolverTolerances};
use arcset::system::{constant, matrix_fn, param_fn, UncertainSystem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Time-varying random system whose matrices are drawn from a seed and `k`.
fn random_system(n: usize, r: usize, seed: u64) -> UncertainSystem {
    let gen = move |k: usize, salt: u64, rows: usize, cols: usize, scale: f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64 * 7919) ^ salt);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
    };
    UncertainSystem::new(
        n,
        r,
        1,
        param_fn(move |k, _| gen(k, 1, n, n, 0.9)),
        param_fn(move |k, _| gen(k, 2, n, r, 1.0)),
        param_fn(move |_, _| DMatrix::from_fn(1, n, |_, j| if j == 0 { 1.0 } else { 0.5 })),
        matrix_fn(move |k| DMatrix::identity(n, n) * (0.05 + 0.01 * k as f64)),
        constant(DMatrix::identity(1, 1) * 0.01),
    )
    .unwrap()
}

fn random_weights(n: usize, r: usize, seed: u64) -> (CostSpec, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let np = rng.random_range(1..=3);
    let qs: Vec<DMatrix<f64>> = (0..np + 3)
        .map(|_| {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            &a * a.transpose()
        })
        .collect();
    let rs: Vec<DMatrix<f64>> = (0..np + 3)
        .map(|_| {
            let a = DMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0));
            &a * a.transpose() + DMatrix::identity(r, r) * 0.2
        })
        .collect();
    let (q2, r2) = (qs.clone(), rs.clone());
    let cost = CostSpec::regulation(
        np,
        Arc::new(move |t| q2[t % q2.len()].clone()),
        Arc::new(move |t| r2[t % r2.len()].clone()),
    );
    (cost, qs, rs)
}

/// Simulate the dynamics step by step and sum the horizon cost.
fn rollout_cost(
    sys: &UncertainSystem,
    k: usize,
    np: usize,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
    stage: impl Fn(usize, &DVector<f64>, &DVector<f64>) -> f64,
) -> f64 {
    let n = sys.state_dim();
    let r = sys.input_dim();
    let mut x = x0.clone();
    let mut total = 0.0;
    for j in 0..np {
        let t = k + j;
        let ut = u.rows(j * r, r).into_owned();
        total += stage(t, &x, &ut);
        let wt = w.rows(j * n, n).into_owned();
        x = sys.a(t, &[]).unwrap() * &x + sys.b(t, &[]).unwrap() * &ut + wt;
    }
    total
}

#[test]
fn regulation_cost_matches_rollout() {
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let n = rng.random_range(1..=3);
        let r = rng.random_range(1..=2);
        let k = rng.random_range(0..6);
        let sys = random_system(n, r, case);
        let (cost, qs, rs) = random_weights(n, r, case);
        let np = cost.horizon;
        let center = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let pm = build_prediction(&sys, &[], &cost, k, &center).unwrap();
        let u = DVector::from_fn(np * r, |_, _| rng.random_range(-2.0..2.0));
        let eta = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let w = DVector::from_fn(np * n, |_, _| rng.random_range(-0.5..0.5));
        let direct = rollout_cost(&sys, k, np, &(&center + &eta), &u, &w, |t, x, u| {
            (x.transpose() * &qs[t % qs.len()] * x)[(0, 0)] + (u.transpose() * &rs[t % rs.len()] * u)[(0, 0)]
        });
        let quadratic = pm.cost(&u, &eta, &w);
        assert!(
            (quadratic - direct).abs() <= 1e-9 * direct.abs().max(1.0),
            "case {case}: {quadratic} vs {direct}"
        );
    }
}

#[test]
fn tracking_cost_matches_rollout() {
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + case);
        let n = 3;
        let r = 1;
        let k = rng.random_range(0..6);
        let sys = random_system(n, r, case + 77);
        let map = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, -0.5]);
        let refs: Vec<f64> = (0..12).map(|_| rng.random_range(-4.0..4.0)).collect();
        let refs2 = refs.clone();
        let cost = CostSpec::tracking(
            2,
            map.clone(),
            constant(DMatrix::from_element(1, 1, 10.0)),
            Arc::new(move |t| DVector::from_element(1, refs2[t])),
            constant(DMatrix::identity(1, 1)),
        );
        let center = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let pm = build_prediction(&sys, &[], &cost, k, &center).unwrap();
        let u = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let eta = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let w = DVector::from_fn(2 * n, |_, _| rng.random_range(-0.5..0.5));
        let direct = rollout_cost(&sys, k, 2, &(&center + &eta), &u, &w, |t, x, u| {
            let e = (&map * x)[0] - refs[t];
            10.0 * e * e + u[0] * u[0]
        });
        let quadratic = pm.cost(&u, &eta, &w);
        assert!((quadratic - direct).abs() <= 1e-9 * direct.abs().max(1.0), "case {case}");
    }
}

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

const THETA1: [f64; 6] = [0.0, 0.25, 0.0, 0.0, 0.3, 0.0];

fn prior() -> Ellipsoid {
    Ellipsoid::new(
        DVector::from_vec(vec![5.0, -5.0]),
        DMatrix::from_row_slice(2, 2, &[10.0, 8.0, 8.0, 10.0]),
    )
    .unwrap()
}

fn example_cost(scale: f64) -> CostSpec {
    CostSpec::regulation(
        2,
        constant(DMatrix::identity(2, 2) * scale),
        constant(DMatrix::identity(1, 1) * scale),
    )
}

#[test]
fn first_example_initial_problem_is_certified() {
    let sys = example_one();
    let tol = SolverTolerances::default();
    let (pm, sdp, sol) = robust_control(&sys, &THETA1, &example_cost(1.0), 0, &prior(), &tol).unwrap();
    assert_eq!(pm.input_cost.shape(), (2, 2));
    assert_eq!(pm.disturbance_len(), 6);
    assert_eq!(sdp.problem.dim(), 9);
    assert_eq!(sol.status, SolverStatus::Optimal);
    assert!(sol.certificate.min_eigenvalue >= -1e-7);
    assert_eq!(sol.certificate.sign_violation, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let report = sample_adversary(&sdp, &pm, &sol, 1000, &mut rng);
    assert!(report.holds(), "{report:?}");
}

#[test]
fn uniform_cost_scaling_scales_bound_only() {
    let sys = example_one();
    let tol = SolverTolerances::default();
    let (_, sdp1, s1) = robust_control(&sys, &THETA1, &example_cost(1.0), 0, &prior(), &tol).unwrap();
    let (_, sdp10, s10) = robust_control(&sys, &THETA1, &example_cost(10.0), 0, &prior(), &tol).unwrap();
    let total1 = s1.rho + sdp1.cost_constant;
    let total10 = s10.rho + sdp10.cost_constant;
    assert!((total10 - 10.0 * total1).abs() <= 1e-6 * total10.abs());
    assert!((s10.u0[0] - s1.u0[0]).abs() <= 1e-5 * (1.0 + s1.u0[0].abs()), "{} vs {}", s10.u0[0], s1.u0[0]);
}

#[test]
fn tracking_with_identity_map_matches_regulation() {
    let sys = example_one();
    let tol = SolverTolerances::default();
    let reg = example_cost(1.0);
    let trk = CostSpec::tracking(
        2,
        DMatrix::identity(2, 2),
        constant(DMatrix::identity(2, 2)),
        Arc::new(|_| DVector::zeros(2)),
        constant(DMatrix::identity(1, 1)),
    );
    for k in [0, 3] {
        let set = prior();
        let a = build_prediction(&sys, &THETA1, &reg, k, set.center()).unwrap();
        let b = build_prediction(&sys, &THETA1, &trk, k, set.center()).unwrap();
        assert!((&a.input_linear - &b.input_linear).amax() < 1e-10);
        assert!((&a.disturbance_linear - &b.disturbance_linear).amax() < 1e-10);
        assert!((a.offset - b.offset).abs() < 1e-10);
        let (_, _, sa) = robust_control(&sys, &THETA1, &reg, k, &set, &tol).unwrap();
        let (_, _, sb) = robust_control(&sys, &THETA1, &trk, k, &set, &tol).unwrap();
        assert!((&sa.u0 - &sb.u0).amax() <= 1e-8);
    }
}

#[test]
fn smaller_state_set_lowers_the_bound() {
    let sys = example_one();
    let tol = SolverTolerances::default();
    let big = prior();
    let small = Ellipsoid::new(big.center().clone(), big.shape() * 0.01).unwrap();
    let (_, sb, b) = robust_control(&sys, &THETA1, &example_cost(1.0), 1, &big, &tol).unwrap();
    let (_, ss, s) = robust_control(&sys, &THETA1, &example_cost(1.0), 1, &small, &tol).unwrap();
    assert!(s.rho + ss.cost_constant < b.rho + sb.cost_constant);
}

#[test]
fn decoupled_problem_has_zero_z() {
    // One-step horizon with B = 0: the input never reaches the cost, so
    // the coupling terms vanish and the optimum sits at z = 0.
    let sys = UncertainSystem::new(
        1,
        1,
        1,
        param_fn(|_, _| DMatrix::from_element(1, 1, 0.5)),
        param_fn(|_, _| DMatrix::zeros(1, 1)),
        param_fn(|_, _| DMatrix::identity(1, 1)),
        constant(DMatrix::identity(1, 1) * 0.1),
        constant(DMatrix::identity(1, 1) * 0.1),
    )
    .unwrap();
    let cost = CostSpec::regulation(1, constant(DMatrix::identity(1, 1)), constant(DMatrix::identity(1, 1)));
    let set = Ellipsoid::new(DVector::zeros(1), DMatrix::identity(1, 1) * 2.0).unwrap();
    let pm = build_prediction(&sys, &[], &cost, 0, set.center()).unwrap();
    let prob = assemble_sdp(&pm, &set, &[DMatrix::identity(1, 1) * 0.1]).unwrap();
    let res = sdp::solve(&prob.problem, &SolverTolerances::default()).unwrap();
    assert_eq!(res.status, SolverStatus::Optimal);
    assert!(res.value(prob.z[0]).abs() < 1e-6);
    let rho = res.value(prob.rho);
    let bound = res.value(prob.tau_state) + res.value(prob.tau_noise);
    assert!((rho - bound).abs() < 1e-6 * (1.0 + rho.abs()));
    // Worst case of η² over η² ≤ 2 is 2.
    assert!((rho - 2.0).abs() < 1e-6);
}
