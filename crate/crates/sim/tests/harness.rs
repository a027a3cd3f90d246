use std::fs;
use std::path::Path;

use arcset_sim::config::{Controller, Entry, Experiment, ExperimentConfig};
use arcset_sim::export::{self, candidates_header, steps_header};
use arcset_sim::harness::{checkpoint, error_metrics, error_samples, run_experiment, ErrorSample, ExperimentResult};

fn small(steps: usize, runs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::example1();
    cfg.steps = steps;
    cfg.runs = runs;
    cfg.candidates.truncate(2);
    cfg.checkpoints = (1..steps).collect();
    cfg
}

fn run(cfg: ExperimentConfig) -> ExperimentResult {
    run_experiment(&Experiment::new(cfg).unwrap())
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn export_layout() {
    let res = run(small(3, 2));
    let dir = tempfile::tempdir().unwrap();
    let files = export::write_all(dir.path(), &res).unwrap();
    assert_eq!(files.len(), 6);

    let (header, rows) = read_csv(&dir.path().join("steps.csv"));
    assert_eq!(header, steps_header(2, 1, 1));
    assert_eq!(header.len(), 4 + 2 + 1 + 1 + 2 + 4);
    assert_eq!(rows.len(), 3 * 2 * 3);
    assert!(rows.iter().all(|r| r.len() == header.len()));
    // Nothing is observed before the first measurement.
    let y = header.iter().position(|h| h == "y_1").unwrap();
    assert!(rows.iter().all(|r| (r[2] == "0") == r[y].is_empty()));

    let (header, rows) = read_csv(&dir.path().join("candidates.csv"));
    assert_eq!(header, candidates_header(1));
    // ARC tracks both candidates, ORC and RC one each.
    assert_eq!(rows.len(), 2 * 3 * (2 + 1 + 1));

    let (header, rows) = read_csv(&dir.path().join("ellipsoids.csv"));
    assert!(header.ends_with(&["c_1", "c_2", "p_1_1", "p_1_2", "p_2_1", "p_2_2"].map(String::from)));
    assert_eq!(rows.len(), 3 * (2 + 1 + 1));

    let summary = export::read_summary(dir.path()).unwrap();
    assert_eq!(summary.config, res.experiment.config);
    assert_eq!(summary.metrics, res.metrics);
}

#[test]
fn initial_determinant_column() {
    let res = run(small(2, 3));
    let dir = tempfile::tempdir().unwrap();
    export::write_all(dir.path(), &res).unwrap();
    let (header, rows) = read_csv(&dir.path().join("candidates.csv"));
    let (k, det) = (
        header.iter().position(|h| h == "k").unwrap(),
        header.iter().position(|h| h == "det").unwrap(),
    );
    let first: Vec<f64> = rows.iter().filter(|r| r[k] == "0").map(|r| r[det].parse().unwrap()).collect();
    assert_eq!(first.len(), 3 * 4);
    for d in first {
        assert!((d - 36.0).abs() <= 1e-12, "{d}");
    }
}

#[test]
fn csv_round_trip_preserves_metrics() {
    let res = run(small(6, 4));
    let dir = tempfile::tempdir().unwrap();
    export::write_all(dir.path(), &res).unwrap();
    let direct = error_samples(res.runs.iter().flat_map(|r| &r.trajectories));
    let read = export::read_error_samples(dir.path()).unwrap();
    assert_eq!(read, direct);
    let horizons = res.experiment.config.checkpoints.clone();
    assert_eq!(export::report(dir.path(), &horizons).unwrap(), res.metrics.checkpoints);
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    export::write_all(a.path(), &run(small(5, 3))).unwrap();
    export::write_all(b.path(), &run(small(5, 3))).unwrap();
    for name in ["steps.csv", "candidates.csv", "weights.csv", "ellipsoids.csv", "envelopes.csv", "summary.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }

    let mut other = small(5, 3);
    other.seed += 1;
    let c = tempfile::tempdir().unwrap();
    export::write_all(c.path(), &run(other)).unwrap();
    assert_ne!(fs::read(a.path().join("steps.csv")).unwrap(), fs::read(c.path().join("steps.csv")).unwrap());
}

fn sample(controller: Controller, run: usize, k: usize, est: f64, ctl: f64, failed: bool) -> ErrorSample {
    ErrorSample { controller, run, k, estimate_error: est, control_error: ctl, failed }
}

#[test]
fn metrics_on_hand_built_log() {
    use Controller::*;
    let mut log = Vec::new();
    for k in 0..4 {
        let kf = k as f64;
        // k = 0 is excluded from every sum.
        log.push(sample(Arc, 0, k, kf, 2.0 * kf, false));
        log.push(sample(Arc, 1, k, 1.0, 4.0, false));
        log.push(sample(Rc, 0, k, 3.0, 10.0, false));
        log.push(sample(Rc, 1, k, 1e9, 1e9, true));
        log.push(sample(Orc, 0, k, 0.5, 1.0, false));
    }
    let arc = error_metrics(&log, Arc, 3).unwrap();
    // Run 0: estimate 1+2+3, control 2+4+6. Run 1: 3 and 12.
    assert_eq!(arc.estimate_error, (6.0 + 3.0) / 2.0);
    assert_eq!(arc.control_error, (12.0 + 12.0) / 2.0);
    assert_eq!(arc.control_error_per_step, 4.0);
    let rc = error_metrics(&log, Rc, 2).unwrap();
    assert_eq!((rc.estimate_error, rc.control_error), (6.0, 20.0));

    let cp = checkpoint(&log, 3);
    assert_eq!(cp.horizon, 3);
    assert_eq!(cp.arc_over_rc_control, Some((30.0 - 12.0) / 30.0));
    assert_eq!(cp.orc_over_arc_control, Some((12.0 - 3.0) / 12.0));
    assert_eq!(cp.orc_over_arc_estimate, Some((4.5 - 1.5) / 4.5));

    let only_failed = vec![sample(Rc, 0, 1, 1.0, 1.0, true)];
    assert!(error_metrics(&only_failed, Rc, 1).is_none());
}

#[test]
fn noise_free_single_candidate_regulates() {
    let mut cfg = small(15, 1);
    cfg.candidates.truncate(1);
    cfg.controllers = vec![Controller::Arc];
    cfg.system.process_noise = vec![vec![Entry::Value(0.0); 2]; 2];
    cfg.system.output_noise = vec![vec![Entry::Value(1e-10)]];
    let res = run(cfg);
    let t = &res.runs[0].trajectories[0];
    assert!(t.failure.is_none(), "{:?}", t.failure);
    let last = t.steps.last().unwrap();
    assert!(last.state.norm() < 1e-2 * t.steps[0].state.norm(), "{}", last.state);
    assert!(last.estimate_error < 1e-6, "{}", last.estimate_error);
    assert!(t.steps.iter().all(|s| s.candidates[0].weight == 1.0));
}

#[test]
fn without_learning_the_set_dominates_the_propagated_set() {
    let mut cfg = small(20, 5);
    cfg.controllers = vec![Controller::Rc];
    let exp = Experiment::new(cfg).unwrap();
    let res = run_experiment(&exp);
    for t in res.trajectories(Controller::Rc) {
        assert!(t.failure.is_none());
        for w in t.steps.windows(2) {
            let a = exp.system.a(w[0].k, &exp.true_theta).unwrap();
            let (p0, p1) = (&w[0].candidates[0].shape, &w[1].candidates[0].shape);
            let gap = p1 - &a * p0 * a.transpose();
            let min = gap.symmetric_eigenvalues().min();
            assert!(min >= -1e-9 * p1.norm(), "k = {}: {min}", w[1].k);
        }
    }
}
