use evoskip::bench::measure_run;
use evoskip::calibration::{dense_outputs, relative_l1_error_slices};
use evoskip::harness::{generate_trajectory, TrajectoryConfig};
use evoskip::{
    calibrate, relative_l1_error, segment_bounds, AttentionEngine, Error, ErrorBoundSpec, Execution, Matrix,
    OrderingStrategy, SkipMode, ThresholdSchedule, TileGeometry, Trajectory, SKIP_DISABLED,
};

fn drift(steps: usize) -> Trajectory {
    generate_trajectory(&TrajectoryConfig {
        steps,
        n: 128,
        d: 16,
        seed: 31,
        ..TrajectoryConfig::default()
    })
    .unwrap()
}

fn naive_l1_ratio(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            num += (a.get(r, c) - b.get(r, c)).abs();
            den += b.get(r, c).abs();
        }
    }
    num / den
}

#[test]
fn relative_error_examples() {
    let dense = Matrix::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
    let sparse = Matrix::from_vec(2, 2, vec![1.0, 2.0, 1.0, 1.0]).unwrap();
    assert_eq!(relative_l1_error(&dense, &dense).unwrap(), 0.0);
    assert_eq!(relative_l1_error(&sparse, &dense).unwrap(), 0.25);
    let zero = Matrix::<f64>::zeros(2, 2);
    assert!(matches!(relative_l1_error(&sparse, &zero), Err(Error::UndefinedRatio)));
    assert!(matches!(relative_l1_error(&sparse, &Matrix::zeros(2, 3)), Err(Error::Shape(_))));
}

#[test]
fn relative_error_matches_double_loop() {
    let traj = drift(2);
    let dense = dense_outputs(&traj, Execution::Sequential);
    let a = &dense[0][0];
    let b = &dense[1][0];
    assert!((relative_l1_error(a, b).unwrap() - naive_l1_ratio(a, b)).abs() < 1e-12);
    for c in [0.0, 0.5, 1.0, 2.5] {
        let scaled = b.map(|x| c * x);
        assert!((relative_l1_error(&scaled, b).unwrap() - (c - 1.0f64).abs()).abs() < 1e-12);
    }
}

#[test]
fn segment_examples() {
    let bounds = segment_bounds(&ErrorBoundSpec::new(0.075, 0.01, 6).unwrap());
    let expected = [0.065, 0.065, 0.075, 0.075, 0.085, 0.085];
    for (b, e) in bounds.iter().zip(expected) {
        assert!((b - e).abs() < 1e-15);
    }
    assert_eq!(segment_bounds(&ErrorBoundSpec::new(0.1, 0.0, 5).unwrap()), vec![0.1; 5]);
    let seven = segment_bounds(&ErrorBoundSpec::new(0.5, 0.25, 7).unwrap());
    assert_eq!(seven, vec![0.25, 0.25, 0.5, 0.5, 0.75, 0.75, 0.75]);
    assert!(ErrorBoundSpec::new(0.01, 0.01, 3).is_err());
    assert!(ErrorBoundSpec::new(0.1, -0.01, 3).is_err());
}

#[test]
fn disabled_grid_gives_trivial_schedule() {
    let traj = drift(4);
    let geom = TileGeometry::new(128, 16, 16).unwrap();
    let spec = ErrorBoundSpec::new(0.075, 0.01, 4).unwrap();
    let cal = calibrate(&traj, geom, &[SKIP_DISABLED], &spec, OrderingStrategy::Linear).unwrap();
    assert_eq!(cal.schedule.eps(), &[SKIP_DISABLED; 4]);
    // only 32-bit score rounding separates the tiled run from the oracle
    assert!(cal.eta.iter().all(|&e| e < 1e-5), "{:?}", cal.eta);
    assert!(cal.flagged.is_empty());
}

#[test]
fn vacuous_bound_picks_smallest_value() {
    let traj = drift(4);
    let geom = TileGeometry::new(128, 16, 16).unwrap();
    let spec = ErrorBoundSpec::new(1e6 + 1.0, 1.0, 4).unwrap();
    let cal = calibrate(&traj, geom, &[1.0, 2.0, 4.0], &spec, OrderingStrategy::Radial).unwrap();
    assert_eq!(cal.schedule.eps(), &[1.0; 4]);
}

#[test]
fn calibrated_schedule_holds_on_rerun() {
    let steps = 8;
    let traj = drift(steps);
    let geom = TileGeometry::new(128, 16, 16).unwrap();
    let spec = ErrorBoundSpec::new(0.075, 0.01, steps).unwrap();
    let grid = [2.0, 4.0, 6.0, 8.0, 12.0];
    let cal = calibrate(&traj, geom, &grid, &spec, OrderingStrategy::Linear).unwrap();
    assert_eq!(cal.bounds, segment_bounds(&spec));
    assert!(cal.schedule.eps().iter().all(|e| grid.contains(e)));

    let engine = AttentionEngine::new(geom, OrderingStrategy::Linear);
    let dense = dense_outputs(&traj, Execution::Sequential);
    let rerun = measure_run(&engine, &traj, SkipMode::qk(1.0).unwrap(), Some(&cal.schedule), 1, Some(&dense)).unwrap();
    for t in 0..steps {
        assert_eq!(rerun.eta_per_t[t], cal.eta[t], "t={t}");
        if !cal.flagged.contains(&t) {
            assert!(rerun.eta_per_t[t] <= cal.bounds[t]);
        }
    }
    for (t, row) in cal.sweep.iter().enumerate() {
        let chosen = grid.iter().position(|&e| e == cal.schedule.eps()[t]).unwrap();
        assert_eq!(row[chosen], cal.eta[t], "t={t}");
    }
}

#[test]
fn impossible_bound_is_flagged() {
    let traj = drift(3);
    let geom = TileGeometry::new(128, 16, 16).unwrap();
    let spec = ErrorBoundSpec::new(1e-12, 0.0, 3).unwrap();
    let cal = calibrate(&traj, geom, &[0.0, 0.5], &spec, OrderingStrategy::Linear).unwrap();
    assert_eq!(cal.flagged, vec![0, 1, 2]);
    assert_eq!(cal.schedule.eps(), &[0.5; 3]);
}

#[test]
fn calibration_validation() {
    let traj = drift(3);
    let geom = TileGeometry::new(128, 16, 16).unwrap();
    let spec = ErrorBoundSpec::new(0.075, 0.01, 3).unwrap();
    let lin = OrderingStrategy::Linear;
    assert!(calibrate(&traj, geom, &[], &spec, lin).is_err());
    assert!(calibrate(&traj, geom, &[4.0, 2.0], &spec, lin).is_err());
    let wrong = ErrorBoundSpec::new(0.075, 0.01, 4).unwrap();
    assert!(calibrate(&traj, geom, &[4.0], &wrong, lin).is_err());
    assert!(ThresholdSchedule::new(vec![1.0, -1.0]).is_err());
    assert!(ThresholdSchedule::new(vec![]).is_err());
    let json: Result<ThresholdSchedule, _> = serde_json::from_str("[1.0, -2.0]");
    assert!(json.is_err());
}

#[test]
fn slice_error_pools_all_slices() {
    let traj = drift(1);
    let dense = dense_outputs(&traj, Execution::Parallel);
    let doubled: Vec<Matrix<f64>> = dense[0].iter().map(|m| m.map(|x| 2.0 * x)).collect();
    assert!((relative_l1_error_slices(&doubled, &dense[0]).unwrap() - 1.0).abs() < 1e-12);
}
