use evoskip::harness::{
    bound_check_experiment, forward_bound_check, generate_trajectory, perturbation_experiment,
    persistence_experiment, Propagation, TrajectoryConfig,
};
use evoskip::{AttentionEngine, Matrix, OrderingStrategy, TileGeometry, Trajectory, SKIP_DISABLED};

fn frob_diff(a: &Matrix<f32>, b: &Matrix<f32>) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn frob(a: &Matrix<f32>) -> f64 {
    a.to_f64().frobenius_norm()
}

fn small(steps: usize, seed: u64) -> TrajectoryConfig {
    TrajectoryConfig {
        steps,
        n: 128,
        d: 16,
        seed,
        ..TrajectoryConfig::default()
    }
}

fn engine() -> AttentionEngine {
    AttentionEngine::new(TileGeometry::new(128, 16, 16).unwrap(), OrderingStrategy::Linear)
}

fn roles(traj: &Trajectory, t: usize) -> [&Matrix<f32>; 3] {
    let op = traj.operand(t, 0, 0);
    [op.q(), op.k(), op.v()]
}

#[test]
fn generation_is_deterministic() {
    let cfg = small(3, 99);
    assert_eq!(generate_trajectory(&cfg).unwrap(), generate_trajectory(&cfg).unwrap());
    let other = generate_trajectory(&TrajectoryConfig { seed: 100, ..cfg }).unwrap();
    assert_ne!(generate_trajectory(&small(3, 99)).unwrap(), other);
}

#[test]
fn jitter_free_endpoints_are_orthogonal() {
    let cfg = TrajectoryConfig { steps: 2, rho: 0.0, locality: 0.0, ..small(2, 5) };
    let traj = generate_trajectory(&cfg).unwrap();
    for (a, b) in roles(&traj, 0).into_iter().zip(roles(&traj, 1)) {
        let dot: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
        assert!(dot.abs() / (frob(a) * frob(b)) < 1e-5);
        assert!((frob(a) - frob(b)).abs() / frob(a) < 1e-5);
    }
}

#[test]
fn smooth_path_increment_matches_closed_form() {
    let steps = 50;
    let increment = 2.0 * (std::f64::consts::FRAC_PI_2 / (steps - 1) as f64 / 2.0).sin();
    let exact = generate_trajectory(&TrajectoryConfig { rho: 0.0, locality: 0.0, ..small(steps, 8) }).unwrap();
    let positional = generate_trajectory(&TrajectoryConfig { rho: 0.0, ..small(steps, 8) }).unwrap();
    for t in 0..steps - 1 {
        for (a, b) in roles(&exact, t).into_iter().zip(roles(&exact, t + 1)) {
            let rel = frob_diff(b, a) / frob(a);
            assert!((rel - increment).abs() < 1e-5, "t={t}: {rel} vs {increment}");
        }
        // a time-independent positional component only enlarges the norm
        for (a, b) in roles(&positional, t).into_iter().zip(roles(&positional, t + 1)) {
            assert!(frob_diff(b, a) / frob(a) <= increment + 1e-5);
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(generate_trajectory(&TrajectoryConfig { rho: 1.5, ..small(2, 0) }).is_err());
    assert!(generate_trajectory(&TrajectoryConfig { n: 0, ..small(2, 0) }).is_err());
    assert!(generate_trajectory(&TrajectoryConfig { locality: -1.0, ..small(2, 0) }).is_err());
}

#[test]
fn stationary_persistence_is_exact() {
    let traj = generate_trajectory(&TrajectoryConfig { rho: 0.0, stationary: true, ..small(10, 1) }).unwrap();
    let report = persistence_experiment(&engine(), &traj, 4.0, &[1, 4, 8]).unwrap();
    assert!(!report.points.is_empty());
    for p in &report.points {
        assert_eq!(p.persisted, Some(1.0), "t={} delta={}", p.t, p.delta);
    }
}

#[test]
fn disabled_threshold_has_no_persistence() {
    let traj = generate_trajectory(&small(4, 1)).unwrap();
    let report = persistence_experiment(&engine(), &traj, SKIP_DISABLED, &[1]).unwrap();
    for p in &report.points {
        assert_eq!(p.persisted, None);
        assert_eq!(p.base_rate, 0.0);
    }
    assert!(persistence_experiment(&engine(), &traj, 4.0, &[0]).is_err());
    assert!(persistence_experiment(&engine(), &traj, 4.0, &[4]).is_err());
}

#[test]
fn drift_persistence_beats_base_rate() {
    let traj = generate_trajectory(&TrajectoryConfig { rho: 0.02, ..small(10, 3) }).unwrap();
    let report = persistence_experiment(&engine(), &traj, 4.0, &[1, 4, 8]).unwrap();
    assert!(report.incoherent_points().is_empty());
}

#[test]
fn perturbation_trivial_cases() {
    let steps = 6;
    let traj = generate_trajectory(&small(steps, 4)).unwrap();
    let prop = Propagation::default();
    let none = perturbation_experiment(&engine(), &traj, &[0, 3, 5], SKIP_DISABLED, &prop).unwrap();
    assert!(none.iter().all(|p| p.eta_final == 0.0 && p.eta_inject == 0.0));
    let last = perturbation_experiment(&engine(), &traj, &[steps - 1], 2.0, &prop).unwrap();
    assert!(last[0].eta_inject > 0.0);
    assert_eq!(last[0].eta_final, last[0].eta_inject);
    assert!(perturbation_experiment(&engine(), &traj, &[steps], 2.0, &prop).is_err());
}

#[test]
fn bound_check_examples() {
    let p = [0.25, 0.25, 0.5];
    let q = [0.5, 0.5, 0.0];
    let v = Matrix::from_vec(3, 2, vec![1.0, 0.0, -1.0, 2.0, 0.5, 0.5]).unwrap();
    let w = v.map(|x| x * 0.5 + 0.1);
    let same = forward_bound_check(&p, &p, &v, &v).unwrap();
    assert!(same.holds);
    assert_eq!((same.lhs, same.rhs, same.slack), (0.0, 0.0, 0.0));
    let fixed_v = forward_bound_check(&p, &q, &v, &v).unwrap();
    assert!(fixed_v.holds && fixed_v.lhs > 0.0);
    assert!(forward_bound_check(&p, &q, &v, &w).unwrap().holds);
    assert!(forward_bound_check(&[0.5, 0.6, -0.1], &q, &v, &v).is_err());
    assert!(forward_bound_check(&[0.5, 0.4, 0.0], &q, &v, &v).is_err());
    assert!(forward_bound_check(&p, &q[..2], &v, &v).is_err());
}

#[test]
fn randomized_bound_checks_hold() {
    let summary = bound_check_experiment(2_000, 17).unwrap();
    assert_eq!(summary.trials, 2_000);
    assert_eq!(summary.violations, 0);
    assert!(summary.min_slack >= 0.0 || summary.min_relative_slack > -1e-12);
}
