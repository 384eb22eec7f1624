use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sensorgrade_core::geometry::to_local;
use sensorgrade_core::polyline::Polyline;
use sensorgrade_core::{normalize_angle, Pose2D, Vec2};
use sensorgrade_planner::perturb::{perturb_sample, perturb_with_offsets, PerturbParams};
use sensorgrade_planner::trajectory::HORIZON;

/// Expert at constant speed on a circle of the given curvature (0 = straight).
fn arc_future(speed: f64, curvature: f64) -> (Pose2D, Vec<Vec2>) {
    let ego = Pose2D::new(10.0, 5.0, 0.3);
    let future = (1..=HORIZON).map(|k| arc_point(&ego, curvature, speed * 0.1 * k as f64)).collect();
    (ego, future)
}

fn arc_point(ego: &Pose2D, curvature: f64, s: f64) -> Vec2 {
    let local = if curvature.abs() < 1e-12 {
        Vec2::new(s, 0.0)
    } else {
        let th = curvature * s;
        Vec2::new(th.sin() / curvature, (1.0 - th.cos()) / curvature)
    };
    sensorgrade_core::geometry::to_world(local, ego)
}

/// Heading change per meter between consecutive poses.
fn discrete_curvatures(start: &Pose2D, path: &[Pose2D]) -> Vec<f64> {
    let mut prev = *start;
    let mut out = Vec::new();
    for p in path {
        let ds = p.position().distance(prev.position());
        if ds > 1e-9 {
            out.push(normalize_angle(p.yaw - prev.yaw) / ds);
        }
        prev = *p;
    }
    out
}

#[test]
fn zero_offsets_return_expert_target() {
    let (ego, future) = arc_future(9.0, 0.02);
    let p = perturb_with_offsets(&ego, &future, 0.0, 0.0, &PerturbParams::default()).unwrap();
    assert!(!p.applied);
    let expected: Vec<Vec2> = future.iter().map(|q| to_local(*q, &ego)).collect();
    assert_eq!(p.target.points, expected);
}

#[test]
fn probability_zero_is_identity() {
    let (ego, future) = arc_future(9.0, 0.0);
    let params = PerturbParams {
        probability: 0.0,
        ..PerturbParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let p = perturb_sample(&ego, &future, &params, &mut rng).unwrap();
        assert!(!p.applied);
        assert_eq!(p.pose, ego);
    }
}

#[test]
fn lateral_error_decreases_monotonically() {
    for speed in [3.0, 8.0, 14.0] {
        for curvature in [0.0, 0.01, -0.02] {
            for lateral in [1.0, -1.0] {
                let (ego, future) = arc_future(speed, curvature);
                let p = perturb_with_offsets(&ego, &future, lateral, 0.0, &PerturbParams::default()).unwrap();
                assert!(p.applied);
                // The original path, sampled densely well past the horizon.
                let line = Polyline::new((-200..=800).map(|i| arc_point(&ego, curvature, 0.05 * i as f64)).collect());
                let mut prev = line.distance_to(p.pose.position());
                assert!((prev - 1.0).abs() < 1e-3);
                for pose in &p.path {
                    let d = line.distance_to(pose.position());
                    assert!(d < prev + 1e-9, "speed {speed} curvature {curvature}: {d} after {prev}");
                    prev = d;
                }
            }
        }
    }
}

#[test]
fn infeasible_recovery_falls_back() {
    let (ego, future) = arc_future(10.0, 0.0);
    let params = PerturbParams {
        max_curvature: 0.01,
        ..PerturbParams::default()
    };
    let p = perturb_with_offsets(&ego, &future, 0.0, 0.35, &params).unwrap();
    assert!(!p.applied);
    assert_eq!(p.pose, ego);
}

#[test]
fn short_future_rejected() {
    let (ego, future) = arc_future(10.0, 0.0);
    assert!(perturb_with_offsets(&ego, &future[..5], 0.5, 0.0, &PerturbParams::default()).is_err());
}

proptest! {
    #[test]
    fn accepted_paths_respect_curvature_bound(
        speed in 0.5f64..15.0,
        curvature in -0.05f64..0.05,
        seed in any::<u64>(),
    ) {
        let (ego, future) = arc_future(speed, curvature);
        let params = PerturbParams { probability: 1.0, ..PerturbParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = perturb_sample(&ego, &future, &params, &mut rng).unwrap();
        if p.applied {
            prop_assert_eq!(p.path.len(), HORIZON);
            for k in discrete_curvatures(&p.pose, &p.path) {
                prop_assert!(k.abs() <= params.max_curvature + 1e-6, "curvature {}", k);
            }
            // Step lengths follow the expert speed profile.
            let mut prev = p.pose.position();
            for pose in &p.path {
                prop_assert!((pose.position().distance(prev) - speed * 0.1).abs() < 1e-3 * speed.max(1.0));
                prev = pose.position();
            }
        } else {
            prop_assert_eq!(p.pose, ego);
        }
    }

    #[test]
    fn same_seed_same_perturbation(seed in any::<u64>()) {
        let (ego, future) = arc_future(7.0, 0.01);
        let params = PerturbParams::default();
        let a = perturb_sample(&ego, &future, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = perturb_sample(&ego, &future, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}
