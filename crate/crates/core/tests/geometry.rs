use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensorgrade_core::degrade::{iou_offsets, max_longitudinal_offset};
use sensorgrade_core::geometry::{to_local, to_world};
use sensorgrade_core::{boxes_overlap, iou_same_size, normalize_angle, OrientedBox, Pose2D, Vec2};

/// Points spaced at most `step` apart along the box outline.
fn outline(b: &OrientedBox, step: f64) -> Vec<Vec2> {
    let c = b.corners();
    let mut pts = Vec::new();
    for i in 0..4 {
        let (p, q) = (c[i], c[(i + 1) % 4]);
        let n = (p.distance(q) / step).ceil() as usize;
        pts.extend((0..n).map(|k| p + (q - p) * (k as f64 / n as f64)));
    }
    pts
}

/// Point-sampling overlap oracle. Returns the verdict and a clearance: the
/// deepest sampled penetration when overlapping, else the smallest gap.
fn sampled_overlap(a: &OrientedBox, b: &OrientedBox, step: f64) -> (bool, f64) {
    let mut depth = 0.0f64;
    let mut gap = f64::INFINITY;
    for (x, y) in [(a, b), (b, a)] {
        for p in outline(x, step) {
            let d = y.signed_distance(p);
            depth = depth.max(-d);
            gap = gap.min(d);
        }
    }
    if gap <= 0.0 {
        (true, depth)
    } else {
        (false, gap)
    }
}

fn random_box<R: Rng>(rng: &mut R, spread: f64) -> OrientedBox {
    OrientedBox::new(
        Pose2D::new(
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
            rng.random_range(-3.2..3.2),
        ),
        rng.random_range(0.5..6.0),
        rng.random_range(0.5..3.0),
    )
}

#[test]
fn sat_agrees_with_point_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut checked, mut overlapping) = (0, 0);
    while checked < 1000 {
        let a = random_box(&mut rng, 1.0);
        let b = random_box(&mut rng, 4.0);
        let (truth, clearance) = sampled_overlap(&a, &b, 5e-4);
        if clearance <= 1e-3 {
            continue;
        }
        assert_eq!(boxes_overlap(&a, &b), truth, "{a:?} {b:?}");
        checked += 1;
        overlapping += truth as usize;
    }
    assert!(overlapping > 200 && overlapping < 800, "{overlapping} overlapping pairs");
}

/// Pixel-count IoU of two axis-aligned boxes at pixel size `h`, computed per
/// axis because the overlap of aligned rectangles is separable.
fn pixel_iou(length: f64, width: f64, dx: f64, dy: f64, h: f64) -> f64 {
    let count = |lo: f64, hi: f64| -> f64 {
        let first = (lo / h - 0.5).ceil();
        let last = (hi / h - 0.5).floor();
        (last - first + 1.0).max(0.0)
    };
    let a = count(-0.5 * length, 0.5 * length) * count(-0.5 * width, 0.5 * width);
    let b = count(dx - 0.5 * length, dx + 0.5 * length) * count(dy - 0.5 * width, dy + 0.5 * width);
    let ix = count((dx - 0.5 * length).max(-0.5 * length), (dx + 0.5 * length).min(0.5 * length));
    let iy = count((dy - 0.5 * width).max(-0.5 * width), (dy + 0.5 * width).min(0.5 * width));
    let inter = ix * iy;
    inter / (a + b - inter)
}

#[test]
fn iou_offsets_hit_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let l = rng.random_range(1.0..8.0);
        let w = rng.random_range(0.5..3.0);
        let q = rng.random_range(0.05..0.95);
        let (dx, dy) = iou_offsets(l, w, q, &mut rng);
        assert!(dx.abs() <= max_longitudinal_offset(l, q) + 1e-12);
        assert!((iou_same_size(l, w, dx, dy) - q).abs() < 1e-9);
        assert!((pixel_iou(l, w, dx, dy, 1e-3) - q).abs() < 0.01);
    }
}

#[test]
fn iou_examples() {
    assert_eq!(iou_same_size(4.0, 2.0, 0.0, 0.0), 1.0);
    assert!((iou_same_size(4.0, 2.0, 2.0, 0.0) - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(iou_same_size(4.0, 2.0, 5.0, 0.0), 0.0);
    assert!((max_longitudinal_offset(4.0, 0.5) - 4.0 / 3.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn local_world_round_trip(
        x in -1e3..1e3f64, y in -1e3..1e3f64, yaw in -10.0..10.0f64,
        px in -500.0..500.0f64, py in -500.0..500.0f64,
    ) {
        let frame = Pose2D::new(x, y, yaw);
        let p = Vec2::new(px, py);
        let back = to_world(to_local(p, &frame), &frame);
        prop_assert!(back.distance(p) < 1e-9);
    }
}

proptest! {
    #[test]
    fn normalized_angle_range(theta in -100.0..100.0f64) {
        let n = normalize_angle(theta);
        prop_assert!(n > -std::f64::consts::PI && n <= std::f64::consts::PI);
        prop_assert!((n.sin() - theta.sin()).abs() < 1e-9 && (n.cos() - theta.cos()).abs() < 1e-9);
    }

    #[test]
    fn overlap_is_symmetric_and_rigid(
        seed in any::<u64>(), tx in -50.0..50.0f64, ty in -50.0..50.0f64, rot in -3.0..3.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_box(&mut rng, 1.0);
        let b = random_box(&mut rng, 4.0);
        prop_assert_eq!(boxes_overlap(&a, &b), boxes_overlap(&b, &a));
        let (_, clearance) = sampled_overlap(&a, &b, 1e-2);
        prop_assume!(clearance > 0.05);
        let t = Pose2D::new(tx, ty, rot);
        let moved = |o: &OrientedBox| OrientedBox::new(t.compose(&o.center), o.length, o.width);
        prop_assert_eq!(boxes_overlap(&a, &b), boxes_overlap(&moved(&a), &moved(&b)));
    }

    #[test]
    fn box_overlaps_itself(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_box(&mut rng, 10.0);
        prop_assert!(boxes_overlap(&a, &a));
    }
}
