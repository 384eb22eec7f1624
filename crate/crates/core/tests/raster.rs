use proptest::prelude::*;
use sensorgrade_core::degrade::clip_range;
use sensorgrade_core::geometry::to_world;
use sensorgrade_core::raster::{rasterize, rasterize_masked, Raster, RasterConfig};
use sensorgrade_core::scene::{Bounds, Lane, DEFAULT_EGO_EXTENT, FRAME_DT_S};
use sensorgrade_core::world::{generate_scene, ExpertParams, MapStyle, WorldSpec};
use sensorgrade_core::{
    AgentClass, AgentId, AgentObservation, Frame, OrientedBox, Pose2D, Provenance, Scene, SemanticMap, SensorRange,
    Vec2,
};

fn generated(style: MapStyle, seed: u64) -> Scene {
    let spec = WorldSpec {
        style,
        traffic_density: 10.0,
        crossing_probability: 0.8,
        ..WorldSpec::default()
    };
    generate_scene(&spec, &ExpertParams::default(), seed).unwrap()
}

/// Three frames of a stationary ego at `ego` with one agent box per frame.
fn single_agent_scene(ego: Pose2D, agent: OrientedBox) -> Scene {
    let frames = (0..3)
        .map(|i| Frame {
            index: i,
            time_s: Frame::time_for_index(i),
            ego,
            ego_extent: DEFAULT_EGO_EXTENT,
            agents: vec![AgentObservation {
                agent_id: AgentId(1),
                bbox: agent,
                speed: 0.0,
                class: AgentClass::Vehicle,
            }],
        })
        .collect();
    Scene {
        scene_id: "raster-test".into(),
        dt_s: FRAME_DT_S,
        frames,
        map: SemanticMap {
            lanes: vec![Lane {
                centerline: vec![Vec2::new(-300.0, 0.0), Vec2::new(300.0, 0.0)],
                width: 3.5,
            }],
            crosswalks: Vec::new(),
            bounds: Bounds {
                min: Vec2::new(-400.0, -400.0),
                max: Vec2::new(400.0, 400.0),
            },
        },
        provenance: Provenance::av_grade(0),
    }
}

/// Applies one rigid motion to every world-frame quantity of a scene.
fn transform_scene(s: &Scene, t: &Pose2D) -> Scene {
    let mut out = s.clone();
    let p = |v: Vec2| to_world(v, t);
    for f in &mut out.frames {
        f.ego = t.compose(&f.ego);
        for a in &mut f.agents {
            a.bbox.center = t.compose(&a.bbox.center);
        }
    }
    for l in &mut out.map.lanes {
        l.centerline = l.centerline.iter().map(|v| p(*v)).collect();
    }
    for c in &mut out.map.crosswalks {
        *c = c.iter().map(|v| p(*v)).collect();
    }
    let corners = [
        s.map.bounds.min,
        s.map.bounds.max,
        Vec2::new(s.map.bounds.min.x, s.map.bounds.max.y),
        Vec2::new(s.map.bounds.max.x, s.map.bounds.min.y),
    ]
    .map(p);
    out.map.bounds = Bounds {
        min: Vec2::new(
            corners.iter().map(|c| c.x).fold(f64::MAX, f64::min),
            corners.iter().map(|c| c.y).fold(f64::MAX, f64::min),
        ),
        max: Vec2::new(
            corners.iter().map(|c| c.x).fold(f64::MIN, f64::max),
            corners.iter().map(|c| c.y).fold(f64::MIN, f64::max),
        ),
    };
    out
}

fn pixel_world(r: &Raster, reference: &Pose2D, row: usize, col: usize) -> Vec2 {
    let half = 0.5 * r.size() as f64;
    let res = r.config.resolution;
    let local = Vec2::new((half - row as f64 - 0.5) * res, (half - col as f64 - 0.5) * res);
    to_world(local, reference)
}

#[test]
fn channel_layout_and_binary_values() {
    let s = generated(MapStyle::FourWayIntersection, 2);
    let cfg = RasterConfig::default();
    let r = rasterize(&s, 50, &cfg).unwrap();
    assert_eq!(r.channels(), 8);
    assert_eq!(r.data.len(), 8 * 256 * 256);
    assert!(r.data.iter().all(|v| *v == 0.0 || *v == 1.0));
    // The current ego box sits on the centre pixel.
    assert_eq!(r.get(r.ego_channel(2), 128, 128), 1.0);
    assert_eq!(r, rasterize(&s, 50, &cfg).unwrap());
}

#[test]
fn agent_outside_extent_leaves_no_pixels() {
    let s = single_agent_scene(
        Pose2D::new(0.0, 0.0, 0.3),
        OrientedBox::new(Pose2D::new(-70.0, 68.0, 1.0), 4.0, 2.0),
    );
    let r = rasterize(&s, 2, &RasterConfig::default()).unwrap();
    for k in 0..3 {
        assert_eq!(r.count_set(r.agent_channel(k)), 0);
    }
}

#[test]
fn masking_only_agent_clears_agent_channels() {
    let s = single_agent_scene(Pose2D::identity(), OrientedBox::new(Pose2D::new(10.0, 3.0, 0.2), 4.0, 2.0));
    let cfg = RasterConfig::default();
    let r = rasterize_masked(&s, 2, AgentId(1), &cfg).unwrap();
    for k in 0..3 {
        assert_eq!(r.count_set(r.agent_channel(k)), 0);
    }
    assert!(rasterize(&s, 2, &cfg).unwrap().count_set(r.agent_channel(2)) > 0);
}

#[test]
fn masking_equals_deleting_track() {
    let s = generated(MapStyle::StraightRoad, 8);
    let cfg = RasterConfig::default();
    let ids = s.agent_ids();
    assert!(!ids.is_empty());
    for id in ids.iter().take(6) {
        let masked = rasterize_masked(&s, 120, *id, &cfg).unwrap();
        let deleted = rasterize(&s.without_agent(*id), 120, &cfg).unwrap();
        assert_eq!(masked, deleted);
    }
}

#[test]
fn range_clipped_scene_has_no_far_agent_pixels() {
    let s = generated(MapStyle::StraightRoad, 12);
    let clipped = clip_range(&s, SensorRange::Meters(20.0));
    let cfg = RasterConfig::default();
    for t in [10, 100, 200] {
        let r = rasterize(&clipped, t, &cfg).unwrap();
        let reference = clipped.frames[t].ego;
        for k in 0..3 {
            let frame = &clipped.frames[t + k - 2];
            let c = r.agent_channel(k);
            for row in 0..256 {
                for col in 0..256 {
                    if r.get(c, row, col) == 0.0 {
                        continue;
                    }
                    let p = pixel_world(&r, &reference, row, col);
                    let owner = frame.agents.iter().any(|a| {
                        a.bbox.signed_distance(p) <= 1e-9
                            && a.bbox.center.position().distance(frame.ego.position()) <= 20.0
                    });
                    assert!(owner, "pixel {row},{col} of channel {c} at frame {t}");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rigid_motion_leaves_raster_unchanged(
        seed in 0u64..200, tx in -300.0..300.0f64, ty in -300.0..300.0f64, rot in -3.1..3.1f64,
        style in prop_oneof![Just(MapStyle::CurvedRoad), Just(MapStyle::FourWayIntersection)],
    ) {
        let s = generated(style, seed);
        let moved = transform_scene(&s, &Pose2D::new(tx, ty, rot));
        let cfg = RasterConfig { size_px: 128, resolution: 0.43, history_frames: 3 };
        for t in [2, 90, 249] {
            let a = rasterize(&s, t, &cfg).unwrap();
            let b = rasterize(&moved, t, &cfg).unwrap();
            let differing = a.data.iter().zip(&b.data).filter(|(x, y)| x != y).count();
            prop_assert_eq!(differing, 0, "frame {}", t);
        }
    }

    #[test]
    fn aligned_box_pixel_count(
        length in 1.0..12.0f64, width in 0.5..4.0f64,
        ax in -15.0..15.0f64, ay in -15.0..15.0f64, yaw in -3.1..3.1f64,
        res in 0.2..1.0f64,
    ) {
        let ego = Pose2D::new(5.0, -2.0, yaw);
        let center = to_world(Vec2::new(ax, ay), &ego);
        let s = single_agent_scene(ego, OrientedBox::new(Pose2D::new(center.x, center.y, yaw), length, width));
        let cfg = RasterConfig { size_px: 256, resolution: res, history_frames: 1 };
        let r = rasterize(&s, 2, &cfg).unwrap();
        let n = r.count_set(r.agent_channel(0)) as f64;
        let (nl, nw) = (length / res, width / res);
        prop_assert!(n >= (nl - 1.0).max(0.0) * (nw - 1.0).max(0.0) && n <= (nl + 1.0) * (nw + 1.0), "{n} pixels for {nl}x{nw}");
    }
}
