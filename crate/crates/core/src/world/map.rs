//! Procedural semantic maps.
//!
//! Lane 0 is always the ego lane; lanes are listed in their direction of
//! travel. Crosswalks are rectangles spanning the road.

use rand::Rng;

use crate::geometry::Vec2;
use crate::polyline::Polyline;
use crate::scene::{Bounds, Lane, SemanticMap};
use crate::seeding::{self, tag};
use crate::world::{MapStyle, WorldSpec};
use crate::WorldError;

/// Arclength along the ego lane where the ego starts.
pub const EGO_START_S: f64 = 150.0;
const ROAD_LENGTH: f64 = 600.0;
const CROSSWALK_DEPTH: f64 = 4.0;
const SIDEWALK_MARGIN: f64 = 2.0;

pub fn build_map(spec: &WorldSpec) -> Result<SemanticMap, WorldError> {
    spec.validate()?;
    let mut rng = seeding::stream(spec.seed, &[tag::MAP]);
    let w = spec.lane_width;
    let (lanes, crosswalks) = match spec.style {
        MapStyle::StraightRoad => {
            let base = Polyline::new(vec![Vec2::new(-EGO_START_S, 0.0), Vec2::new(ROAD_LENGTH - EGO_START_S, 0.0)]);
            road(&base, spec.lanes, w, &mut rng)
        }
        MapStyle::CurvedRoad => {
            let base = curved_base(&mut rng);
            road(&base, spec.lanes, w, &mut rng)
        }
        MapStyle::FourWayIntersection => intersection(spec.lanes.max(2), w, &mut rng),
    };
    let lanes: Vec<Lane> = lanes
        .into_iter()
        .map(|p| Lane {
            centerline: p.points().to_vec(),
            width: w,
        })
        .collect();
    let bounds = bounds_of(lanes.iter().flat_map(|l| l.centerline.iter()).chain(crosswalks.iter().flatten()));
    let map = SemanticMap {
        lanes,
        crosswalks,
        bounds,
    };
    map.validate()
        .map_err(|e| WorldError::Config(format!("generated map failed validation: {e}")))?;
    Ok(map)
}

fn bounds_of<'a>(pts: impl Iterator<Item = &'a Vec2>) -> Bounds {
    let (mut lo, mut hi) = (Vec2::new(f64::MAX, f64::MAX), Vec2::new(f64::MIN, f64::MIN));
    for p in pts {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let m = 20.0;
    Bounds {
        min: Vec2::new(lo.x - m, lo.y - m),
        max: Vec2::new(hi.x + m, hi.y + m),
    }
}

/// Smoothly winding centerline with curvature at most 0.02 1/m.
fn curved_base<R: Rng>(rng: &mut R) -> Polyline {
    let amp: f64 = rng.random_range(0.006..0.02);
    let wavelength: f64 = rng.random_range(150.0..300.0);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let step = 2.0;
    let mut pts = vec![Vec2::new(0.0, 0.0)];
    let mut heading = 0.0f64;
    let mut p = Vec2::new(0.0, 0.0);
    let n = (ROAD_LENGTH / step) as usize;
    for i in 0..n {
        let s = (i as f64 + 0.5) * step;
        heading += amp * (std::f64::consts::TAU * s / wavelength + phase).sin() * step;
        p = p + Vec2::from_angle(heading) * step;
        pts.push(p);
    }
    // Put the ego start at the origin.
    let base = Polyline::new(pts);
    let origin = base.point_at(EGO_START_S);
    Polyline::new(base.points().iter().map(|q| *q - origin).collect())
}

fn crosswalk_rect(center: Vec2, along: Vec2, across: Vec2, half_span: f64) -> Vec<Vec2> {
    let a = along * (0.5 * CROSSWALK_DEPTH);
    let c = across * half_span;
    vec![center - a - c, center + a - c, center + a + c, center - a + c]
}

/// Parallel lanes along `base`; even lanes follow it, odd lanes run against it.
fn road<R: Rng>(base: &Polyline, n_lanes: usize, w: f64, rng: &mut R) -> (Vec<Polyline>, Vec<Vec<Vec2>>) {
    let lanes = (0..n_lanes)
        .map(|i| {
            let l = if i == 0 { base.clone() } else { base.offset(i as f64 * w) };
            if i % 2 == 1 {
                l.reversed()
            } else {
                l
            }
        })
        .collect();
    let n_cross = rng.random_range(0..=2usize);
    let mut positions: Vec<f64> = Vec::new();
    while positions.len() < n_cross {
        let s = rng.random_range(EGO_START_S + 40.0..EGO_START_S + 230.0);
        if positions.iter().all(|p| (p - s).abs() > 40.0) {
            positions.push(s);
        }
    }
    positions.sort_by(f64::total_cmp);
    let road_mid = 0.5 * (n_lanes as f64 - 1.0) * w;
    let half_span = 0.5 * n_lanes as f64 * w + SIDEWALK_MARGIN;
    let crosswalks = positions
        .iter()
        .map(|&s| {
            let t = Vec2::from_angle(base.heading_at(s));
            let center = base.point_at(s) + t.perp() * road_mid;
            crosswalk_rect(center, t, t.perp(), half_span)
        })
        .collect();
    (lanes, crosswalks)
}

fn intersection<R: Rng>(n_lanes: usize, w: f64, rng: &mut R) -> (Vec<Polyline>, Vec<Vec<Vec2>>) {
    let xi: f64 = rng.random_range(80.0..160.0);
    let ew = Polyline::new(vec![Vec2::new(-EGO_START_S, 0.0), Vec2::new(ROAD_LENGTH - EGO_START_S, 0.0)]);
    let mut lanes: Vec<Polyline> = (0..n_lanes)
        .map(|i| {
            let l = if i == 0 { ew.clone() } else { ew.offset(i as f64 * w) };
            if i % 2 == 1 {
                l.reversed()
            } else {
                l
            }
        })
        .collect();
    let ns_len = 250.0;
    let road_mid_y = 0.5 * (n_lanes as f64 - 1.0) * w;
    lanes.push(Polyline::new(vec![
        Vec2::new(xi + 0.5 * w, road_mid_y - ns_len),
        Vec2::new(xi + 0.5 * w, road_mid_y + ns_len),
    ]));
    lanes.push(Polyline::new(vec![
        Vec2::new(xi - 0.5 * w, road_mid_y + ns_len),
        Vec2::new(xi - 0.5 * w, road_mid_y - ns_len),
    ]));
    let ew_half = 0.5 * n_lanes as f64 * w;
    let ns_half = w;
    let ex = Vec2::new(1.0, 0.0);
    let ey = Vec2::new(0.0, 1.0);
    let off_ew = ns_half + SIDEWALK_MARGIN + 0.5 * CROSSWALK_DEPTH;
    let off_ns = ew_half + SIDEWALK_MARGIN + 0.5 * CROSSWALK_DEPTH;
    let crosswalks = vec![
        crosswalk_rect(Vec2::new(xi - off_ew, road_mid_y), ex, ey, ew_half + SIDEWALK_MARGIN),
        crosswalk_rect(Vec2::new(xi + off_ew, road_mid_y), ex, ey, ew_half + SIDEWALK_MARGIN),
        crosswalk_rect(Vec2::new(xi, road_mid_y - off_ns), ey, ex, ns_half + SIDEWALK_MARGIN),
        crosswalk_rect(Vec2::new(xi, road_mid_y + off_ns), ey, ex, ns_half + SIDEWALK_MARGIN),
    ];
    (lanes, crosswalks)
}
