//! Simulated lower-grade perception: range and field-of-view clipping plus
//! IoU-calibrated positional noise and rotational noise on agent tracks.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::geometry::{normalize_angle, to_local, to_world, Vec2};
use crate::scene::{AgentId, Quality, Scene};
use crate::seeding::{self, tag};
use crate::SceneError;

/// Maximum sensing distance, center to center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SensorRange {
    Unlimited,
    Meters(f64),
}

impl SensorRange {
    pub fn contains(&self, distance: f64) -> bool {
        match *self {
            SensorRange::Unlimited => true,
            SensorRange::Meters(r) => distance <= r,
        }
    }

    pub fn meters(&self) -> Option<f64> {
        match *self {
            SensorRange::Unlimited => None,
            SensorRange::Meters(r) => Some(r),
        }
    }

    fn tighter(self, other: SensorRange) -> SensorRange {
        match (self, other) {
            (SensorRange::Unlimited, o) | (o, SensorRange::Unlimited) => o,
            (SensorRange::Meters(a), SensorRange::Meters(b)) => SensorRange::Meters(a.min(b)),
        }
    }
}

impl fmt::Display for SensorRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorRange::Unlimited => f.write_str("unlimited"),
            SensorRange::Meters(r) => write!(f, "{r}"),
        }
    }
}

impl std::str::FromStr for SensorRange {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "unlimited" | "full" | "inf" => Ok(SensorRange::Unlimited),
            other => other
                .parse::<f64>()
                .map(SensorRange::Meters)
                .map_err(|_| format!("invalid range `{other}`")),
        }
    }
}

impl Serialize for SensorRange {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SensorRange::Unlimited => s.serialize_str("unlimited"),
            SensorRange::Meters(r) => s.serialize_f64(*r),
        }
    }
}

impl<'de> Deserialize<'de> for SensorRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = SensorRange;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a range in meters or \"unlimited\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<SensorRange, E> {
                Ok(SensorRange::Meters(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<SensorRange, E> {
                Ok(SensorRange::Meters(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<SensorRange, E> {
                Ok(SensorRange::Meters(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<SensorRange, E> {
                v.parse().map_err(E::custom)
            }
            fn visit_unit<E: de::Error>(self) -> Result<SensorRange, E> {
                Ok(SensorRange::Unlimited)
            }
        }
        d.deserialize_any(V)
    }
}

/// The four quality knobs of a simulated sensor grade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    pub range_m: SensorRange,
    pub fov_deg: f64,
    pub target_iou: f64,
    pub rot_noise_max_rad: f64,
    pub seed: u64,
    /// Draw rotational offsets per observation instead of per track.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub rot_noise_per_frame: bool,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self::av_grade()
    }
}

impl DegradationConfig {
    pub fn av_grade() -> Self {
        Self {
            range_m: SensorRange::Unlimited,
            fov_deg: 360.0,
            target_iou: 1.0,
            rot_noise_max_rad: 0.0,
            seed: 0,
            rot_noise_per_frame: false,
        }
    }

    pub fn with_range(mut self, range_m: SensorRange) -> Self {
        self.range_m = range_m;
        self
    }

    pub fn with_fov(mut self, fov_deg: f64) -> Self {
        self.fov_deg = fov_deg;
        self
    }

    pub fn with_accuracy(mut self, target_iou: f64, rot_noise_max_rad: f64) -> Self {
        self.target_iou = target_iou;
        self.rot_noise_max_rad = rot_noise_max_rad;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |what: &'static str, detail: String| SceneError::Config { what, detail };
        if let SensorRange::Meters(r) = self.range_m {
            if !(r > 0.0 && r.is_finite()) {
                return Err(bad("range_m > 0", format!("{r}")));
            }
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 360.0) {
            return Err(bad("0 < fov_deg <= 360", format!("{}", self.fov_deg)));
        }
        if !(self.target_iou > 0.0 && self.target_iou <= 1.0) {
            return Err(bad("0 < target_iou <= 1", format!("{}", self.target_iou)));
        }
        if !(self.rot_noise_max_rad >= 0.0 && self.rot_noise_max_rad.is_finite()) {
            return Err(bad("rot_noise_max_rad >= 0", format!("{}", self.rot_noise_max_rad)));
        }
        Ok(())
    }

    /// True when every knob is at its AV-grade value.
    pub fn is_identity(&self) -> bool {
        self.range_m == SensorRange::Unlimited
            && self.fov_deg >= 360.0
            && self.target_iou >= 1.0
            && self.rot_noise_max_rad == 0.0
    }

    fn merged_with(&self, newer: &DegradationConfig) -> DegradationConfig {
        DegradationConfig {
            range_m: self.range_m.tighter(newer.range_m),
            fov_deg: self.fov_deg.min(newer.fov_deg),
            target_iou: if newer.target_iou < 1.0 { newer.target_iou } else { self.target_iou },
            rot_noise_max_rad: if newer.rot_noise_max_rad > 0.0 {
                newer.rot_noise_max_rad
            } else {
                self.rot_noise_max_rad
            },
            seed: newer.seed,
            rot_noise_per_frame: newer.rot_noise_per_frame || self.rot_noise_per_frame,
        }
    }
}

fn record(scene: &mut Scene, applied: &DegradationConfig) {
    let merged = match &scene.provenance.quality {
        Quality::AvGrade => applied.clone(),
        Quality::Degraded(prev) => prev.merged_with(applied),
    };
    scene.provenance.quality = Quality::Degraded(merged);
}

fn retain_agents(scene: &Scene, keep: impl Fn(Vec2) -> bool) -> Scene {
    let mut out = scene.clone();
    for f in &mut out.frames {
        let ego = f.ego;
        f.agents.retain(|a| keep(to_local(a.bbox.center.position(), &ego)));
    }
    out
}

/// Drops every observation whose center is farther than `range` from ego.
pub fn clip_range(scene: &Scene, range: SensorRange) -> Scene {
    if range == SensorRange::Unlimited {
        return scene.clone();
    }
    let mut out = retain_agents(scene, |local| range.contains(local.norm()));
    record(&mut out, &DegradationConfig::av_grade().with_range(range));
    out
}

/// Drops every observation whose bearing from ego's heading exceeds `fov_deg / 2`.
pub fn clip_fov(scene: &Scene, fov_deg: f64) -> Scene {
    if fov_deg >= 360.0 {
        return scene.clone();
    }
    let half = 0.5 * fov_deg;
    let mut out = retain_agents(scene, |local| local.angle().abs().to_degrees() <= half);
    record(&mut out, &DegradationConfig::av_grade().with_fov(fov_deg));
    out
}

/// Largest longitudinal offset at which `target_iou` stays reachable with no
/// lateral offset.
pub fn max_longitudinal_offset(length: f64, target_iou: f64) -> f64 {
    length * (1.0 - target_iou) / (1.0 + target_iou)
}

/// Draws an agent-frame offset `(dx, dy)` whose same-size IoU with the
/// original box is exactly `target_iou`: `dx` is uniform on its feasible
/// support and `dy` is solved so the overlap area matches.
pub fn iou_offsets<R: Rng + ?Sized>(length: f64, width: f64, target_iou: f64, rng: &mut R) -> (f64, f64) {
    let q = target_iou;
    let dx_max = max_longitudinal_offset(length, q);
    let u: f64 = rng.random();
    let sign_draw: bool = rng.random();
    if dx_max <= 0.0 {
        return (0.0, 0.0);
    }
    let dx = (2.0 * u - 1.0) * dx_max;
    let inter = 2.0 * length * width * q / (1.0 + q);
    let dy_abs = (width - inter / (length - dx.abs())).clamp(0.0, width);
    let dy = if sign_draw { dy_abs } else { -dy_abs };
    (dx, dy)
}

/// Per-track extents keyed by agent id (first observation wins).
fn track_extents(scene: &Scene) -> HashMap<AgentId, (f64, f64)> {
    let mut ext = HashMap::new();
    for f in &scene.frames {
        for a in &f.agents {
            ext.entry(a.agent_id).or_insert((a.bbox.length, a.bbox.width));
        }
    }
    ext
}

/// Shifts each agent track by one IoU-calibrated offset in the agent frame.
pub fn apply_positional_noise(scene: &Scene, target_iou: f64, seed: u64) -> Scene {
    if target_iou >= 1.0 {
        return scene.clone();
    }
    let offsets: HashMap<AgentId, (f64, f64)> = track_extents(scene)
        .into_iter()
        .map(|(id, (l, w))| {
            let mut rng = seeding::stream(seed, &[tag::POSITIONAL_NOISE, id.0 as u64]);
            (id, iou_offsets(l, w, target_iou, &mut rng))
        })
        .collect();
    let mut out = scene.clone();
    for f in &mut out.frames {
        for a in &mut f.agents {
            let (dx, dy) = offsets[&a.agent_id];
            let c = to_world(Vec2::new(dx, dy), &a.bbox.center);
            a.bbox.center.x = c.x;
            a.bbox.center.y = c.y;
        }
    }
    record(
        &mut out,
        &DegradationConfig::av_grade().with_accuracy(target_iou, 0.0).with_seed(seed),
    );
    out
}

/// Adds `rot_noise_max_rad * N(0, 1)` to agent yaws, one draw per track by
/// default or one per observation when `per_frame` is set.
pub fn apply_rotational_noise(scene: &Scene, rot_noise_max_rad: f64, seed: u64, per_frame: bool) -> Scene {
    if rot_noise_max_rad == 0.0 {
        return scene.clone();
    }
    let draw = |parts: &[u64]| -> f64 {
        let mut rng = seeding::stream(seed, parts);
        let z: f64 = rng.sample(StandardNormal);
        rot_noise_max_rad * z
    };
    let per_track: HashMap<AgentId, f64> = if per_frame {
        HashMap::new()
    } else {
        track_extents(scene)
            .into_keys()
            .map(|id| (id, draw(&[tag::ROTATIONAL_NOISE, id.0 as u64])))
            .collect()
    };
    let mut out = scene.clone();
    for f in &mut out.frames {
        let index = f.index as u64;
        for a in &mut f.agents {
            let theta = if per_frame {
                draw(&[tag::ROTATIONAL_NOISE, a.agent_id.0 as u64, index])
            } else {
                per_track[&a.agent_id]
            };
            a.bbox.center.yaw = normalize_angle(a.bbox.center.yaw + theta);
        }
    }
    let mut cfg = DegradationConfig::av_grade().with_accuracy(1.0, rot_noise_max_rad).with_seed(seed);
    cfg.rot_noise_per_frame = per_frame;
    record(&mut out, &cfg);
    out
}

/// Positional noise, rotational noise, range clip, FoV clip, in that order.
/// Clipping acts on the noised positions.
pub fn degrade(scene: &Scene, config: &DegradationConfig) -> Result<Scene, SceneError> {
    config.validate()?;
    if config.is_identity() {
        return Ok(scene.clone());
    }
    let s = apply_positional_noise(scene, config.target_iou, config.seed);
    let s = apply_rotational_noise(&s, config.rot_noise_max_rad, config.seed, config.rot_noise_per_frame);
    let s = clip_range(&s, config.range_m);
    let mut s = clip_fov(&s, config.fov_deg);
    s.provenance.quality = match &scene.provenance.quality {
        Quality::AvGrade => Quality::Degraded(config.clone()),
        Quality::Degraded(prev) => Quality::Degraded(prev.merged_with(config)),
    };
    Ok(s)
}
