//! Scene, map and dataset types together with their invariant checks.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::degrade::DegradationConfig;
use crate::geometry::{convex_contains, normalize_angle, OrientedBox, Pose2D, Vec2};
use crate::SceneError;

/// Seconds between frames.
pub const FRAME_DT_S: f64 = 0.1;
/// Default scene length: 25 s at 10 Hz.
pub const SCENE_FRAMES: usize = 250;
pub const SCENE_SECONDS: f64 = 25.0;

/// Typical sedan footprint used for the ego when nothing else is configured.
pub const DEFAULT_EGO_EXTENT: Extent = Extent {
    length: 4.87,
    width: 1.85,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    Vehicle,
    Pedestrian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentObservation {
    pub agent_id: AgentId,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub speed: f64,
    pub class: AgentClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: usize,
    pub time_s: f64,
    pub ego: Pose2D,
    pub ego_extent: Extent,
    pub agents: Vec<AgentObservation>,
}

impl Frame {
    pub fn time_for_index(index: usize) -> f64 {
        index as f64 * FRAME_DT_S
    }

    pub fn ego_box(&self) -> OrientedBox {
        OrientedBox::new(self.ego, self.ego_extent.length, self.ego_extent.width)
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentObservation> {
        self.agents.iter().find(|a| a.agent_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub centerline: Vec<Vec2>,
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Bounds {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticMap {
    pub lanes: Vec<Lane>,
    pub crosswalks: Vec<Vec<Vec2>>,
    pub bounds: Bounds,
}

/// Quality of the perception tracks stored in a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "config")]
pub enum Quality {
    AvGrade,
    Degraded(DegradationConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub quality: Quality,
    pub generation_seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

impl Provenance {
    pub fn av_grade(seed: u64) -> Self {
        Self {
            quality: Quality::AvGrade,
            generation_seed: seed,
            tags: Vec::new(),
        }
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub dt_s: f64,
    pub frames: Vec<Frame>,
    pub map: SemanticMap,
    pub provenance: Provenance,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Ids of every agent observed anywhere in the scene, sorted.
    pub fn agent_ids(&self) -> Vec<AgentId> {
        let mut ids: Vec<AgentId> = self
            .frames
            .iter()
            .flat_map(|f| f.agents.iter().map(|a| a.agent_id))
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        ids.sort();
        ids
    }

    /// Copy of the scene with every observation of `id` removed.
    pub fn without_agent(&self, id: AgentId) -> Scene {
        let mut s = self.clone();
        for f in &mut s.frames {
            f.agents.retain(|a| a.agent_id != id);
        }
        s
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.dt_s != FRAME_DT_S {
            return Err(invariant("dt_s = 0.1", format!("found {}", self.dt_s)));
        }
        if self.frames.is_empty() {
            return Err(invariant("frames non-empty", "scene has no frames".into()));
        }
        self.map.validate()?;
        let first = self.frames[0].index;
        let mut tracks: HashMap<AgentId, (AgentClass, f64, f64)> = HashMap::new();
        for (i, f) in self.frames.iter().enumerate() {
            if f.index != first + i {
                return Err(invariant(
                    "frames contiguous",
                    format!("position {i} holds index {} (expected {})", f.index, first + i),
                ));
            }
            if f.time_s != Frame::time_for_index(f.index) {
                return Err(invariant(
                    "time_s = index x 0.1",
                    format!("frame {} has time {}", f.index, f.time_s),
                ));
            }
            check_pose(&f.ego, "ego pose")?;
            if !(f.ego_extent.length > 0.0 && f.ego_extent.width > 0.0) {
                return Err(invariant("ego extent positive", format!("frame {}", f.index)));
            }
            let mut seen = HashSet::new();
            for a in &f.agents {
                if !seen.insert(a.agent_id) {
                    return Err(invariant(
                        "agent ids unique per frame",
                        format!("agent {} repeated in frame {}", a.agent_id, f.index),
                    ));
                }
                check_pose(&a.bbox.center, "agent pose")?;
                if !a.bbox.is_valid() {
                    return Err(invariant(
                        "box extents positive",
                        format!("agent {} in frame {}", a.agent_id, f.index),
                    ));
                }
                if !(a.speed.is_finite() && a.speed >= 0.0) {
                    return Err(invariant(
                        "speed finite and non-negative",
                        format!("agent {} in frame {}: {}", a.agent_id, f.index, a.speed),
                    ));
                }
                let entry = tracks
                    .entry(a.agent_id)
                    .or_insert((a.class, a.bbox.length, a.bbox.width));
                if *entry != (a.class, a.bbox.length, a.bbox.width) {
                    return Err(invariant(
                        "agent id refers to one physical agent",
                        format!("agent {} changes class or extent at frame {}", a.agent_id, f.index),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn check_pose(p: &Pose2D, what: &str) -> Result<(), SceneError> {
    if !p.is_finite() {
        return Err(invariant("poses finite", format!("{what} {p:?}")));
    }
    if normalize_angle(p.yaw) != p.yaw {
        return Err(invariant("yaw normalized to (-pi, pi]", format!("{what} yaw {}", p.yaw)));
    }
    Ok(())
}

fn invariant(name: &'static str, detail: String) -> SceneError {
    SceneError::Invariant {
        invariant: name,
        detail,
    }
}

impl SemanticMap {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.bounds.min.x < self.bounds.max.x && self.bounds.min.y < self.bounds.max.y) {
            return Err(invariant("map bounds non-empty", format!("{:?}", self.bounds)));
        }
        for (i, lane) in self.lanes.iter().enumerate() {
            if lane.centerline.len() < 2 {
                return Err(invariant("lane polyline has >= 2 points", format!("lane {i}")));
            }
            if !(lane.width > 0.0) {
                return Err(invariant("lane width > 0", format!("lane {i}")));
            }
            if let Some(p) = lane.centerline.iter().find(|p| !self.bounds.contains(**p)) {
                return Err(invariant("geometry within bounds", format!("lane {i} point {p:?}")));
            }
        }
        for (i, cw) in self.crosswalks.iter().enumerate() {
            if cw.len() < 3 || !is_convex(cw) {
                return Err(invariant("crosswalk is a convex polygon", format!("crosswalk {i}")));
            }
            if let Some(p) = cw.iter().find(|p| !self.bounds.contains(**p)) {
                return Err(invariant(
                    "geometry within bounds",
                    format!("crosswalk {i} point {p:?}"),
                ));
            }
        }
        Ok(())
    }

    pub fn crosswalk_contains(&self, p: Vec2) -> bool {
        self.crosswalks.iter().any(|cw| convex_contains(cw, p))
    }
}

fn is_convex(poly: &[Vec2]) -> bool {
    let n = poly.len();
    let mut sign = 0.0f64;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let z = (b - a).cross(c - b);
        if z != 0.0 {
            if sign == 0.0 {
                sign = z.signum();
            } else if z.signum() != sign {
                return false;
            }
        }
    }
    sign != 0.0
}

/// A set of scene files sharing one provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scene_paths: Vec<PathBuf>,
    pub hours_equivalent: f64,
    pub provenance: Quality,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetManifest {
    pub fn new(scene_paths: Vec<PathBuf>, provenance: Quality, seed: u64) -> Self {
        let hours_equivalent = hours_equivalent(scene_paths.len());
        Self {
            scene_paths,
            hours_equivalent,
            provenance,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let expected = hours_equivalent(self.scene_paths.len());
        if (self.hours_equivalent - expected).abs() > 1e-9 {
            return Err(invariant(
                "hours-equivalent consistent with scene count",
                format!(
                    "{} scenes imply {expected} h, manifest says {}",
                    self.scene_paths.len(),
                    self.hours_equivalent
                ),
            ));
        }
        Ok(())
    }
}

pub fn hours_equivalent(n_scenes: usize) -> f64 {
    n_scenes as f64 * SCENE_SECONDS / 3600.0
}
