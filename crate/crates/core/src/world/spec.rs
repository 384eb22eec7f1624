use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::WorldError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapStyle {
    StraightRoad,
    CurvedRoad,
    FourWayIntersection,
}

impl MapStyle {
    pub fn as_str(&self) -> &'static str {
        match self {
            MapStyle::StraightRoad => "straight-road",
            MapStyle::CurvedRoad => "curved-road",
            MapStyle::FourWayIntersection => "four-way-intersection",
        }
    }
}

impl fmt::Display for MapStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MapStyle {
    type Err = WorldError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "straight-road" => Ok(MapStyle::StraightRoad),
            "curved-road" => Ok(MapStyle::CurvedRoad),
            "four-way-intersection" => Ok(MapStyle::FourWayIntersection),
            other => Err(WorldError::Config(format!("unsupported map style `{other}`"))),
        }
    }
}

impl Serialize for MapStyle {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for MapStyle {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_lead_probability() -> f64 {
    0.8
}

fn default_lane_width() -> f64 {
    3.5
}

fn default_stop_event_probability() -> f64 {
    0.6
}

/// Parameters of the synthetic world a dataset is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub style: MapStyle,
    pub lanes: usize,
    /// Expected number of background vehicles per scene.
    pub traffic_density: f64,
    /// Probability that a given crosswalk sees pedestrians.
    pub crossing_probability: f64,
    pub speed_limit: f64,
    pub seed: u64,
    /// Probability that a slower vehicle leads the ego in its lane.
    #[serde(default = "default_lead_probability")]
    pub lead_probability: f64,
    /// Probability that the leader performs a stop-and-go manoeuvre.
    #[serde(default = "default_stop_event_probability")]
    pub stop_event_probability: f64,
    #[serde(default = "default_lane_width")]
    pub lane_width: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            style: MapStyle::StraightRoad,
            lanes: 2,
            traffic_density: 6.0,
            crossing_probability: 0.3,
            speed_limit: 10.0,
            seed: 0,
            lead_probability: default_lead_probability(),
            stop_event_probability: default_stop_event_probability(),
            lane_width: default_lane_width(),
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), WorldError> {
        let err = |m: String| Err(WorldError::Config(m));
        if self.lanes == 0 || self.lanes > 6 {
            return err(format!("lanes must be in 1..=6, got {}", self.lanes));
        }
        if !(self.traffic_density >= 0.0 && self.traffic_density.is_finite()) {
            return err(format!("traffic_density must be >= 0, got {}", self.traffic_density));
        }
        for (name, p) in [
            ("crossing_probability", self.crossing_probability),
            ("lead_probability", self.lead_probability),
            ("stop_event_probability", self.stop_event_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if !(self.speed_limit > 0.0 && self.speed_limit.is_finite()) {
            return err(format!("speed_limit must be > 0, got {}", self.speed_limit));
        }
        if !(self.lane_width > 0.0) {
            return err(format!("lane_width must be > 0, got {}", self.lane_width));
        }
        Ok(())
    }
}

/// Intelligent-driver-model parameters of the scripted expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertParams {
    pub desired_speed: f64,
    pub max_accel: f64,
    pub comfortable_decel: f64,
    pub min_gap: f64,
    pub headway_s: f64,
    pub crosswalk_stop_margin: f64,
}

impl Default for ExpertParams {
    fn default() -> Self {
        Self {
            desired_speed: 10.0,
            max_accel: 1.5,
            comfortable_decel: 2.0,
            min_gap: 2.0,
            headway_s: 1.5,
            crosswalk_stop_margin: 1.0,
        }
    }
}

impl ExpertParams {
    pub fn validate(&self) -> Result<(), WorldError> {
        let all = [
            self.desired_speed,
            self.max_accel,
            self.comfortable_decel,
            self.min_gap,
            self.headway_s,
            self.crosswalk_stop_margin,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(WorldError::Config(format!("expert parameters must all be positive: {self:?}")))
        }
    }
}
