//! Start-pose perturbation with kinematically feasible recovery targets.
//!
//! The ego start pose is shifted sideways and rotated; the new target is the
//! path a kinematic bicycle drives when steering back onto the expert path,
//! covering the expert's distance per step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use sensorgrade_core::geometry::to_local;
use sensorgrade_core::polyline::Polyline;
use sensorgrade_core::{normalize_angle, Pose2D, Vec2};

use crate::trajectory::{Trajectory, HORIZON};
use crate::PlannerError;

/// Distance scale of the critically damped path-following controller.
pub const RECOVERY_LENGTH_M: f64 = 6.0;
const PATH_EXTENSION_M: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbParams {
    pub probability: f64,
    /// Lateral offsets are drawn from `U(-max, max)` meters.
    pub max_lateral_m: f64,
    /// Heading offsets are drawn from `U(-max, max)` degrees.
    pub max_heading_deg: f64,
    pub wheelbase_m: f64,
    pub max_curvature: f64,
}

impl Default for PerturbParams {
    fn default() -> Self {
        Self {
            probability: 0.5,
            max_lateral_m: 1.0,
            max_heading_deg: 20.0,
            wheelbase_m: 2.7,
            max_curvature: 0.2,
        }
    }
}

impl PerturbParams {
    pub fn disabled() -> Self {
        Self {
            probability: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(PlannerError::Config(format!(
                "perturbation probability must be in [0, 1], got {}",
                self.probability
            )));
        }
        if !(self.max_curvature > 0.0) || !(self.wheelbase_m > 0.0) {
            return Err(PlannerError::Config("max_curvature and wheelbase_m must be positive".into()));
        }
        if !(self.max_lateral_m >= 0.0) || !(self.max_heading_deg >= 0.0) {
            return Err(PlannerError::Config("perturbation ranges must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    /// Ego pose the raster is rendered at.
    pub pose: Pose2D,
    /// Target in the frame of `pose`.
    pub target: Trajectory,
    /// World poses of the simulated recovery, one per step.
    pub path: Vec<Pose2D>,
    pub applied: bool,
}

fn unperturbed(ego: &Pose2D, future: &[Vec2]) -> Result<Perturbed, PlannerError> {
    let target = Trajectory::new(future[..HORIZON].iter().map(|p| to_local(*p, ego)).collect())?;
    Ok(Perturbed {
        pose: *ego,
        target,
        path: Vec::new(),
        applied: false,
    })
}

/// Expert path through the current position and the future points,
/// extended straight beyond both ends.
fn reference_path(ego: &Pose2D, future: &[Vec2]) -> Option<Polyline> {
    let mut pts = vec![ego.position()];
    for p in future {
        if p.distance(*pts.last().unwrap()) > 1e-6 {
            pts.push(*p);
        }
    }
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len();
    let tail_dir = pts[n - 1] - pts[n - 2];
    let tail = pts[n - 1] + tail_dir * (PATH_EXTENSION_M / tail_dir.norm());
    let head_dir = pts[1] - pts[0];
    let head = pts[0] - head_dir * (PATH_EXTENSION_M / head_dir.norm());
    let mut all = vec![head];
    all.extend(pts);
    all.push(tail);
    Some(Polyline::new(all))
}

/// Drives a kinematic bicycle from `start` back toward the expert path, one
/// constant-steering arc per step. Returns `None` if the controller would
/// need more than the allowed curvature.
pub fn simulate_recovery(
    start: &Pose2D,
    ego: &Pose2D,
    future: &[Vec2],
    params: &PerturbParams,
) -> Option<Vec<Pose2D>> {
    let future = &future[..HORIZON];
    let Some(path) = reference_path(ego, future) else {
        return Some(vec![*start; HORIZON]);
    };
    let k_lat = 1.0 / (RECOVERY_LENGTH_M * RECOVERY_LENGTH_M);
    let k_head = 2.0 / RECOVERY_LENGTH_M;
    let mut prev = ego.position();
    let mut pose = *start;
    let mut out = Vec::with_capacity(HORIZON);
    for p in future {
        let ds = p.distance(prev);
        prev = *p;
        let proj = path.project(pose.position());
        let heading_err = normalize_angle(pose.yaw - path.heading_at(proj.s));
        let kappa_cmd = path.curvature_at(proj.s) - k_lat * proj.lateral - k_head * heading_err;
        let steer = (params.wheelbase_m * kappa_cmd).atan();
        let kappa = steer.tan() / params.wheelbase_m;
        if kappa.abs() > params.max_curvature {
            return None;
        }
        pose = advance(&pose, kappa, ds);
        out.push(pose);
    }
    Some(out)
}

/// Exact constant-curvature arc of length `ds`.
pub fn advance(pose: &Pose2D, kappa: f64, ds: f64) -> Pose2D {
    let yaw1 = pose.yaw + kappa * ds;
    if (kappa * ds).abs() < 1e-9 {
        let d = pose.heading() * ds;
        return Pose2D::new(pose.x + d.x, pose.y + d.y, yaw1);
    }
    let (s0, c0) = pose.yaw.sin_cos();
    let (s1, c1) = yaw1.sin_cos();
    Pose2D::new(pose.x + (s1 - s0) / kappa, pose.y - (c1 - c0) / kappa, yaw1)
}

/// Applies a specific lateral (meters, left positive) and heading (radians)
/// offset. Zero offsets return the expert target untouched.
pub fn perturb_with_offsets(
    ego: &Pose2D,
    future: &[Vec2],
    lateral: f64,
    heading: f64,
    params: &PerturbParams,
) -> Result<Perturbed, PlannerError> {
    if future.len() < HORIZON {
        return Err(PlannerError::Config(format!(
            "perturbation needs {HORIZON} future points, got {}",
            future.len()
        )));
    }
    if lateral == 0.0 && heading == 0.0 {
        return unperturbed(ego, future);
    }
    let start = ego.compose(&Pose2D::new(0.0, lateral, heading));
    match simulate_recovery(&start, ego, future, params) {
        Some(path) => {
            let target = Trajectory::new(path.iter().map(|p| to_local(p.position(), &start)).collect())?;
            Ok(Perturbed {
                pose: start,
                target,
                path,
                applied: true,
            })
        }
        None => unperturbed(ego, future),
    }
}

/// With probability `params.probability` draws offsets and perturbs;
/// otherwise returns the expert target. Always consumes the same number of
/// draws so that sample streams stay aligned.
pub fn perturb_sample<R: Rng + ?Sized>(
    ego: &Pose2D,
    future: &[Vec2],
    params: &PerturbParams,
    rng: &mut R,
) -> Result<Perturbed, PlannerError> {
    let apply = rng.random::<f64>() < params.probability;
    let u_lat: f64 = rng.random();
    let u_head: f64 = rng.random();
    if !apply {
        return perturb_with_offsets(ego, future, 0.0, 0.0, params);
    }
    let lateral = (2.0 * u_lat - 1.0) * params.max_lateral_m;
    let heading = ((2.0 * u_head - 1.0) * params.max_heading_deg).to_radians();
    perturb_with_offsets(ego, future, lateral, heading, params)
}
