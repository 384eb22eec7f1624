//! Open-loop ADE, closed-loop rollouts and agent influence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sensorgrade_core::geometry::{to_local, to_world};
use sensorgrade_core::polyline::Polyline;
use sensorgrade_core::raster::render;
use sensorgrade_core::{boxes_overlap, AgentId, OrientedBox, Pose2D, Scene, Vec2};

use crate::data::{expert_future, expert_target, logged_ego_history, valid_frames};
use crate::model::PlannerModel;
use crate::trajectory::Trajectory;
use crate::PlannerError;

/// Influence above this is "very influential".
pub const VERY_INFLUENTIAL: f64 = 0.1;
/// Influence at or above this (and at most [`VERY_INFLUENTIAL`]) is "slightly influential".
pub const SLIGHTLY_INFLUENTIAL: f64 = 0.01;
pub const DEFAULT_DEVIATION_LIMIT_M: f64 = 4.0;
/// Steps shorter than this keep the previous yaw.
const MIN_YAW_STEP_M: f64 = 0.01;

/// What a planner sees when asked for a trajectory.
pub struct PlanQuery<'a> {
    pub scene: &'a Scene,
    pub frame: usize,
    /// Pose the plan is made from; the raster is centred here.
    pub pose: Pose2D,
    /// Ego poses over the history window, oldest first, ending at `pose`.
    pub ego_history: &'a [Pose2D],
    pub mask: Option<AgentId>,
}

pub trait Policy: Sync {
    fn history_frames(&self) -> usize;
    fn plan(&self, query: &PlanQuery) -> Result<Trajectory, PlannerError>;
}

impl Policy for PlannerModel {
    fn history_frames(&self) -> usize {
        self.raster.history_frames
    }

    fn plan(&self, q: &PlanQuery) -> Result<Trajectory, PlannerError> {
        let extent = q.scene.frames[q.frame].ego_extent;
        let raster = render(q.scene, q.frame, &q.pose, q.ego_history, extent, q.mask, &self.raster)?;
        self.forward(&raster)
    }
}

/// Replays the logged expert future from whatever pose it is asked at.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpertReplay;

impl Policy for ExpertReplay {
    fn history_frames(&self) -> usize {
        1
    }

    fn plan(&self, q: &PlanQuery) -> Result<Trajectory, PlannerError> {
        Trajectory::new(expert_future(q.scene, q.frame).iter().map(|p| to_local(*p, &q.pose)).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepRecord {
    pub scene_id: String,
    pub frame: usize,
    /// Mean per-point distance over the horizon.
    pub mean_error_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AdeReport {
    pub ade_m: f64,
    pub n_steps: usize,
    pub steps: Vec<StepRecord>,
}

/// Predicts from every valid expert pose (every `frame_stride`-th) and
/// averages the distance to the expert future over all (step, horizon) pairs.
pub fn open_loop_ade<P: Policy>(policy: &P, scenes: &[Scene], frame_stride: usize) -> Result<AdeReport, PlannerError> {
    let h = policy.history_frames();
    let jobs: Vec<(usize, usize)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(si, s)| valid_frames(s.len(), h, frame_stride).into_iter().map(move |f| (si, f)))
        .collect();
    if jobs.is_empty() {
        return Err(PlannerError::EmptySamples);
    }
    let steps: Vec<StepRecord> = jobs
        .par_iter()
        .map(|&(si, frame)| {
            let scene = &scenes[si];
            let history = logged_ego_history(scene, frame, h);
            let pred = policy.plan(&PlanQuery {
                scene,
                frame,
                pose: scene.frames[frame].ego,
                ego_history: &history,
                mask: None,
            })?;
            let target = expert_target(scene, frame);
            let err: f64 = pred.points.iter().zip(&target.points).map(|(a, b)| a.distance(*b)).sum();
            Ok(StepRecord {
                scene_id: scene.scene_id.clone(),
                frame,
                mean_error_m: err / pred.points.len() as f64,
            })
        })
        .collect::<Result<_, PlannerError>>()?;
    let ade = steps.iter().map(|s| s.mean_error_m).sum::<f64>() / steps.len() as f64;
    Ok(AdeReport {
        ade_m: ade,
        n_steps: steps.len(),
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Collision,
    Deviation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub scene_id: String,
    pub steps_simulated: usize,
    pub collided: bool,
    pub termination: Termination,
    pub trace: Vec<Pose2D>,
}

fn expert_path(scene: &Scene) -> Result<Polyline, Vec2> {
    let mut pts: Vec<Vec2> = Vec::new();
    for f in &scene.frames {
        let p = f.ego.position();
        if pts.last().is_none_or(|q| q.distance(p) > 1e-9) {
            pts.push(p);
        }
    }
    if pts.len() < 2 {
        Err(pts[0])
    } else {
        Ok(Polyline::new(pts))
    }
}

/// Executes the first planned step, replans at the next frame against the
/// logged agents, and stops on collision, deviation or scene end.
pub fn closed_loop<P: Policy>(
    policy: &P,
    scene: &Scene,
    deviation_limit_m: f64,
) -> Result<RolloutResult, PlannerError> {
    if !(deviation_limit_m > 0.0) {
        return Err(PlannerError::Config(format!(
            "deviation limit must be positive, got {deviation_limit_m}"
        )));
    }
    let h = policy.history_frames();
    let path = expert_path(scene);
    let deviation = |p: Vec2| match &path {
        Ok(line) => line.distance_to(p),
        Err(point) => point.distance(p),
    };
    let mut trace = vec![scene.frames[0].ego];
    let mut termination = Termination::Completed;
    for k in 0..scene.len() - 1 {
        let history: Vec<Pose2D> = (0..h).map(|i| trace[(k + i + 1).saturating_sub(h)]).collect();
        let pose = trace[k];
        let plan = policy.plan(&PlanQuery {
            scene,
            frame: k,
            pose,
            ego_history: &history,
            mask: None,
        })?;
        let next = to_world(plan.points[0], &pose);
        let step = next - pose.position();
        let yaw = if step.norm() >= MIN_YAW_STEP_M { step.angle() } else { pose.yaw };
        let new_pose = Pose2D::new(next.x, next.y, yaw);
        trace.push(new_pose);
        let frame = &scene.frames[k + 1];
        let ego_box = OrientedBox::new(new_pose, frame.ego_extent.length, frame.ego_extent.width);
        if frame.agents.iter().any(|a| boxes_overlap(&ego_box, &a.bbox)) {
            termination = Termination::Collision;
            break;
        }
        if deviation(next) > deviation_limit_m {
            termination = Termination::Deviation;
            break;
        }
    }
    Ok(RolloutResult {
        scene_id: scene.scene_id.clone(),
        steps_simulated: trace.len() - 1,
        collided: termination == Termination::Collision,
        termination,
        trace,
    })
}

/// Rolls out every scene.
pub fn closed_loop_all<P: Policy>(
    policy: &P,
    scenes: &[Scene],
    deviation_limit_m: f64,
) -> Result<Vec<RolloutResult>, PlannerError> {
    scenes
        .par_iter()
        .map(|s| closed_loop(policy, s, deviation_limit_m))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionSummary {
    pub n_collisions: usize,
    pub n_steps: usize,
    pub rate: f64,
}

/// Pooled collisions over pooled steps (not a mean of per-scene rates).
pub fn collision_rate(results: &[RolloutResult]) -> Result<CollisionSummary, PlannerError> {
    let n_steps: usize = results.iter().map(|r| r.steps_simulated).sum();
    if n_steps == 0 {
        return Err(PlannerError::EmptySamples);
    }
    let n_collisions = results.iter().filter(|r| r.collided).count();
    Ok(CollisionSummary {
        n_collisions,
        n_steps,
        rate: n_collisions as f64 / n_steps as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceClass {
    Very,
    Slight,
    None,
}

impl InfluenceClass {
    pub fn of(influence: f64) -> Self {
        if influence > VERY_INFLUENTIAL {
            InfluenceClass::Very
        } else if influence >= SLIGHTLY_INFLUENTIAL {
            InfluenceClass::Slight
        } else {
            InfluenceClass::None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecord {
    pub agent_id: AgentId,
    pub frame: usize,
    pub influence: f64,
    /// Distance and bearing (left positive) from the ego at `frame`, from
    /// the agent's latest observation in the history window.
    pub distance_m: Option<f64>,
    pub bearing_rad: Option<f64>,
    pub class: InfluenceClass,
}

fn l2(a: &Trajectory, b: &Trajectory) -> f64 {
    a.to_flat()
        .iter()
        .zip(b.to_flat())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn influence_query<P: Policy>(
    policy: &P,
    scene: &Scene,
    frame: usize,
    agent_id: AgentId,
    base: &Trajectory,
    history: &[Pose2D],
) -> Result<InfluenceRecord, PlannerError> {
    let ego = scene.frames[frame].ego;
    let h = policy.history_frames();
    let seen = (0..h)
        .rev()
        .map(|k| (frame + 1).saturating_sub(h - k) .min(frame))
        .find_map(|idx| scene.frames[idx].agent(agent_id));
    let (influence, distance, bearing) = match seen {
        None => (0.0, None, None),
        Some(obs) => {
            let masked = policy.plan(&PlanQuery {
                scene,
                frame,
                pose: ego,
                ego_history: history,
                mask: Some(agent_id),
            })?;
            let local = to_local(obs.bbox.center.position(), &ego);
            (l2(base, &masked), Some(local.norm()), Some(local.angle()))
        }
    };
    Ok(InfluenceRecord {
        agent_id,
        frame,
        influence,
        distance_m: distance,
        bearing_rad: bearing,
        class: InfluenceClass::of(influence),
    })
}

/// Output change when `agent_id` is masked from the input at `frame`.
pub fn agent_influence<P: Policy>(
    policy: &P,
    scene: &Scene,
    frame: usize,
    agent_id: AgentId,
) -> Result<InfluenceRecord, PlannerError> {
    let history = logged_ego_history(scene, frame, policy.history_frames());
    let base = policy.plan(&PlanQuery {
        scene,
        frame,
        pose: scene.frames[frame].ego,
        ego_history: &history,
        mask: None,
    })?;
    influence_query(policy, scene, frame, agent_id, &base, &history)
}

pub const DISTANCE_BIN_M: f64 = 10.0;
pub const DISTANCE_BINS: usize = 10;
pub const SECTORS: usize = 8;

/// Sector 0 is centred on the ego heading; indices grow counter-clockwise
/// (sector 2 is to the left, sector 4 behind, sector 6 to the right).
pub fn sector_of(bearing_rad: f64) -> usize {
    let width = std::f64::consts::TAU / SECTORS as f64;
    let shifted = (bearing_rad + 0.5 * width).rem_euclid(std::f64::consts::TAU);
    ((shifted / width) as usize).min(SECTORS - 1)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub observed: usize,
    pub very: usize,
    pub slight: usize,
}

impl Bucket {
    fn add(&mut self, class: InfluenceClass) {
        self.observed += 1;
        match class {
            InfluenceClass::Very => self.very += 1,
            InfluenceClass::Slight => self.slight += 1,
            InfluenceClass::None => {}
        }
    }

    /// `None` for an empty bucket.
    pub fn very_fraction(&self) -> Option<f64> {
        (self.observed > 0).then(|| self.very as f64 / self.observed as f64)
    }

    pub fn slight_fraction(&self) -> Option<f64> {
        (self.observed > 0).then(|| self.slight as f64 / self.observed as f64)
    }

    pub fn influential_fraction(&self) -> Option<f64> {
        (self.observed > 0).then(|| (self.very + self.slight) as f64 / self.observed as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceHistogram {
    /// `[k * 10, (k + 1) * 10)` meters for k in 0..10.
    pub distance: Vec<Bucket>,
    pub sectors: Vec<Bucket>,
    pub records: Vec<InfluenceRecord>,
}

/// Influence of every agent observed at every `frame_stride`-th valid frame.
pub fn influence_histogram<P: Policy>(
    policy: &P,
    scenes: &[Scene],
    frame_stride: usize,
) -> Result<InfluenceHistogram, PlannerError> {
    if scenes.is_empty() {
        return Err(PlannerError::EmptySamples);
    }
    let h = policy.history_frames();
    let jobs: Vec<(usize, usize)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(si, s)| valid_frames(s.len(), h, frame_stride).into_iter().map(move |f| (si, f)))
        .collect();
    let per_step: Vec<Vec<InfluenceRecord>> = jobs
        .par_iter()
        .map(|&(si, frame)| {
            let scene = &scenes[si];
            let history = logged_ego_history(scene, frame, h);
            let base = policy.plan(&PlanQuery {
                scene,
                frame,
                pose: scene.frames[frame].ego,
                ego_history: &history,
                mask: None,
            })?;
            scene.frames[frame]
                .agents
                .iter()
                .map(|a| influence_query(policy, scene, frame, a.agent_id, &base, &history))
                .collect()
        })
        .collect::<Result<_, PlannerError>>()?;
    let mut hist = InfluenceHistogram {
        distance: vec![Bucket::default(); DISTANCE_BINS],
        sectors: vec![Bucket::default(); SECTORS],
        records: per_step.into_iter().flatten().collect(),
    };
    for r in &hist.records {
        if let (Some(d), Some(b)) = (r.distance_m, r.bearing_rad) {
            let bin = (d / DISTANCE_BIN_M) as usize;
            if bin < DISTANCE_BINS {
                hist.distance[bin].add(r.class);
            }
            hist.sectors[sector_of(b)].add(r.class);
        }
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_boundaries() {
        assert_eq!(InfluenceClass::of(0.2), InfluenceClass::Very);
        assert_eq!(InfluenceClass::of(0.1), InfluenceClass::Slight);
        assert_eq!(InfluenceClass::of(0.05), InfluenceClass::Slight);
        assert_eq!(InfluenceClass::of(0.01), InfluenceClass::Slight);
        assert_eq!(InfluenceClass::of(0.0099), InfluenceClass::None);
    }

    #[test]
    fn sectors() {
        assert_eq!(sector_of(0.0), 0);
        assert_eq!(sector_of(0.3), 0);
        assert_eq!(sector_of(-0.3), 0);
        assert_eq!(sector_of(std::f64::consts::FRAC_PI_2), 2);
        assert_eq!(sector_of(std::f64::consts::PI), 4);
        assert_eq!(sector_of(-std::f64::consts::FRAC_PI_2), 6);
    }

    #[test]
    fn pooled_collision_rate() {
        let mk = |steps, collided| RolloutResult {
            scene_id: String::new(),
            steps_simulated: steps,
            collided,
            termination: if collided { Termination::Collision } else { Termination::Completed },
            trace: Vec::new(),
        };
        let r = collision_rate(&[mk(10, true), mk(990, false)]).unwrap();
        assert_eq!(r.rate, 1.0 / 1000.0);
        assert!(collision_rate(&[mk(0, false)]).is_err());
    }
}
