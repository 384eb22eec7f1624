//! Expert demonstrations: the ego and background vehicles follow their lane
//! centerlines under intelligent-driver-model longitudinal control,
//! pedestrians cross at crosswalks, and occupied crosswalks ahead act as
//! stopped leaders.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::geometry::{boxes_overlap, convex_contains, OrientedBox, Pose2D, Vec2};
use crate::polyline::Polyline;
use crate::scene::{
    AgentClass, AgentId, AgentObservation, Extent, Frame, Provenance, Scene, SemanticMap, DEFAULT_EGO_EXTENT,
    FRAME_DT_S, SCENE_FRAMES,
};
use crate::seeding::{self, tag};
use crate::world::map::EGO_START_S;
use crate::world::{ExpertParams, WorldSpec};
use crate::WorldError;

pub const PEDESTRIAN_SPEED: f64 = 1.4;
pub const PEDESTRIAN_EXTENT: f64 = 0.8;
/// Scene tag for scenes whose ego lane starts with a slower leader ahead.
pub const TAG_INTERACTING_LEADER: &str = "interacting_leader";

const SUBSTEPS: usize = 5;
const MAX_ATTEMPTS: usize = 60;
/// Pedestrians stand at the curb this long before and after crossing.
const CURB_WAIT_S: f64 = 2.0;
/// Vehicles treat a crosswalk as occupied from this long before a crossing starts.
const CROSSWALK_LEAD_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VehicleRole {
    /// Slower vehicle ahead of the ego in its lane at spawn.
    Leader,
    Ahead,
    Follower,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSpawn {
    pub id: AgentId,
    pub lane: usize,
    pub s: f64,
    pub speed: f64,
    pub desired_speed: f64,
    pub extent: Extent,
    /// Time window during which the vehicle brakes to a standstill.
    pub stop_window: Option<(f64, f64)>,
    pub role: VehicleRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianSpawn {
    pub id: AgentId,
    pub crosswalk: usize,
    pub start_time: f64,
    pub reverse: bool,
}

/// Initial conditions of one demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub ego_s: f64,
    pub ego_speed: f64,
    pub vehicles: Vec<VehicleSpawn>,
    pub pedestrians: Vec<PedestrianSpawn>,
}

impl Scenario {
    pub fn empty(ego_speed: f64) -> Self {
        Self {
            ego_s: EGO_START_S,
            ego_speed,
            vehicles: Vec::new(),
            pedestrians: Vec::new(),
        }
    }

    pub fn leader(&self) -> Option<&VehicleSpawn> {
        self.vehicles.iter().find(|v| v.role == VehicleRole::Leader)
    }

    pub fn without(&self, ids: &[AgentId]) -> Scenario {
        let mut s = self.clone();
        s.vehicles.retain(|v| !ids.contains(&v.id));
        s.pedestrians.retain(|p| !ids.contains(&p.id));
        s
    }

    pub fn without_leader(&self) -> Scenario {
        match self.leader() {
            Some(l) => self.without(&[l.id]),
            None => self.clone(),
        }
    }

    fn next_id(&self) -> AgentId {
        let max = self
            .vehicles
            .iter()
            .map(|v| v.id.0)
            .chain(self.pedestrians.iter().map(|p| p.id.0))
            .max()
            .unwrap_or(0);
        AgentId(max + 1)
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub frames: Vec<Frame>,
    /// Agents whose boxes overlapped the ego in some frame.
    pub ego_collisions: Vec<AgentId>,
    pub ego_speeds: Vec<f64>,
}

struct CrosswalkInfo {
    path: (Vec2, Vec2),
    /// Arclength interval occupied on each lane, if the lane passes through.
    lane_span: Vec<Option<(f64, f64)>>,
}

/// Precomputed map geometry used by the integrator.
struct World<'a> {
    map: &'a SemanticMap,
    lanes: Vec<Polyline>,
    crosswalks: Vec<CrosswalkInfo>,
    /// For each lane, `(s on lane, s on ego lane)` where it crosses lane 0.
    ego_conflicts: Vec<Option<(f64, f64)>>,
}

fn segment_intersection(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> Option<(f64, f64)> {
    let r = a1 - a0;
    let s = b1 - b0;
    let denom = r.cross(s);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (b0 - a0).cross(s) / denom;
    let u = (b0 - a0).cross(r) / denom;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then_some((t, u))
}

impl<'a> World<'a> {
    fn new(map: &'a SemanticMap) -> Self {
        let lanes: Vec<Polyline> = map.lanes.iter().map(|l| Polyline::new(l.centerline.clone())).collect();
        let crosswalks = map
            .crosswalks
            .iter()
            .map(|poly| {
                let e0 = poly[1] - poly[0];
                let e1 = poly[2] - poly[1];
                // Pedestrians walk along the long axis, between short-edge midpoints.
                let path = if e0.norm() >= e1.norm() {
                    ((poly[3] + poly[0]) * 0.5, (poly[1] + poly[2]) * 0.5)
                } else {
                    ((poly[0] + poly[1]) * 0.5, (poly[2] + poly[3]) * 0.5)
                };
                let lane_span = lanes
                    .iter()
                    .map(|lane| {
                        let ss: Vec<f64> = poly.iter().map(|p| lane.project(*p).s).collect();
                        let lo = ss.iter().cloned().fold(f64::MAX, f64::min);
                        let hi = ss.iter().cloned().fold(f64::MIN, f64::max);
                        let mid = lane.point_at(0.5 * (lo + hi));
                        (hi > lo && convex_contains(poly, mid)).then_some((lo, hi))
                    })
                    .collect();
                CrosswalkInfo {
                    path,
                    lane_span,
                }
            })
            .collect();
        let ego_lane = &lanes[0];
        let ego_conflicts = lanes
            .iter()
            .enumerate()
            .map(|(i, lane)| {
                if i == 0 {
                    return None;
                }
                let p = lane.points();
                let q = ego_lane.points();
                for a in 0..p.len() - 1 {
                    for b in 0..q.len() - 1 {
                        if let Some((t, u)) = segment_intersection(p[a], p[a + 1], q[b], q[b + 1]) {
                            let s_lane = lane.project(p[a] + (p[a + 1] - p[a]) * t).s;
                            let s_ego = ego_lane.project(q[b] + (q[b + 1] - q[b]) * u).s;
                            return Some((s_lane, s_ego));
                        }
                    }
                }
                None
            })
            .collect();
        Self {
            map,
            lanes,
            crosswalks,
            ego_conflicts,
        }
    }

    fn pose_on_lane(&self, lane: usize, s: f64) -> Pose2D {
        let l = &self.lanes[lane];
        let p = l.point_at(s);
        Pose2D::new(p.x, p.y, l.heading_at(s))
    }
}

impl PedestrianSpawn {
    fn crossing_time(path: (Vec2, Vec2)) -> f64 {
        path.0.distance(path.1) / PEDESTRIAN_SPEED
    }

    fn visible(&self, t: f64, path: (Vec2, Vec2)) -> bool {
        t >= self.start_time - CURB_WAIT_S && t <= self.start_time + Self::crossing_time(path) + CURB_WAIT_S
    }

    fn occupies(&self, t: f64, path: (Vec2, Vec2)) -> bool {
        t >= self.start_time - CROSSWALK_LEAD_S && t <= self.start_time + Self::crossing_time(path)
    }

    fn state(&self, t: f64, path: (Vec2, Vec2)) -> (Pose2D, f64) {
        let (a, b) = if self.reverse { (path.1, path.0) } else { path };
        let total = a.distance(b);
        let walked = ((t - self.start_time) * PEDESTRIAN_SPEED).clamp(0.0, total);
        let dir = (b - a) * (1.0 / total);
        let p = a + dir * walked;
        let moving = walked > 0.0 && walked < total;
        (
            Pose2D::new(p.x, p.y, dir.angle()),
            if moving { PEDESTRIAN_SPEED } else { 0.0 },
        )
    }
}

/// Intelligent-driver-model acceleration, clamped to `[-b, a_max]`.
///
/// `leader` is `(bumper gap, approach rate v - v_leader)`.
pub fn idm_accel(v: f64, desired: f64, leader: Option<(f64, f64)>, p: &ExpertParams) -> f64 {
    let free = if desired <= 0.0 {
        if v > 0.0 {
            -p.comfortable_decel
        } else {
            0.0
        }
    } else {
        p.max_accel * (1.0 - (v / desired).powi(4))
    };
    let interaction = match leader {
        Some((gap, dv)) => {
            let dynamic = v * p.headway_s + v * dv / (2.0 * (p.max_accel * p.comfortable_decel).sqrt());
            let s_star = p.min_gap + dynamic.max(0.0);
            -p.max_accel * (s_star / gap.max(0.01)).powi(2)
        }
        None => 0.0,
    };
    (free + interaction).clamp(-p.comfortable_decel, p.max_accel)
}

struct Body {
    id: Option<AgentId>,
    lane: usize,
    s: f64,
    v: f64,
    desired: f64,
    extent: Extent,
    stop_window: Option<(f64, f64)>,
}

impl Body {
    fn on_lane(&self, world: &World) -> bool {
        self.s - 0.5 * self.extent.length <= world.lanes[self.lane].length() && self.s >= 0.0
    }

    fn desired_at(&self, t: f64) -> f64 {
        match self.stop_window {
            Some((a, b)) if t >= a && t < b => 0.0,
            _ => self.desired,
        }
    }
}

/// Runs one scenario for `n_frames` frames. Body 0 is the ego.
pub fn run_scenario(map: &SemanticMap, scenario: &Scenario, expert: &ExpertParams, n_frames: usize) -> SimOutcome {
    let world = World::new(map);
    let mut bodies = vec![Body {
        id: None,
        lane: 0,
        s: scenario.ego_s,
        v: scenario.ego_speed,
        desired: expert.desired_speed,
        extent: DEFAULT_EGO_EXTENT,
        stop_window: None,
    }];
    bodies.extend(scenario.vehicles.iter().map(|v| Body {
        id: Some(v.id),
        lane: v.lane,
        s: v.s,
        v: v.speed,
        desired: v.desired_speed,
        extent: v.extent,
        stop_window: v.stop_window,
    }));

    let h = FRAME_DT_S / SUBSTEPS as f64;
    let mut frames = Vec::with_capacity(n_frames);
    let mut speeds = Vec::with_capacity(n_frames);
    let mut collisions: Vec<AgentId> = Vec::new();
    for index in 0..n_frames {
        let t = Frame::time_for_index(index);
        let frame = snapshot(&world, &bodies, scenario, index, t);
        let ego_box = frame.ego_box();
        for a in &frame.agents {
            if boxes_overlap(&ego_box, &a.bbox) && !collisions.contains(&a.agent_id) {
                collisions.push(a.agent_id);
            }
        }
        frames.push(frame);
        speeds.push(bodies[0].v);
        if index + 1 == n_frames {
            break;
        }
        for k in 0..SUBSTEPS {
            let tk = t + k as f64 * h;
            let accels: Vec<f64> = (0..bodies.len())
                .map(|i| body_accel(&world, &bodies, i, scenario, tk, expert))
                .collect();
            for (b, a) in bodies.iter_mut().zip(accels) {
                b.v = (b.v + a * h).max(0.0);
                b.s += b.v * h;
            }
        }
    }
    SimOutcome {
        frames,
        ego_collisions: collisions,
        ego_speeds: speeds,
    }
}

fn body_accel(world: &World, bodies: &[Body], i: usize, scenario: &Scenario, t: f64, p: &ExpertParams) -> f64 {
    let me = &bodies[i];
    if !me.on_lane(world) {
        return 0.0;
    }
    let desired = me.desired_at(t);
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    let leader = bodies
        .iter()
        .enumerate()
        .filter(|(j, o)| *j != i && o.lane == me.lane && o.s > me.s && o.on_lane(world))
        .min_by(|a, b| a.1.s.total_cmp(&b.1.s));
    if let Some((_, o)) = leader {
        let gap = o.s - me.s - 0.5 * (o.extent.length + me.extent.length);
        candidates.push((gap, me.v - o.v));
    }
    let front = me.s + 0.5 * me.extent.length;
    for (ci, cw) in world.crosswalks.iter().enumerate() {
        let Some((lo, _)) = cw.lane_span[me.lane] else { continue };
        let occupied = scenario
            .pedestrians
            .iter()
            .any(|ped| ped.crosswalk == ci && ped.occupies(t, cw.path));
        if !occupied || front > lo {
            continue;
        }
        let gap = lo - p.crosswalk_stop_margin - front;
        // A vehicle that can no longer stop comfortably proceeds.
        if me.v * me.v / (2.0 * gap.max(0.01)) > p.comfortable_decel + 0.5 {
            continue;
        }
        candidates.push((gap, me.v));
    }
    // Side-road traffic yields to the ego near the conflict point.
    if let Some((s_lane, s_ego)) = world.ego_conflicts[me.lane] {
        let ego = &bodies[0];
        let stop_line = s_lane - world.map.lanes[me.lane].width - 1.0;
        if ego.s > s_ego - 45.0 && ego.s < s_ego + 8.0 && front <= stop_line + 0.5 {
            candidates.push((stop_line - front, me.v));
        }
    }
    let mut acc = idm_accel(me.v, desired, None, p);
    for c in candidates {
        acc = acc.min(idm_accel(me.v, desired, Some(c), p));
    }
    acc
}

fn snapshot(world: &World, bodies: &[Body], scenario: &Scenario, index: usize, t: f64) -> Frame {
    let ego = world.pose_on_lane(0, bodies[0].s);
    let mut agents: Vec<AgentObservation> = bodies[1..]
        .iter()
        .filter(|b| b.on_lane(world))
        .map(|b| AgentObservation {
            agent_id: b.id.expect("background vehicles carry ids"),
            bbox: OrientedBox::new(world.pose_on_lane(b.lane, b.s), b.extent.length, b.extent.width),
            speed: b.v,
            class: AgentClass::Vehicle,
        })
        .collect();
    for ped in &scenario.pedestrians {
        let Some(cw) = world.crosswalks.get(ped.crosswalk) else { continue };
        if ped.visible(t, cw.path) {
            let (pose, speed) = ped.state(t, cw.path);
            agents.push(AgentObservation {
                agent_id: ped.id,
                bbox: OrientedBox::new(pose, PEDESTRIAN_EXTENT, PEDESTRIAN_EXTENT),
                speed,
                class: AgentClass::Pedestrian,
            });
        }
    }
    agents.sort_by_key(|a| a.agent_id);
    Frame {
        index,
        time_s: t,
        ego,
        ego_extent: DEFAULT_EGO_EXTENT,
        agents,
    }
}

fn lane_is_free(vehicles: &[VehicleSpawn], ego_s: f64, lane: usize, s: f64, length: f64) -> bool {
    let ego_clear = lane != 0 || (s - ego_s).abs() - 0.5 * (length + DEFAULT_EGO_EXTENT.length) > 6.0;
    ego_clear
        && vehicles
            .iter()
            .filter(|v| v.lane == lane)
            .all(|v| (v.s - s).abs() - 0.5 * (v.extent.length + length) > 6.0)
}

/// Draws the initial conditions of one scene.
pub fn sample_scenario<R: Rng>(map: &SemanticMap, spec: &WorldSpec, expert: &ExpertParams, rng: &mut R) -> Scenario {
    let lanes: Vec<Polyline> = map.lanes.iter().map(|l| Polyline::new(l.centerline.clone())).collect();
    let v0 = expert.desired_speed;
    let mut sc = Scenario::empty(rng.random_range(0.5..=1.0) * v0);
    let vehicle_extent = |rng: &mut R| Extent {
        length: rng.random_range(4.2..5.2),
        width: rng.random_range(1.8..2.0),
    };
    if rng.random::<f64>() < spec.lead_probability {
        let stop_window = (rng.random::<f64>() < spec.stop_event_probability).then(|| {
            let start = rng.random_range(2.0..15.0);
            (start, start + rng.random_range(2.0..6.0))
        });
        sc.vehicles.push(VehicleSpawn {
            id: sc.next_id(),
            lane: 0,
            s: sc.ego_s + rng.random_range(15.0..60.0),
            speed: rng.random_range(0.0..=sc.ego_speed.min(8.0)),
            desired_speed: rng.random_range(0.25..0.7) * spec.speed_limit,
            extent: vehicle_extent(rng),
            stop_window,
            role: VehicleRole::Leader,
        });
    }
    let n_bg = if spec.traffic_density > 0.0 {
        Poisson::new(spec.traffic_density).map(|d| d.sample(rng) as usize).unwrap_or(0)
    } else {
        0
    };
    for _ in 0..n_bg {
        for _attempt in 0..10 {
            let pick: f64 = rng.random();
            let (lane, s, role) = if lanes.len() == 1 || pick < 0.4 {
                if pick < 0.2 || lanes.len() == 1 && pick < 0.5 {
                    (0, sc.ego_s + rng.random_range(70.0..250.0), VehicleRole::Ahead)
                } else {
                    (0, sc.ego_s - rng.random_range(10.0..80.0), VehicleRole::Follower)
                }
            } else {
                let lane = rng.random_range(1..lanes.len());
                (lane, rng.random_range(0.0..lanes[lane].length()), VehicleRole::Other)
            };
            let extent = vehicle_extent(rng);
            if s < 0.0 || !lane_is_free(&sc.vehicles, sc.ego_s, lane, s, extent.length) {
                continue;
            }
            let desired = rng.random_range(0.6..1.1) * spec.speed_limit;
            sc.vehicles.push(VehicleSpawn {
                id: sc.next_id(),
                lane,
                s,
                speed: rng.random_range(0.5..=1.0) * desired,
                desired_speed: desired,
                extent,
                stop_window: None,
                role,
            });
            break;
        }
    }
    for cw in 0..map.crosswalks.len() {
        if rng.random::<f64>() < spec.crossing_probability {
            let n = rng.random_range(1..=2);
            for _ in 0..n {
                sc.pedestrians.push(PedestrianSpawn {
                    id: sc.next_id(),
                    crosswalk: cw,
                    start_time: rng.random_range(0.0..22.0),
                    reverse: rng.random(),
                });
            }
        }
    }
    sc
}

/// A generated scene together with the initial conditions that produced it.
#[derive(Debug, Clone)]
pub struct SimulatedScene {
    pub scene: Scene,
    pub scenario: Scenario,
}

/// Simulates one expert demonstration. Scenarios in which the expert would
/// touch another agent are redrawn; after repeated failures the offending
/// agents are dropped.
pub fn simulate_scene(
    map: &SemanticMap,
    spec: &WorldSpec,
    expert: &ExpertParams,
    seed: u64,
) -> Result<SimulatedScene, WorldError> {
    spec.validate()?;
    expert.validate()?;
    let mut rng = seeding::stream(seed, &[tag::SCENARIO]);
    let mut scenario = sample_scenario(map, spec, expert, &mut rng);
    let mut outcome = run_scenario(map, &scenario, expert, SCENE_FRAMES);
    let mut attempts = 1;
    while !outcome.ego_collisions.is_empty() {
        if attempts < MAX_ATTEMPTS {
            scenario = sample_scenario(map, spec, expert, &mut rng);
        } else {
            scenario = scenario.without(&outcome.ego_collisions);
        }
        outcome = run_scenario(map, &scenario, expert, SCENE_FRAMES);
        attempts += 1;
    }
    let mut provenance = Provenance::av_grade(seed);
    if scenario.leader().is_some() {
        provenance.tags.push(TAG_INTERACTING_LEADER.to_string());
    }
    let scene = Scene {
        scene_id: format!("scene-{seed:016x}"),
        dt_s: FRAME_DT_S,
        frames: outcome.frames,
        map: map.clone(),
        provenance,
    };
    scene
        .validate()
        .map_err(|e| WorldError::Config(format!("generated scene failed validation: {e}")))?;
    Ok(SimulatedScene { scene, scenario })
}
