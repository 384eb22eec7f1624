//! Training samples: one per scene frame with enough history and future.

use rand::Rng;

use sensorgrade_core::geometry::to_local;
use sensorgrade_core::raster::{render, Raster, RasterConfig};
use sensorgrade_core::{Pose2D, Scene, Vec2};

use crate::perturb::{perturb_sample, PerturbParams};
use crate::trajectory::{Trajectory, HORIZON};
use crate::PlannerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub scene: usize,
    pub frame: usize,
}

/// Frames with `history - 1` frames before and `HORIZON` frames after,
/// taking every `stride`-th one.
pub fn valid_frames(scene_len: usize, history: usize, stride: usize) -> Vec<usize> {
    let first = history.saturating_sub(1);
    if scene_len < first + HORIZON + 1 {
        return Vec::new();
    }
    (first..scene_len - HORIZON).step_by(stride.max(1)).collect()
}

pub fn enumerate_samples(scenes: &[Scene], history: usize, stride: usize) -> Vec<SampleRef> {
    scenes
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            valid_frames(s.len(), history, stride)
                .into_iter()
                .map(move |frame| SampleRef { scene: si, frame })
        })
        .collect()
}

/// World positions of the ego over the next `HORIZON` frames; frames past
/// the end of the scene repeat the last one.
pub fn expert_future(scene: &Scene, frame: usize) -> Vec<Vec2> {
    (1..=HORIZON)
        .map(|k| scene.frames[(frame + k).min(scene.len() - 1)].ego.position())
        .collect()
}

pub fn expert_target(scene: &Scene, frame: usize) -> Trajectory {
    let ego = scene.frames[frame].ego;
    Trajectory {
        points: expert_future(scene, frame).iter().map(|p| to_local(*p, &ego)).collect(),
    }
}

/// Logged ego poses over the raster history window, oldest first, padded
/// with the first frame before the scene start.
pub fn logged_ego_history(scene: &Scene, frame: usize, history: usize) -> Vec<Pose2D> {
    (0..history)
        .map(|k| {
            let idx = (frame + k + 1).saturating_sub(history);
            scene.frames[idx].ego
        })
        .collect()
}

/// Raster and target for one sample, optionally perturbed. A perturbed
/// sample is rendered at the perturbed pose with the ego history moved
/// rigidly along with it.
pub fn build_sample<R: Rng + ?Sized>(
    scene: &Scene,
    frame: usize,
    raster: &RasterConfig,
    perturb: Option<&PerturbParams>,
    rng: &mut R,
) -> Result<(Raster, Trajectory), PlannerError> {
    let ego = scene.frames[frame].ego;
    let history = logged_ego_history(scene, frame, raster.history_frames);
    let extent = scene.frames[frame].ego_extent;
    let future = expert_future(scene, frame);
    let (pose, target) = match perturb {
        Some(params) => {
            let p = perturb_sample(&ego, &future, params, rng)?;
            (p.pose, p.target)
        }
        None => (ego, expert_target(scene, frame)),
    };
    let history: Vec<Pose2D> = if pose == ego {
        history
    } else {
        history.iter().map(|h| pose.compose(&ego.relative(h))).collect()
    };
    let r = render(scene, frame, &pose, &history, extent, None, raster)?;
    Ok((r, target))
}
