use serde::{Deserialize, Serialize};

use sensorgrade_core::Vec2;

use crate::PlannerError;

/// Prediction horizon in 0.1 s steps.
pub const HORIZON: usize = 12;

/// Future ego positions in the ego frame at prediction time, 0.1 s apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<Vec2>,
}

impl Trajectory {
    pub fn new(points: Vec<Vec2>) -> Result<Self, PlannerError> {
        if points.len() != HORIZON {
            return Err(PlannerError::Shape {
                expected: format!("{HORIZON} points"),
                actual: format!("{} points", points.len()),
            });
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(PlannerError::NonFinite("trajectory point".into()));
        }
        Ok(Self { points })
    }

    pub fn zeros() -> Self {
        Self {
            points: vec![Vec2::new(0.0, 0.0); HORIZON],
        }
    }

    /// Reads `[x1, y1, x2, y2, ...]`.
    pub fn from_flat(v: &[f64]) -> Result<Self, PlannerError> {
        if v.len() != 2 * HORIZON {
            return Err(PlannerError::Shape {
                expected: format!("{} values", 2 * HORIZON),
                actual: format!("{} values", v.len()),
            });
        }
        Self::new(v.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }
}

/// Sum over steps of the Euclidean distance between corresponding points.
pub fn loss(pred: &Trajectory, target: &Trajectory) -> f64 {
    pred.points
        .iter()
        .zip(&target.points)
        .map(|(p, q)| p.distance(*q))
        .sum()
}

/// Loss on flat vectors together with its gradient w.r.t. `pred`. The
/// gradient of a zero-length step is taken as zero.
pub fn loss_and_grad(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; pred.len()];
    let mut total = 0.0;
    for t in 0..pred.len() / 2 {
        let dx = pred[2 * t] - target[2 * t];
        let dy = pred[2 * t + 1] - target[2 * t + 1];
        let d = dx.hypot(dy);
        total += d;
        if d > 0.0 {
            grad[2 * t] = dx / d;
            grad[2 * t + 1] = dy / d;
        }
    }
    (total, grad)
}
