//! Planar geometry: poses, frame transforms, oriented boxes.
//!
//! Local frames are x forward, y left; yaw is counter-clockwise from world +x.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn from_angle(theta: f64) -> Vec2 {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2D {
    /// Builds a pose with the yaw wrapped into (−π, π].
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::from_angle(self.yaw)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }

    /// Expresses `other` (a world pose) in this pose's local frame.
    pub fn relative(&self, other: &Pose2D) -> Pose2D {
        let p = to_local(other.position(), self);
        Pose2D::new(p.x, p.y, other.yaw - self.yaw)
    }

    /// Inverse of [`Pose2D::relative`]: lifts a local pose into the world.
    pub fn compose(&self, local: &Pose2D) -> Pose2D {
        let p = to_world(local.position(), self);
        Pose2D::new(p.x, p.y, self.yaw + local.yaw)
    }
}

/// World point into the local frame of `frame` (x forward, y left).
pub fn to_local(point: Vec2, frame: &Pose2D) -> Vec2 {
    let (s, c) = frame.yaw.sin_cos();
    let dx = point.x - frame.x;
    let dy = point.y - frame.y;
    Vec2::new(dx * c + dy * s, -dx * s + dy * c)
}

pub fn to_world(local: Vec2, frame: &Pose2D) -> Vec2 {
    let (s, c) = frame.yaw.sin_cos();
    Vec2::new(
        frame.x + local.x * c - local.y * s,
        frame.y + local.x * s + local.y * c,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Pose2D,
    /// Longitudinal extent in meters.
    pub length: f64,
    /// Lateral extent in meters.
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: Pose2D, length: f64, width: f64) -> Self {
        Self {
            center,
            length,
            width,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.center.is_finite()
            && self.length.is_finite()
            && self.width.is_finite()
            && self.length > 0.0
            && self.width > 0.0
    }

    /// Corners in counter-clockwise order starting at front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        [
            Vec2::new(hl, hw),
            Vec2::new(-hl, hw),
            Vec2::new(-hl, -hw),
            Vec2::new(hl, -hw),
        ]
        .map(|c| to_world(c, &self.center))
    }

    /// Closed containment test.
    pub fn contains(&self, p: Vec2) -> bool {
        let l = to_local(p, &self.center);
        l.x.abs() <= 0.5 * self.length && l.y.abs() <= 0.5 * self.width
    }

    /// Signed distance from the box boundary (negative inside).
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        let l = to_local(p, &self.center);
        let qx = l.x.abs() - 0.5 * self.length;
        let qy = l.y.abs() - 0.5 * self.width;
        let outside = Vec2::new(qx.max(0.0), qy.max(0.0)).norm();
        outside + qx.max(qy).min(0.0)
    }
}

fn project(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        let d = c.dot(axis);
        (lo.min(d), hi.max(d))
    })
}

/// True iff the two closed rectangles intersect (separating-axis test).
pub fn boxes_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    let axes = [
        a.center.heading(),
        a.center.heading().perp(),
        b.center.heading(),
        b.center.heading().perp(),
    ];
    axes.iter().all(|&axis| {
        let (amin, amax) = project(&ca, axis);
        let (bmin, bmax) = project(&cb, axis);
        amax >= bmin && bmax >= amin
    })
}

/// IoU of two same-size axis-aligned boxes offset by `(dx, dy)`.
pub fn iou_same_size(length: f64, width: f64, dx: f64, dy: f64) -> f64 {
    let inter = (length - dx.abs()).max(0.0) * (width - dy.abs()).max(0.0);
    let union = 2.0 * length * width - inter;
    inter / union
}

/// Point-in-convex-polygon, closed, for either winding.
pub fn convex_contains(poly: &[Vec2], p: Vec2) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0.0f64;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = (b - a).cross(p - a);
        if c != 0.0 {
            if sign == 0.0 {
                sign = c.signum();
            } else if c.signum() != sign {
                return false;
            }
        }
    }
    true
}
