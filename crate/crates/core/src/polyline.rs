//! Arclength-parameterized polylines.

use crate::geometry::{normalize_angle, Vec2};

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cum: Vec<f64>,
}

/// Closest-point query result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub s: f64,
    /// Signed lateral offset, positive to the left of the direction of travel.
    pub lateral: f64,
    pub distance: f64,
    pub segment: usize,
}

impl Polyline {
    /// Panics on fewer than two points; callers validate maps first.
    pub fn new(points: Vec<Vec2>) -> Self {
        assert!(points.len() >= 2, "polyline needs at least two points");
        let mut cum = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in points.windows(2) {
            acc += w[0].distance(w[1]);
            cum.push(acc);
        }
        Self { points, cum }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    fn segment_at(&self, s: f64) -> usize {
        let i = self.cum.partition_point(|&c| c <= s);
        i.saturating_sub(1).min(self.points.len() - 2)
    }

    /// Position at arclength `s`; extrapolates linearly past either end.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let i = self.segment_at(s);
        let a = self.points[i];
        let b = self.points[i + 1];
        let seg = self.cum[i + 1] - self.cum[i];
        if seg <= 0.0 {
            return a;
        }
        a + (b - a) * ((s - self.cum[i]) / seg)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s);
        (self.points[i + 1] - self.points[i]).angle()
    }

    /// Heading change per meter around `s`, from neighbouring segment headings.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s);
        if self.points.len() < 3 {
            return 0.0;
        }
        let (j, k) = if i + 2 < self.points.len() { (i, i + 1) } else { (i - 1, i) };
        let h0 = (self.points[j + 1] - self.points[j]).angle();
        let h1 = (self.points[k + 1] - self.points[k]).angle();
        let ds = 0.5 * ((self.cum[j + 1] - self.cum[j]) + (self.cum[k + 1] - self.cum[k]));
        if ds <= 0.0 {
            0.0
        } else {
            normalize_angle(h1 - h0) / ds
        }
    }

    pub fn project(&self, p: Vec2) -> Projection {
        let mut best = Projection {
            s: 0.0,
            lateral: 0.0,
            distance: f64::INFINITY,
            segment: 0,
        };
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let d = self.points[i + 1] - a;
            let len2 = d.dot(d);
            let t = if len2 > 0.0 { ((p - a).dot(d) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let q = a + d * t;
            let dist = p.distance(q);
            if dist < best.distance {
                let len = len2.sqrt();
                let lateral = if len > 0.0 { d.cross(p - a) / len } else { 0.0 };
                best = Projection {
                    s: self.cum[i] + t * len,
                    lateral,
                    distance: dist,
                    segment: i,
                };
            }
        }
        best
    }

    /// Distance from `p` to the polyline (segments only, no extrapolation).
    pub fn distance_to(&self, p: Vec2) -> f64 {
        self.project(p).distance
    }

    /// Shifts every vertex to the left by `offset` along averaged normals.
    pub fn offset(&self, offset: f64) -> Polyline {
        let n = self.points.len();
        let normals: Vec<Vec2> = (0..n)
            .map(|i| {
                let prev = if i > 0 { self.points[i] - self.points[i - 1] } else { self.points[1] - self.points[0] };
                let next = if i + 1 < n { self.points[i + 1] - self.points[i] } else { prev };
                let t = prev * (1.0 / prev.norm()) + next * (1.0 / next.norm());
                let t = t * (1.0 / t.norm());
                t.perp()
            })
            .collect();
        Polyline::new(
            self.points
                .iter()
                .zip(&normals)
                .map(|(p, nrm)| *p + *nrm * offset)
                .collect(),
        )
    }

    pub fn reversed(&self) -> Polyline {
        let mut pts = self.points.clone();
        pts.reverse();
        Polyline::new(pts)
    }
}
