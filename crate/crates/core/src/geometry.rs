//! Planar geometry helpers: segment projection, polyline distance and
//! oriented bounding boxes.

use crate::model::Transform;

/// Closest point on segment `a -> b` to `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentProjection {
    /// Parameter along the segment in [0, 1].
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub distance: f64,
}

pub fn project_onto_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> SegmentProjection {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (x, y) = (a.0 + t * dx, a.1 + t * dy);
    SegmentProjection {
        t,
        x,
        y,
        distance: (p.0 - x).hypot(p.1 - y),
    }
}

/// Unsigned distance from `p` to a polyline. Infinite for an empty polyline.
pub fn distance_to_polyline(p: (f64, f64), points: &[(f64, f64)]) -> f64 {
    match points {
        [] => f64::INFINITY,
        [only] => (p.0 - only.0).hypot(p.1 - only.1),
        _ => points
            .windows(2)
            .map(|w| project_onto_segment(p, w[0], w[1]).distance)
            .fold(f64::INFINITY, f64::min),
    }
}

/// Rectangle of `length` x `width` centered on a pose, length along the
/// pose's heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: (f64, f64),
    pub yaw: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Obb {
    pub fn new(pose: Transform, length: f64, width: f64) -> Self {
        Self {
            center: (pose.x, pose.y),
            yaw: pose.yaw,
            half_length: length / 2.0,
            half_width: width / 2.0,
        }
    }

    /// Unit axes: heading direction, then its left normal.
    pub fn axes(&self) -> [(f64, f64); 2] {
        let (s, c) = self.yaw.sin_cos();
        [(c, s), (-s, c)]
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let [u, v] = self.axes();
        let (cx, cy) = self.center;
        let (hl, hw) = (self.half_length, self.half_width);
        [
            (cx + u.0 * hl + v.0 * hw, cy + u.1 * hl + v.1 * hw),
            (cx - u.0 * hl + v.0 * hw, cy - u.1 * hl + v.1 * hw),
            (cx - u.0 * hl - v.0 * hw, cy - u.1 * hl - v.1 * hw),
            (cx + u.0 * hl - v.0 * hw, cy + u.1 * hl - v.1 * hw),
        ]
    }

    /// Half-extent of the box projected on a unit axis.
    fn radius_on(&self, axis: (f64, f64)) -> f64 {
        let [u, v] = self.axes();
        self.half_length * (u.0 * axis.0 + u.1 * axis.1).abs()
            + self.half_width * (v.0 * axis.0 + v.1 * axis.1).abs()
    }

    /// Separating-axis test over the four face normals. Touching boxes do
    /// not count as overlapping.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let d = (other.center.0 - self.center.0, other.center.1 - self.center.1);
        let [a0, a1] = self.axes();
        let [b0, b1] = other.axes();
        [a0, a1, b0, b1].into_iter().all(|axis| {
            let dist = (d.0 * axis.0 + d.1 * axis.1).abs();
            dist < self.radius_on(axis) + other.radius_on(axis)
        })
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        let [u, v] = self.axes();
        let d = (p.0 - self.center.0, p.1 - self.center.1);
        (d.0 * u.0 + d.1 * u.1).abs() <= self.half_length
            && (d.0 * v.0 + d.1 * v.1).abs() <= self.half_width
    }
}
