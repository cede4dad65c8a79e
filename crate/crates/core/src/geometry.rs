//! Planar geometry shared by the simulator: vectors, angles, polylines and
//! oriented boxes.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Rotate counter-clockwise by 90 degrees.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
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
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wrap an angle into (-π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    if !theta.is_finite() {
        return theta;
    }
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid maps -π to π already; guard the tiny negative rounding case.
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Signed smallest rotation taking `from` to `to`.
pub fn angle_diff(to: f64, from: f64) -> f64 {
    wrap_angle(to - from)
}

/// Closest point on segment `[a, b]` to `p`, as parameter in [0, 1].
pub fn segment_param(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let len_sq = d.norm_sq();
    if len_sq == 0.0 {
        return 0.0;
    }
    ((p - a).dot(d) / len_sq).clamp(0.0, 1.0)
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let t = segment_param(p, a, b);
    p.dist(a.lerp(b, t))
}

fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = (b - a).cross(c - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c).cross(a - c);
    let d4 = (d - c).cross(b - c);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

pub fn segment_segment_distance(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Closest point on the polyline.
    pub point: Vec2,
    /// Arc length of the closest point from the polyline start.
    pub arc: f64,
    /// Euclidean distance from the query point.
    pub distance: f64,
    /// Index of the segment holding the closest point.
    pub segment: usize,
    /// Position along that segment in [0, 1].
    pub t: f64,
    /// Signed lateral offset, positive to the left of travel direction.
    pub lateral: f64,
}

/// A polyline with cached cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Self {
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                acc += p.dist(points[i - 1]);
            }
            cumulative.push(acc);
        }
        Self { points, cumulative }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn first(&self) -> Vec2 {
        self.points[0]
    }

    pub fn last(&self) -> Vec2 {
        *self.points.last().expect("non-empty polyline")
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.points.len();
        if n < 2 {
            return 0;
        }
        // first index i with cumulative[i+1] >= s
        let idx = self.cumulative.partition_point(|&c| c < s);
        idx.saturating_sub(1).min(n - 2)
    }

    /// Point at arc length `s`, clamped to the polyline ends.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let n = self.points.len();
        if n == 1 {
            return self.points[0];
        }
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        if seg <= 0.0 {
            return self.points[i];
        }
        let t = (s - self.cumulative[i]) / seg;
        self.points[i].lerp(self.points[i + 1], t)
    }

    /// Point at arc length `s`, extrapolating linearly beyond either end.
    pub fn point_at_extended(&self, s: f64) -> Vec2 {
        let len = self.length();
        if self.points.len() < 2 || (0.0..=len).contains(&s) {
            return self.point_at(s);
        }
        if s < 0.0 {
            self.first() + Vec2::from_angle(self.heading_at(0.0)) * s
        } else {
            self.last() + Vec2::from_angle(self.heading_at(len)) * (s - len)
        }
    }

    /// Tangent heading at arc length `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let n = self.points.len();
        if n < 2 {
            return 0.0;
        }
        let mut i = self.segment_at(s.clamp(0.0, self.length()));
        // skip degenerate segments
        while i + 1 < n - 1 && self.points[i + 1].dist(self.points[i]) == 0.0 {
            i += 1;
        }
        (self.points[i + 1] - self.points[i]).angle()
    }

    /// Net heading change from the first to the last segment.
    pub fn net_heading_change(&self) -> f64 {
        angle_diff(self.heading_at(self.length()), self.heading_at(0.0))
    }

    pub fn project(&self, p: Vec2) -> Projection {
        let n = self.points.len();
        if n == 1 {
            return Projection {
                point: self.points[0],
                arc: 0.0,
                distance: p.dist(self.points[0]),
                segment: 0,
                t: 0.0,
                lateral: 0.0,
            };
        }
        let mut best = Projection {
            point: self.points[0],
            arc: 0.0,
            distance: f64::INFINITY,
            segment: 0,
            t: 0.0,
            lateral: 0.0,
        };
        for i in 0..n - 1 {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let t = segment_param(p, a, b);
            let q = a.lerp(b, t);
            let d = p.dist(q);
            if d < best.distance {
                let dir = b - a;
                let lateral_sign = if dir.cross(p - a) >= 0.0 { 1.0 } else { -1.0 };
                best = Projection {
                    point: q,
                    arc: self.cumulative[i] + t * (self.cumulative[i + 1] - self.cumulative[i]),
                    distance: d,
                    segment: i,
                    t,
                    lateral: lateral_sign * d,
                };
            }
        }
        best
    }

    /// Sub-polyline between arc lengths `from` and `to`.
    pub fn slice(&self, from: f64, to: f64) -> Vec<Vec2> {
        let from = from.clamp(0.0, self.length());
        let to = to.clamp(from, self.length());
        let mut out = vec![self.point_at(from)];
        for (p, &c) in self.points.iter().zip(&self.cumulative) {
            if c > from && c < to {
                out.push(*p);
            }
        }
        out.push(self.point_at(to));
        out
    }

    /// Resample at a fixed spacing (last point always included).
    pub fn resample(&self, spacing: f64) -> Vec<Vec2> {
        let len = self.length();
        let steps = (len / spacing).ceil().max(1.0) as usize;
        (0..=steps)
            .map(|k| self.point_at(len * k as f64 / steps as f64))
            .collect()
    }
}

/// Signed distance from `p` to an oriented boundary polyline whose interior
/// lies to its left. Negative means inside (left side), positive outside.
pub fn signed_boundary_distance(p: Vec2, boundary: &Polyline) -> f64 {
    let proj = boundary.project(p);
    let pts = boundary.points();
    if proj.distance == 0.0 || pts.len() < 2 {
        return proj.distance;
    }
    let seg = proj.segment;
    let a = pts[seg];
    let b = pts[seg + 1];
    let at_vertex = if proj.t <= 0.0 && seg > 0 {
        Some((pts[seg - 1], a, b))
    } else if proj.t >= 1.0 && seg + 2 < pts.len() {
        Some((a, b, pts[seg + 2]))
    } else {
        None
    };
    let inside = match at_vertex {
        Some((prev, v, next)) => {
            let left_of_first = (v - prev).cross(p - prev) > 0.0;
            let left_of_second = (next - v).cross(p - v) > 0.0;
            if (v - prev).cross(next - v) >= 0.0 {
                // convex corner of the interior
                left_of_first && left_of_second
            } else {
                left_of_first || left_of_second
            }
        }
        None => (b - a).cross(p - a) > 0.0,
    };
    if inside {
        -proj.distance
    } else {
        proj.distance
    }
}

/// Oriented rectangle given by center, heading and full extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Self {
            center,
            heading,
            length,
            width,
        }
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Vec2; 4] {
        let f = Vec2::from_angle(self.heading) * (0.5 * self.length);
        let l = Vec2::from_angle(self.heading).perp() * (0.5 * self.width);
        let c = self.center;
        [c + f - l, c + f + l, c - f + l, c - f - l]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let local = (p - self.center).rotate(-self.heading);
        local.x.abs() <= 0.5 * self.length && local.y.abs() <= 0.5 * self.width
    }

    fn axes(&self) -> [Vec2; 2] {
        let u = Vec2::from_angle(self.heading);
        [u, u.perp()]
    }

    fn project_onto(&self, axis: Vec2) -> (f64, f64) {
        let c = self.center.dot(axis);
        let u = Vec2::from_angle(self.heading);
        let r = 0.5 * self.length * u.dot(axis).abs() + 0.5 * self.width * u.perp().dot(axis).abs();
        (c - r, c + r)
    }

    /// Minimum projection overlap over the four separating axes; positive
    /// means the boxes overlap on every axis.
    fn min_axis_overlap(&self, other: &OrientedBox) -> f64 {
        let mut min_overlap = f64::INFINITY;
        for axis in self.axes().into_iter().chain(other.axes()) {
            let (a0, a1) = self.project_onto(axis);
            let (b0, b1) = other.project_onto(axis);
            let overlap = a1.min(b1) - a0.max(b0);
            min_overlap = min_overlap.min(overlap);
        }
        min_overlap
    }

    pub fn overlaps(&self, other: &OrientedBox) -> bool {
        self.min_axis_overlap(other) > 0.0
    }

    /// Separation distance between the two rectangles; negative penetration
    /// depth (minimum translation distance) when they overlap.
    pub fn gap(&self, other: &OrientedBox) -> f64 {
        let overlap = self.min_axis_overlap(other);
        if overlap > 0.0 {
            return -overlap;
        }
        let a = self.corners();
        let b = other.corners();
        let mut best = f64::INFINITY;
        for i in 0..4 {
            for j in 0..4 {
                let d = segment_segment_distance(a[i], a[(i + 1) % 4], b[j], b[(j + 1) % 4]);
                best = best.min(d);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
        assert!((wrap_angle(2.0 * PI + 0.25) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn polyline_arc_and_projection() {
        let pl = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)]);
        assert_eq!(pl.length(), 20.0);
        assert_eq!(pl.point_at(15.0), Vec2::new(10.0, 5.0));
        let proj = pl.project(Vec2::new(5.0, 2.0));
        assert_eq!(proj.arc, 5.0);
        assert_eq!(proj.lateral, 2.0);
        let proj = pl.project(Vec2::new(5.0, -2.0));
        assert_eq!(proj.lateral, -2.0);
        assert!((pl.net_heading_change() - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn axis_aligned_gap() {
        let a = OrientedBox::new(Vec2::new(0.0, 0.0), 0.0, 4.0, 2.0);
        let b = OrientedBox::new(Vec2::new(10.0, 0.0), 0.0, 4.0, 2.0);
        assert_eq!(a.gap(&b), 6.0);
        assert!(a.gap(&a) < 0.0);
        // penetration depth equals the smaller axis overlap
        assert_eq!(a.gap(&a), -2.0);
    }

    #[test]
    fn boundary_sign_convention() {
        // road on the left of a +x boundary
        let edge = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)]);
        assert_eq!(signed_boundary_distance(Vec2::new(5.0, 2.0), &edge), -2.0);
        assert_eq!(signed_boundary_distance(Vec2::new(5.0, -2.0), &edge), 2.0);
        assert_eq!(signed_boundary_distance(Vec2::new(5.0, 0.0), &edge), 0.0);
    }

    #[test]
    fn boundary_sign_at_corners() {
        // convex interior corner: square boundary traversed counter-clockwise
        let sq = Polyline::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(10.0, 0.0),
            Vec2::new(10.0, 10.0),
        ]);
        assert!(signed_boundary_distance(Vec2::new(11.0, -1.0), &sq) > 0.0);
        assert!(signed_boundary_distance(Vec2::new(9.0, 1.0), &sq) < 0.0);
        // reflex interior corner: traverse clockwise
        let rev = Polyline::new(vec![
            Vec2::new(10.0, 10.0),
            Vec2::new(10.0, 0.0),
            Vec2::new(0.0, 0.0),
        ]);
        assert!(signed_boundary_distance(Vec2::new(11.0, -1.0), &rev) < 0.0);
        assert!(signed_boundary_distance(Vec2::new(9.0, 1.0), &rev) > 0.0);
    }
}
