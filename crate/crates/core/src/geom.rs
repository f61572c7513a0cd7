//! Frames, transforms and 2D polyline helpers.
//!
//! World frame: right-handed, x/y ground plane, z up, meters. Yaw is measured
//! counterclockwise from +x, in radians.

use std::f64::consts::{PI, TAU};

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Wraps an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub position: Vec3,
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub pitch: f64,
    #[serde(default)]
    pub roll: f64,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn new(position: Vec3, yaw: f64, pitch: f64, roll: f64) -> Self {
        Self {
            position,
            yaw: normalize_angle(yaw),
            pitch: normalize_angle(pitch),
            roll: normalize_angle(roll),
        }
    }

    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            yaw: 0.0,
            pitch: 0.0,
            roll: 0.0,
        }
    }

    pub fn from_xy_yaw(x: f64, y: f64, yaw: f64) -> Self {
        Self::new(Vec3::new(x, y, 0.0), yaw, 0.0, 0.0)
    }

    pub fn normalized(&self) -> Self {
        Self::new(self.position, self.yaw, self.pitch, self.roll)
    }

    /// R = Rz(yaw)·Ry(pitch)·Rx(roll).
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_euler_angles(self.roll, self.pitch, self.yaw)
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.rotation())
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let (roll, pitch, yaw) = iso.rotation.euler_angles();
        Self::new(iso.translation.vector, yaw, pitch, roll)
    }

    pub fn xy(&self) -> Vec2 {
        self.position.xy()
    }

    /// Unit heading on the ground plane.
    pub fn heading(&self) -> Vec2 {
        Vec2::new(self.yaw.cos(), self.yaw.sin())
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.pitch.is_finite()
            && self.roll.is_finite()
    }

    pub fn angles_normalized(&self) -> bool {
        [self.yaw, self.pitch, self.roll]
            .iter()
            .all(|a| *a > -PI && *a <= PI)
    }
}

/// 2D cross product (z component).
pub fn cross2(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Total arc length of a polyline.
pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Point and unit tangent at arc length `s`, clamped to the polyline ends.
pub fn point_at(points: &[Vec2], s: f64) -> Option<(Vec2, Vec2)> {
    if points.len() < 2 {
        return points.first().map(|p| (*p, Vec2::x()));
    }
    let mut remaining = s.max(0.0);
    let mut last = None;
    for w in points.windows(2) {
        let d = w[1] - w[0];
        let len = d.norm();
        if len == 0.0 {
            continue;
        }
        let dir = d / len;
        if remaining <= len {
            return Some((w[0] + dir * remaining, dir));
        }
        remaining -= len;
        last = Some((w[1], dir));
    }
    last
}

/// Closest point on a polyline to `p`: returns (arc length, distance).
pub fn project_onto(points: &[Vec2], p: Vec2) -> Option<(f64, f64)> {
    if points.is_empty() {
        return None;
    }
    if points.len() == 1 {
        return Some((0.0, (p - points[0]).norm()));
    }
    let mut best: Option<(f64, f64)> = None;
    let mut acc = 0.0;
    for w in points.windows(2) {
        let d = w[1] - w[0];
        let len2 = d.norm_squared();
        let t = if len2 > 0.0 {
            ((p - w[0]).dot(&d) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = w[0] + d * t;
        let dist = (p - q).norm();
        if best.map_or(true, |(_, bd)| dist < bd) {
            best = Some((acc + t * len2.sqrt(), dist));
        }
        acc += len2.sqrt();
    }
    best
}

/// Polyline starting at arc length `s` and running to the end.
pub fn trim_start(points: &[Vec2], s: f64) -> Vec<Vec2> {
    let Some((start, _)) = point_at(points, s) else {
        return Vec::new();
    };
    let mut out = vec![start];
    let mut acc = 0.0;
    for w in points.windows(2) {
        acc += (w[1] - w[0]).norm();
        if acc > s && w[1] != start {
            out.push(w[1]);
        }
    }
    out
}

/// Intersection of segments `a0a1` and `b0b1` as parameters `(ta, tb)` in [0, 1].
/// Parallel or collinear segments report no intersection.
pub fn segment_intersection(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> Option<(f64, f64)> {
    let r = a1 - a0;
    let s = b1 - b0;
    let denom = cross2(r, s);
    if denom == 0.0 {
        return None;
    }
    let q = b0 - a0;
    let ta = cross2(q, s) / denom;
    let tb = cross2(q, r) / denom;
    if (0.0..=1.0).contains(&ta) && (0.0..=1.0).contains(&tb) {
        Some((ta, tb))
    } else {
        None
    }
}

/// Arc length along `route` of its first crossing with segment `seg`.
pub fn first_crossing(route: &[Vec2], seg: (Vec2, Vec2)) -> Option<f64> {
    let mut acc = 0.0;
    for w in route.windows(2) {
        let len = (w[1] - w[0]).norm();
        if let Some((t, _)) = segment_intersection(w[0], w[1], seg.0, seg.1) {
            return Some(acc + t * len);
        }
        acc += len;
    }
    None
}

/// Signed area of a polygon (positive when counterclockwise).
pub fn polygon_signed_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| cross2(poly[i], poly[(i + 1) % n]))
        .sum::<f64>()
        * 0.5
}

pub fn polygon_centroid(poly: &[Vec2]) -> Vec2 {
    let a = polygon_signed_area(poly);
    if a == 0.0 {
        return poly.iter().sum::<Vec2>() / poly.len().max(1) as f64;
    }
    let n = poly.len();
    let mut c = Vec2::zeros();
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        c += (p + q) * cross2(p, q);
    }
    c / (6.0 * a)
}

pub fn polygon_is_convex(poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0.0_f64;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let z = cross2(b - a, c - b);
        if z != 0.0 {
            if sign != 0.0 && z.signum() != sign {
                return false;
            }
            sign = z.signum();
        }
    }
    true
}

/// Point strictly inside or on the boundary of a convex polygon.
pub fn convex_contains(poly: &[Vec2], p: Vec2) -> bool {
    let orient = polygon_signed_area(poly).signum();
    let n = poly.len();
    (0..n).all(|i| cross2(poly[(i + 1) % n] - poly[i], p - poly[i]) * orient >= 0.0)
}

/// Closest point to `p` on segment `ab`.
pub fn closest_on_segment(p: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let d = b - a;
    let len2 = d.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&d) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    a + d * t
}

/// Closest point of a convex polygon (boundary or interior) to `p`.
pub fn convex_closest_point(poly: &[Vec2], p: Vec2) -> Vec2 {
    if convex_contains(poly, p) {
        return p;
    }
    let n = poly.len();
    (0..n)
        .map(|i| closest_on_segment(p, poly[i], poly[(i + 1) % n]))
        .min_by(|a, b| (a - p).norm_squared().total_cmp(&(b - p).norm_squared()))
        .unwrap_or(p)
}

/// Distance from a point to a convex polygon; zero when inside.
pub fn convex_distance(poly: &[Vec2], p: Vec2) -> f64 {
    (convex_closest_point(poly, p) - p).norm()
}

/// True when the open segment `ab` passes through the interior of a convex polygon.
pub fn segment_enters_convex(poly: &[Vec2], a: Vec2, b: Vec2) -> bool {
    // Clip the segment against every edge half-plane (Cyrus–Beck).
    let orient = polygon_signed_area(poly).signum();
    let n = poly.len();
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    let d = b - a;
    for i in 0..n {
        let e0 = poly[i];
        let e1 = poly[(i + 1) % n];
        let edge = e1 - e0;
        // inward normal
        let normal = Vec2::new(-edge.y, edge.x) * orient;
        let num = normal.dot(&(a - e0));
        let den = normal.dot(&d);
        if den == 0.0 {
            if num <= 0.0 {
                return false;
            }
            continue;
        }
        let t = -num / den;
        if den > 0.0 {
            t0 = t0.max(t);
        } else {
            t1 = t1.min(t);
        }
        if t0 >= t1 {
            return false;
        }
    }
    // A non-degenerate chord strictly inside on at least one edge.
    let mid = a + d * ((t0 + t1) * 0.5);
    (0..n).all(|i| {
        let e0 = poly[i];
        let e1 = poly[(i + 1) % n];
        cross2(e1 - e0, mid - e0) * orient > 1e-12
    })
}
