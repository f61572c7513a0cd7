//! 2D footprint overlap: oriented rectangles and discs.

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Footprint {
    Rect { center: Vec2, yaw: f64, half: Vec2 },
    Disc { center: Vec2, radius: f64 },
}

fn to_local(p: Vec2, center: Vec2, yaw: f64) -> Vec2 {
    let d = p - center;
    let (s, c) = yaw.sin_cos();
    Vec2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
}

/// Penetration depth of a disc into a rectangle; negative values are the
/// separating gap.
pub fn disc_rect_depth(disc_center: Vec2, radius: f64, center: Vec2, yaw: f64, half: Vec2) -> f64 {
    let p = to_local(disc_center, center, yaw);
    let inside_x = half.x - p.x.abs();
    let inside_y = half.y - p.y.abs();
    if inside_x >= 0.0 && inside_y >= 0.0 {
        return radius + inside_x.min(inside_y);
    }
    let q = Vec2::new(p.x.clamp(-half.x, half.x), p.y.clamp(-half.y, half.y));
    radius - (p - q).norm()
}

fn corners(center: Vec2, yaw: f64, half: Vec2) -> [Vec2; 4] {
    let (s, c) = yaw.sin_cos();
    let ax = Vec2::new(c, s) * half.x;
    let ay = Vec2::new(-s, c) * half.y;
    [center + ax + ay, center - ax + ay, center - ax - ay, center + ax - ay]
}

/// Minimum overlap over the four separating axes; negative when apart.
pub fn rect_rect_depth(a: (Vec2, f64, Vec2), b: (Vec2, f64, Vec2)) -> f64 {
    let ca = corners(a.0, a.1, a.2);
    let cb = corners(b.0, b.1, b.2);
    let axes = [
        Vec2::new(a.1.cos(), a.1.sin()),
        Vec2::new(-a.1.sin(), a.1.cos()),
        Vec2::new(b.1.cos(), b.1.sin()),
        Vec2::new(-b.1.sin(), b.1.cos()),
    ];
    axes.iter()
        .map(|axis| {
            let span = |cs: &[Vec2; 4]| {
                cs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                    let v = c.dot(axis);
                    (lo.min(v), hi.max(v))
                })
            };
            let (alo, ahi) = span(&ca);
            let (blo, bhi) = span(&cb);
            ahi.min(bhi) - alo.max(blo)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Signed penetration depth between two footprints.
pub fn depth(a: &Footprint, b: &Footprint) -> f64 {
    match (*a, *b) {
        (Footprint::Disc { center: c1, radius: r1 }, Footprint::Disc { center: c2, radius: r2 }) => {
            r1 + r2 - (c1 - c2).norm()
        }
        (Footprint::Disc { center: dc, radius }, Footprint::Rect { center, yaw, half })
        | (Footprint::Rect { center, yaw, half }, Footprint::Disc { center: dc, radius }) => {
            disc_rect_depth(dc, radius, center, yaw, half)
        }
        (
            Footprint::Rect {
                center: c1,
                yaw: y1,
                half: h1,
            },
            Footprint::Rect {
                center: c2,
                yaw: y2,
                half: h2,
            },
        ) => rect_rect_depth((c1, y1, h1), (c2, y2, h2)),
    }
}
