//! Ray-cast sensor synthesis against analytic scene primitives.

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec3;
use crate::world::ActorId;

pub mod camera;
pub mod layout;
pub mod lidar;
pub mod scene;

pub use camera::{render_camera, CameraConfig, CameraFrame};
pub use lidar::{lidar_scan, LidarConfig, LidarPoint, PointCloud};
pub use scene::scene_from_snapshot;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("invalid sensor config: {0}")]
    InvalidConfig(String),
}

/// Semantic classes. The discriminant is the label byte used in exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Label {
    Sky = 0,
    Road = 1,
    Building = 2,
    Pole = 3,
    Vehicle = 4,
    Pedestrian = 5,
}

impl Label {
    pub const ALL: [Label; 6] = [
        Label::Sky,
        Label::Road,
        Label::Building,
        Label::Pole,
        Label::Vehicle,
        Label::Pedestrian,
    ];

    pub fn as_byte(self) -> u8 {
        self as u8
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(b as usize).copied()
    }

    /// Flat palette color.
    pub fn color(self) -> [u8; 3] {
        match self {
            Label::Sky => [70, 130, 180],
            Label::Road => [128, 64, 128],
            Label::Building => [70, 70, 70],
            Label::Pole => [153, 153, 153],
            Label::Vehicle => [0, 0, 142],
            Label::Pedestrian => [220, 20, 60],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Points with `normal · p = offset`; `normal` must be unit.
    Plane { normal: Vec3, offset: f64 },
    Sphere { center: Vec3, radius: f64 },
    Capsule { a: Vec3, b: Vec3, radius: f64 },
    Obb {
        center: Vec3,
        half_extents: Vec3,
        rotation: UnitQuaternion<f64>,
    },
}

impl Shape {
    /// Bounding sphere, or `None` for unbounded shapes.
    fn bounds(&self) -> Option<(Vec3, f64)> {
        match *self {
            Shape::Plane { .. } => None,
            Shape::Sphere { center, radius } => Some((center, radius)),
            Shape::Capsule { a, b, radius } => Some(((a + b) * 0.5, (b - a).norm() * 0.5 + radius)),
            Shape::Obb {
                center,
                half_extents,
                ..
            } => Some((center, half_extents.norm())),
        }
    }

    pub fn is_finite(&self) -> bool {
        let v = |p: &Vec3| p.iter().all(|x| x.is_finite());
        match self {
            Shape::Plane { normal, offset } => v(normal) && offset.is_finite(),
            Shape::Sphere { center, radius } => v(center) && radius.is_finite(),
            Shape::Capsule { a, b, radius } => v(a) && v(b) && radius.is_finite(),
            Shape::Obb {
                center,
                half_extents,
                rotation,
            } => v(center) && v(half_extents) && rotation.coords.iter().all(|x| x.is_finite()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub label: Label,
    /// `None` for environment geometry.
    pub actor: Option<ActorId>,
}

#[derive(Debug, Clone, Default)]
pub struct Scene {
    primitives: Vec<Primitive>,
    bounds: Vec<Option<(Vec3, f64)>>,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        let bounds = primitives.iter().map(|p| p.shape.bounds()).collect();
        Self { primitives, bounds }
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn push(&mut self, p: Primitive) {
        self.bounds.push(p.shape.bounds());
        self.primitives.push(p);
    }

    pub fn extend(&mut self, ps: impl IntoIterator<Item = Primitive>) {
        for p in ps {
            self.push(p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    /// Normalizes `dir`.
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Self {
            origin,
            dir: dir.normalize(),
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub normal: Vec3,
    pub actor: Option<ActorId>,
    pub label: Label,
}

fn sphere_entry(ray: &Ray, center: Vec3, radius: f64) -> Option<f64> {
    let oc = ray.origin - center;
    let c = oc.norm_squared() - radius * radius;
    if c < 0.0 {
        return None;
    }
    let b = oc.dot(&ray.dir);
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t >= 0.0).then_some(t)
}

fn segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Entry distance and outward normal of `ray` into `shape`. Rays starting
/// inside a solid report no hit.
pub fn intersect(ray: &Ray, shape: &Shape) -> Option<(f64, Vec3)> {
    match *shape {
        Shape::Plane { normal, offset } => {
            let denom = normal.dot(&ray.dir);
            if denom == 0.0 {
                return None;
            }
            let t = (offset - normal.dot(&ray.origin)) / denom;
            if t < 0.0 {
                return None;
            }
            let n = if denom < 0.0 { normal } else { -normal };
            Some((t, n))
        }
        Shape::Sphere { center, radius } => {
            let t = sphere_entry(ray, center, radius)?;
            Some((t, (ray.at(t) - center) / radius))
        }
        Shape::Capsule { a, b, radius } => {
            if segment_distance(ray.origin, a, b) < radius {
                return None;
            }
            let ba = b - a;
            let oa = ray.origin - a;
            let baba = ba.norm_squared();
            let bard = ba.dot(&ray.dir);
            let baoa = ba.dot(&oa);
            let mut best: Option<(f64, Vec3)> = None;
            let mut consider = |t: f64, n: Vec3| {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, n));
                }
            };
            let k2 = baba - bard * bard;
            if baba > 0.0 && k2 > 1e-12 * baba {
                let k1 = baba * oa.dot(&ray.dir) - baoa * bard;
                let k0 = baba * oa.norm_squared() - baoa * baoa - radius * radius * baba;
                let h = k1 * k1 - k2 * k0;
                if h >= 0.0 {
                    let t = (-k1 - h.sqrt()) / k2;
                    let y = baoa + t * bard;
                    if t >= 0.0 && y > 0.0 && y < baba {
                        let p = ray.at(t);
                        let axis_point = a + ba * (y / baba);
                        consider(t, (p - axis_point) / radius);
                    }
                }
            }
            for c in [a, b] {
                if let Some(t) = sphere_entry(ray, c, radius) {
                    consider(t, (ray.at(t) - c) / radius);
                }
            }
            best
        }
        Shape::Obb {
            center,
            half_extents,
            rotation,
        } => {
            let inv = rotation.inverse();
            let o = inv * (ray.origin - center);
            let d = inv * ray.dir;
            let mut t_near = f64::NEG_INFINITY;
            let mut t_far = f64::INFINITY;
            let mut axis = 0;
            let mut sign = 1.0;
            for i in 0..3 {
                if d[i] == 0.0 {
                    if o[i].abs() > half_extents[i] {
                        return None;
                    }
                    continue;
                }
                let t1 = (-half_extents[i] - o[i]) / d[i];
                let t2 = (half_extents[i] - o[i]) / d[i];
                let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                if lo > t_near {
                    t_near = lo;
                    axis = i;
                    sign = -d[i].signum();
                }
                t_far = t_far.min(hi);
            }
            if t_near > t_far || t_near < 0.0 {
                return None;
            }
            let mut n = Vec3::zeros();
            n[axis] = sign;
            Some((t_near, rotation * n))
        }
    }
}

fn actor_rank(actor: Option<ActorId>) -> u64 {
    actor.map_or(u64::MAX, |a| a.0)
}

/// Nearest hit along the ray. Equal distances resolve to the lowest actor id;
/// environment geometry ranks after every actor.
pub fn ray_cast(ray: &Ray, scene: &Scene) -> Option<Hit> {
    let mut best: Option<(f64, Vec3, &Primitive)> = None;
    for (prim, bound) in scene.primitives.iter().zip(&scene.bounds) {
        if let Some((c, r)) = bound {
            // cheap reject on the bounding sphere
            let oc = ray.origin - c;
            let b = oc.dot(&ray.dir);
            let cc = oc.norm_squared() - r * r;
            if cc > 0.0 && (b > 0.0 || b * b < cc) {
                continue;
            }
            if let Some((bt, _, _)) = best {
                if cc > 0.0 && -b - (b * b - cc).max(0.0).sqrt() > bt {
                    continue;
                }
            }
        }
        let Some((t, n)) = intersect(ray, &prim.shape) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((bt, _, bp)) => t < bt || (t == bt && actor_rank(prim.actor) < actor_rank(bp.actor)),
        };
        if better {
            best = Some((t, n, prim));
        }
    }
    best.map(|(t, normal, prim)| Hit {
        t,
        point: ray.at(t),
        normal,
        actor: prim.actor,
        label: prim.label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(shape: Shape, label: Label) -> Primitive {
        Primitive {
            shape,
            label,
            actor: None,
        }
    }

    #[test]
    fn plane_ahead() {
        let scene = Scene::new(vec![env(
            Shape::Plane {
                normal: Vec3::x(),
                offset: 10.0,
            },
            Label::Building,
        )]);
        let hit = ray_cast(&Ray::new(Vec3::zeros(), Vec3::x()), &scene).unwrap();
        assert_eq!(hit.t, 10.0);
        assert_eq!(hit.normal, -Vec3::x());
    }

    #[test]
    fn sphere_ahead() {
        let scene = Scene::new(vec![env(
            Shape::Sphere {
                center: Vec3::new(5.0, 0.0, 0.0),
                radius: 1.0,
            },
            Label::Pole,
        )]);
        let hit = ray_cast(&Ray::new(Vec3::zeros(), Vec3::x()), &scene).unwrap();
        assert_eq!(hit.t, 4.0);
    }

    #[test]
    fn ray_pointing_away() {
        let scene = Scene::new(vec![
            env(
                Shape::Sphere {
                    center: Vec3::new(5.0, 0.0, 0.0),
                    radius: 1.0,
                },
                Label::Pole,
            ),
            env(
                Shape::Plane {
                    normal: Vec3::x(),
                    offset: 10.0,
                },
                Label::Building,
            ),
        ]);
        assert!(ray_cast(&Ray::new(Vec3::zeros(), -Vec3::x()), &scene).is_none());
    }

    #[test]
    fn tie_goes_to_lowest_actor() {
        let sphere = Shape::Sphere {
            center: Vec3::new(5.0, 0.0, 0.0),
            radius: 1.0,
        };
        let scene = Scene::new(vec![
            env(sphere, Label::Building),
            Primitive {
                shape: sphere,
                label: Label::Vehicle,
                actor: Some(ActorId(9)),
            },
            Primitive {
                shape: sphere,
                label: Label::Pedestrian,
                actor: Some(ActorId(3)),
            },
        ]);
        let hit = ray_cast(&Ray::new(Vec3::zeros(), Vec3::x()), &scene).unwrap();
        assert_eq!(hit.actor, Some(ActorId(3)));
    }

    #[test]
    fn rotated_box() {
        let obb = Shape::Obb {
            center: Vec3::new(10.0, 0.0, 0.0),
            half_extents: Vec3::new(2.0, 1.0, 1.0),
            rotation: UnitQuaternion::from_axis_angle(&Vec3::z_axis(), std::f64::consts::FRAC_PI_2),
        };
        let (t, n) = intersect(&Ray::new(Vec3::zeros(), Vec3::x()), &obb).unwrap();
        assert!((t - 9.0).abs() < 1e-12);
        assert!((n + Vec3::x()).norm() < 1e-12);
        // origin inside the box
        assert!(intersect(&Ray::new(Vec3::new(10.0, 0.0, 0.0), Vec3::x()), &obb).is_none());
    }

    #[test]
    fn capsule_side_and_cap() {
        let cap = Shape::Capsule {
            a: Vec3::new(5.0, 0.0, 0.0),
            b: Vec3::new(5.0, 0.0, 2.0),
            radius: 0.5,
        };
        let (t, n) = intersect(&Ray::new(Vec3::new(0.0, 0.0, 1.0), Vec3::x()), &cap).unwrap();
        assert!((t - 4.5).abs() < 1e-12);
        assert!((n + Vec3::x()).norm() < 1e-12);
        // straight down onto the top cap
        let (t, _) = intersect(&Ray::new(Vec3::new(5.0, 0.0, 10.0), -Vec3::z()), &cap).unwrap();
        assert!((t - 7.5).abs() < 1e-12);
    }
}
