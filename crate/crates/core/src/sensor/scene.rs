//! Sensing scene assembled from a world snapshot.

use nalgebra::UnitQuaternion;

use super::{Label, Primitive, Scene, Shape};
use crate::geom::Vec3;
use crate::mocap::{avatar_capsules, AvatarRig};
use crate::world::{ActorId, WorldSnapshot, WALKER_RADIUS};

pub const POLE_HALF_EXTENTS: [f64; 3] = [0.1, 0.1, 1.5];

fn yaw_box(center: Vec3, half_extents: Vec3, yaw: f64) -> Shape {
    Shape::Obb {
        center,
        half_extents,
        rotation: UnitQuaternion::from_axis_angle(&Vec3::z_axis(), yaw),
    }
}

/// Ground plane, vehicle and prop boxes, light poles and walker bodies.
/// Walkers with a pose whose joint count matches `rig` get per-bone
/// capsules, others a single upright capsule. `exclude` drops one actor,
/// typically the sensor's own vehicle.
pub fn scene_from_snapshot(snapshot: &WorldSnapshot, rig: Option<&AvatarRig>, exclude: Option<ActorId>) -> Scene {
    let mut scene = Scene::default();
    scene.push(Primitive {
        shape: Shape::Plane {
            normal: Vec3::z(),
            offset: 0.0,
        },
        label: Label::Road,
        actor: None,
    });
    let keep = |id: ActorId| Some(id) != exclude;
    for v in snapshot.vehicles.iter().filter(|v| keep(v.id)) {
        let mut center = v.transform.position;
        center.z += v.half_extents.z;
        scene.push(Primitive {
            shape: yaw_box(center, v.half_extents, v.transform.yaw),
            label: Label::Vehicle,
            actor: Some(v.id),
        });
    }
    for p in snapshot.props.iter().filter(|p| keep(p.id)) {
        let mut center = p.transform.position;
        center.z += p.half_extents.z;
        scene.push(Primitive {
            shape: yaw_box(center, p.half_extents, p.transform.yaw),
            label: Label::Building,
            actor: Some(p.id),
        });
    }
    for l in snapshot.lights.iter().filter(|l| keep(l.id)) {
        let half = Vec3::from(POLE_HALF_EXTENTS);
        scene.push(Primitive {
            shape: yaw_box(Vec3::new(l.position.x, l.position.y, half.z), half, 0.0),
            label: Label::Pole,
            actor: Some(l.id),
        });
    }
    for w in snapshot.walkers.iter().filter(|w| keep(w.id)) {
        match (&w.pose, rig) {
            (Some(pose), Some(rig))
                if rig.bones.iter().all(|b| b.parent < pose.len() && b.child < pose.len()) =>
            {
                scene.extend(avatar_capsules(pose, rig, w.id));
            }
            _ => {
                let base = w.transform.position;
                scene.push(Primitive {
                    shape: Shape::Capsule {
                        a: base + Vec3::new(0.0, 0.0, WALKER_RADIUS),
                        b: base + Vec3::new(0.0, 0.0, 1.75 - WALKER_RADIUS),
                        radius: WALKER_RADIUS,
                    },
                    label: Label::Pedestrian,
                    actor: Some(w.id),
                });
            }
        }
    }
    scene
}
