//! Forward kinematics over a BVH hierarchy.

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::bvh::{BvhClip, BvhError, BvhJoint, Channel};
use crate::geom::{Transform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointPose {
    pub position: Vec3,
    pub rotation: UnitQuaternion<f64>,
}

impl JointPose {
    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.rotation)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
    }
}

/// World transform of every joint, indexed like the clip's joint list.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SkeletonPose {
    pub joints: Vec<JointPose>,
}

impl SkeletonPose {
    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(JointPose::is_finite)
    }

    /// Applies a rigid transform to every joint.
    pub fn transformed(&self, by: &Isometry3<f64>) -> Self {
        Self {
            joints: self
                .joints
                .iter()
                .map(|j| {
                    let iso = by * j.isometry();
                    JointPose {
                        position: iso.translation.vector,
                        rotation: iso.rotation,
                    }
                })
                .collect(),
        }
    }
}

/// Rotation taking BVH axes (y up, z forward, x left) into the world frame
/// (z up, x forward, y left).
pub fn bvh_to_world() -> UnitQuaternion<f64> {
    let m = Matrix3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

/// World placement of a clip's root for an avatar standing at `anchor`.
pub fn avatar_root(anchor: &Transform) -> Isometry3<f64> {
    let mut iso = anchor.isometry();
    iso.rotation *= bvh_to_world();
    iso
}

fn axis_rotation(channel: Channel, degrees: f64) -> UnitQuaternion<f64> {
    let axis = match channel.axis() {
        0 => Vector3::x_axis(),
        1 => Vector3::y_axis(),
        _ => Vector3::z_axis(),
    };
    UnitQuaternion::from_axis_angle(&axis, degrees.to_radians())
}

/// Local transform of one joint: translation(offset + position channels)
/// followed by the rotation channels composed in their listed order.
pub fn local_transform(joint: &BvhJoint, values: &[f64], unit_scale: f64) -> Isometry3<f64> {
    let mut translation = joint.offset;
    let mut rotation = UnitQuaternion::identity();
    for (channel, value) in joint.channels.iter().zip(values) {
        if channel.is_rotation() {
            rotation *= axis_rotation(*channel, *value);
        } else {
            translation[channel.axis()] += value;
        }
    }
    Isometry3::from_parts(Translation3::from(translation / unit_scale), rotation)
}

/// Forward kinematics for one row of channel values.
pub fn fk_row(joints: &[BvhJoint], row: &[f64], unit_scale: f64, root: &Isometry3<f64>) -> SkeletonPose {
    let mut world: Vec<Isometry3<f64>> = Vec::with_capacity(joints.len());
    let mut cursor = 0;
    for joint in joints {
        let n = joint.channels.len();
        let local = local_transform(joint, &row[cursor..cursor + n], unit_scale);
        cursor += n;
        let parent = joint.parent.map_or(*root, |p| world[p]);
        world.push(parent * local);
    }
    SkeletonPose {
        joints: world
            .into_iter()
            .map(|iso| JointPose {
                position: iso.translation.vector,
                rotation: iso.rotation,
            })
            .collect(),
    }
}

pub fn fk(clip: &BvhClip, frame: usize, root: &Isometry3<f64>) -> Result<SkeletonPose, BvhError> {
    let row = clip.frames.get(frame).ok_or(BvhError::FrameOutOfRange {
        frame,
        frames: clip.frames.len(),
    })?;
    Ok(fk_row(&clip.joints, row, clip.unit_scale, root))
}
