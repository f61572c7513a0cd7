//! Tracker fusion for the avatar: headset gating, neck/wrist overrides with
//! two-bone arm IK, walk-cycle sampling, and capsule export for sensing.

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bvh::{BvhClip, BvhJoint};
use super::fk::{fk, JointPose, SkeletonPose};
use crate::geom::{normalize_angle, Transform, Vec3};
use crate::sensor::{Label, Primitive, Shape};
use crate::world::ActorId;

#[derive(Debug, Error, PartialEq)]
pub enum AvatarError {
    #[error("joint {0:?} not found in skeleton")]
    MissingJoint(String),
    #[error("rig bone {parent}->{child} is not a hierarchy edge")]
    NotAnEdge { parent: usize, child: usize },
    #[error("rig bone radius must be positive")]
    BadRadius,
}

/// Applies headset motion to the avatar root only once it exceeds the
/// thresholds. Sub-threshold input returns `prev_root` unchanged.
pub fn gate_headset(prev_root: &Transform, headset: &Transform, t_pos: f64, t_rot: f64) -> Transform {
    let mut root = *prev_root;
    let delta = headset.xy() - prev_root.xy();
    if delta.norm() >= t_pos {
        root.position.x = headset.position.x;
        root.position.y = headset.position.y;
    }
    let dyaw = normalize_angle(headset.yaw - prev_root.yaw);
    if dyaw.abs() >= t_rot {
        root.yaw = normalize_angle(headset.yaw);
    }
    root
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmIkSolution {
    /// Interior angle at the elbow; π is a straight arm.
    pub elbow_angle: f64,
    pub reachable: bool,
    pub elbow_position: Vec3,
    /// Where the wrist ends up; equals the target when reachable.
    pub wrist_position: Vec3,
}

fn any_perpendicular(u: Vec3) -> Vec3 {
    let helper = if u.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    u.cross(&helper).normalize()
}

/// Analytic two-bone solve. `pole` picks the bend plane: the elbow is placed
/// on the side of the shoulder→target line that `pole` points to.
pub fn solve_arm_ik(shoulder: Vec3, upper: f64, fore: f64, target: Vec3, pole: Vec3) -> ArmIkSolution {
    let to_target = target - shoulder;
    let d = to_target.norm();
    let lo = (upper - fore).abs();
    let hi = upper + fore;
    let dc = d.clamp(lo, hi);
    let reachable = dc == d;

    let cos_elbow = ((upper * upper + fore * fore - dc * dc) / (2.0 * upper * fore)).clamp(-1.0, 1.0);
    let elbow_angle = cos_elbow.acos();

    let u = if d > 0.0 {
        to_target / d
    } else {
        // folded arm: reach along the pole axis
        let p = pole.try_normalize(0.0).unwrap_or(-Vec3::z());
        any_perpendicular(p).cross(&p).normalize()
    };
    let mut w = pole - u * pole.dot(&u);
    if w.norm() < 1e-12 {
        w = any_perpendicular(u);
    }
    let w = w.normalize();

    let (cos_s, sin_s) = if dc > 0.0 {
        let c = ((upper * upper + dc * dc - fore * fore) / (2.0 * upper * dc)).clamp(-1.0, 1.0);
        (c, (1.0 - c * c).max(0.0).sqrt())
    } else {
        (0.0, 1.0)
    };
    let elbow_position = shoulder + (u * cos_s + w * sin_s) * upper;
    let wrist_position = shoulder + u * dc;
    ArmIkSolution {
        elbow_angle,
        reachable,
        elbow_position,
        wrist_position,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerSample {
    pub time: f64,
    pub headset: Transform,
    #[serde(default)]
    pub left_hand: Option<Transform>,
    #[serde(default)]
    pub right_hand: Option<Transform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmJoints {
    pub shoulder: String,
    pub elbow: String,
    pub wrist: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AvatarConfig {
    /// Minimum horizontal headset displacement applied to the root (m).
    pub t_pos: f64,
    /// Minimum headset yaw change applied to the root (rad).
    pub t_rot: f64,
    pub neck: String,
    pub left_arm: ArmJoints,
    pub right_arm: ArmJoints,
    /// Bend-plane hint for the elbows, world frame.
    pub pole: Vec3,
}

impl Default for AvatarConfig {
    fn default() -> Self {
        Self {
            t_pos: 0.01,
            t_rot: 1f64.to_radians(),
            neck: "Neck".into(),
            left_arm: ArmJoints {
                shoulder: "LeftArm".into(),
                elbow: "LeftForeArm".into(),
                wrist: "LeftHand".into(),
            },
            right_arm: ArmJoints {
                shoulder: "RightArm".into(),
                elbow: "RightForeArm".into(),
                wrist: "RightHand".into(),
            },
            pole: Vec3::new(-0.3, 0.0, -1.0),
        }
    }
}

/// Joint indices resolved from an [`AvatarConfig`] against one skeleton.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvatarBinding {
    pub neck: usize,
    pub left: [usize; 3],
    pub right: [usize; 3],
}

impl AvatarBinding {
    pub fn resolve(joints: &[BvhJoint], config: &AvatarConfig) -> Result<Self, AvatarError> {
        let find = |name: &str| {
            joints
                .iter()
                .position(|j| j.name == name)
                .ok_or_else(|| AvatarError::MissingJoint(name.to_string()))
        };
        let arm = |a: &ArmJoints| -> Result<[usize; 3], AvatarError> {
            Ok([find(&a.shoulder)?, find(&a.elbow)?, find(&a.wrist)?])
        };
        Ok(Self {
            neck: find(&config.neck)?,
            left: arm(&config.left_arm)?,
            right: arm(&config.right_arm)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedAvatar {
    /// Gated avatar root for the walker.
    pub root: Transform,
    pub pose: SkeletonPose,
}

fn place_arm(pose: &mut SkeletonPose, arm: [usize; 3], hand: &Transform, pole: Vec3) {
    let [s, e, w] = arm;
    let shoulder = pose.joints[s].position;
    let upper = (pose.joints[e].position - shoulder).norm();
    let fore = (pose.joints[w].position - pose.joints[e].position).norm();
    if upper <= 0.0 || fore <= 0.0 {
        return;
    }
    let sol = solve_arm_ik(shoulder, upper, fore, hand.position, pole);
    pose.joints[e].position = sol.elbow_position;
    pose.joints[w] = JointPose {
        position: sol.wrist_position,
        rotation: hand.rotation(),
    };
}

/// Overrides the base pose with tracker data: root gating, neck orientation
/// from the headset, and each tracked wrist placed by arm IK. Fields absent
/// from the tracker leave the corresponding joints at the base pose.
pub fn compose_avatar(
    base: &SkeletonPose,
    prev_root: &Transform,
    tracker: Option<&TrackerSample>,
    binding: &AvatarBinding,
    config: &AvatarConfig,
) -> ComposedAvatar {
    let Some(sample) = tracker else {
        return ComposedAvatar {
            root: *prev_root,
            pose: base.clone(),
        };
    };
    let root = gate_headset(prev_root, &sample.headset, config.t_pos, config.t_rot);
    let mut pose = base.clone();
    pose.joints[binding.neck].rotation = sample.headset.rotation();
    if let Some(hand) = &sample.left_hand {
        place_arm(&mut pose, binding.left, hand, config.pole);
    }
    if let Some(hand) = &sample.right_hand {
        place_arm(&mut pose, binding.right, hand, config.pole);
    }
    ComposedAvatar { root, pose }
}

/// Walk-cycle frame for a traveled distance: floor(frac(distance / stride) · F).
pub fn walk_cycle_frame(distance: f64, stride: f64, frames: usize) -> usize {
    if frames == 0 {
        return 0;
    }
    let phase = distance.rem_euclid(stride) / stride;
    ((phase * frames as f64).floor() as usize).min(frames - 1)
}

pub fn walk_cycle_pose(clip: &BvhClip, distance: f64, stride: f64, root: &Isometry3<f64>) -> SkeletonPose {
    let frame = walk_cycle_frame(distance, stride, clip.frame_count());
    fk(clip, frame, root).expect("walk-cycle frame index is in range")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigBone {
    pub parent: usize,
    pub child: usize,
    pub radius: f64,
}

/// Collision capsules attached to skeleton edges. A bone whose parent and
/// child are the same joint is a sphere at that joint.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AvatarRig {
    pub bones: Vec<RigBone>,
}

impl AvatarRig {
    pub fn new(joints: &[BvhJoint], bones: Vec<RigBone>) -> Result<Self, AvatarError> {
        for b in &bones {
            if !(b.radius > 0.0) {
                return Err(AvatarError::BadRadius);
            }
            let is_edge = b.child < joints.len()
                && (joints[b.child].parent == Some(b.parent) || b.parent == b.child);
            if !is_edge {
                return Err(AvatarError::NotAnEdge {
                    parent: b.parent,
                    child: b.child,
                });
            }
        }
        Ok(Self { bones })
    }

    /// One capsule per hierarchy edge, radius chosen by joint name, plus a
    /// sphere for every joint named like a head.
    pub fn for_skeleton(joints: &[BvhJoint]) -> Self {
        let mut bones = Vec::new();
        for (child, j) in joints.iter().enumerate() {
            let name = j.name.to_ascii_lowercase();
            if let Some(parent) = j.parent {
                let radius = if name.contains("hand") || name.contains("forearm") {
                    0.045
                } else if name.contains("arm") || name.contains("shoulder") {
                    0.055
                } else if name.contains("leg") || name.contains("foot") {
                    0.07
                } else if name.contains("neck") || name.contains("head") {
                    0.06
                } else {
                    0.12
                };
                bones.push(RigBone {
                    parent,
                    child,
                    radius,
                });
            }
            if name == "head" {
                bones.push(RigBone {
                    parent: child,
                    child,
                    radius: 0.11,
                });
            }
        }
        Self { bones }
    }
}

pub fn avatar_capsules(pose: &SkeletonPose, rig: &AvatarRig, actor: ActorId) -> Vec<Primitive> {
    rig.bones
        .iter()
        .map(|b| {
            let a = pose.joints[b.parent].position;
            let c = pose.joints[b.child].position;
            let shape = if a == c {
                Shape::Sphere {
                    center: a,
                    radius: b.radius,
                }
            } else {
                Shape::Capsule {
                    a,
                    b: c,
                    radius: b.radius,
                }
            };
            Primitive {
                shape,
                label: Label::Pedestrian,
                actor: Some(actor),
            }
        })
        .collect()
}
