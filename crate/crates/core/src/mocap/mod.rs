//! Motion capture: BVH clips, forward kinematics, tracker fusion and the
//! avatar's collision body.

pub mod avatar;
pub mod bvh;
pub mod fk;
pub mod synth;
pub mod tracker;

pub use avatar::{
    avatar_capsules, compose_avatar, gate_headset, solve_arm_ik, walk_cycle_frame,
    walk_cycle_pose, ArmIkSolution, AvatarBinding, AvatarConfig, AvatarRig, ComposedAvatar,
    RigBone, TrackerSample,
};
pub use bvh::{export_bvh, export_clip, parse_bvh, BvhClip, BvhError, BvhJoint, Channel};
pub use fk::{avatar_root, bvh_to_world, fk, fk_row, JointPose, SkeletonPose};
pub use tracker::{parse_tracker_stream, write_tracker_stream};
