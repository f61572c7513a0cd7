//! Procedural humanoid skeleton and gait clips, used as the bundled
//! pedestrian motion and in tests.

use std::f64::consts::TAU;

use super::bvh::{BvhClip, BvhJoint, Channel, DEFAULT_UNIT_SCALE};
use crate::geom::Vec3;

/// Distance covered by one full gait cycle (two steps), meters.
pub const STRIDE: f64 = 1.4;
const HIP_HEIGHT_CM: f64 = 95.0;

fn joint(name: &str, parent: Option<usize>, offset: [f64; 3], end: Option<[f64; 3]>) -> BvhJoint {
    let channels = if parent.is_none() {
        vec![
            Channel::Xposition,
            Channel::Yposition,
            Channel::Zposition,
            Channel::Zrotation,
            Channel::Xrotation,
            Channel::Yrotation,
        ]
    } else {
        vec![Channel::Zrotation, Channel::Xrotation, Channel::Yrotation]
    };
    BvhJoint {
        name: name.to_string(),
        parent,
        offset: Vec3::from(offset),
        channels,
        end_site: end.map(Vec3::from),
    }
}

/// 17-joint humanoid in centimeters, y up, facing +z.
pub fn humanoid() -> Vec<BvhJoint> {
    vec![
        joint("Hips", None, [0.0, 0.0, 0.0], None),
        joint("Spine", Some(0), [0.0, 10.0, 0.0], None),
        joint("Chest", Some(1), [0.0, 20.0, 0.0], None),
        joint("Neck", Some(2), [0.0, 22.0, 0.0], None),
        joint("Head", Some(3), [0.0, 10.0, 0.0], Some([0.0, 15.0, 0.0])),
        joint("LeftArm", Some(2), [17.0, 18.0, 0.0], None),
        joint("LeftForeArm", Some(5), [28.0, 0.0, 0.0], None),
        joint("LeftHand", Some(6), [25.0, 0.0, 0.0], Some([8.0, 0.0, 0.0])),
        joint("RightArm", Some(2), [-17.0, 18.0, 0.0], None),
        joint("RightForeArm", Some(8), [-28.0, 0.0, 0.0], None),
        joint("RightHand", Some(9), [-25.0, 0.0, 0.0], Some([-8.0, 0.0, 0.0])),
        joint("LeftUpLeg", Some(0), [9.0, -3.0, 0.0], None),
        joint("LeftLeg", Some(11), [0.0, -44.0, 0.0], None),
        joint("LeftFoot", Some(12), [0.0, -43.0, 0.0], Some([0.0, -5.0, 13.0])),
        joint("RightUpLeg", Some(0), [-9.0, -3.0, 0.0], None),
        joint("RightLeg", Some(14), [0.0, -44.0, 0.0], None),
        joint("RightFoot", Some(15), [0.0, -43.0, 0.0], Some([0.0, -5.0, 13.0])),
    ]
}

/// Channel row for gait phase `phase` (cycles), swing amplitude `amp` in
/// [0, 1] (0 = standing) and forward root displacement `forward_cm`.
pub fn gait_row(phase: f64, amp: f64, forward_cm: f64) -> Vec<f64> {
    let s = (TAU * phase).sin();
    let s_opp = (TAU * phase + TAU / 2.0).sin();
    let bob = 1.5 * amp * (2.0 * TAU * phase).cos();
    let knee = |x: f64| amp * (8.0 + 25.0 * (-x).max(0.0));
    let mut row = Vec::with_capacity(6 + 16 * 3);
    // Hips: position then Z X Y rotation
    row.extend([0.0, HIP_HEIGHT_CM + bob, forward_cm, 0.0, 0.0, 0.0]);
    row.extend([0.0, 2.0 * amp, 0.0]); // Spine
    row.extend([0.0, 0.0, 0.0]); // Chest
    row.extend([0.0, 0.0, 0.0]); // Neck
    row.extend([0.0, 0.0, 0.0]); // Head
    row.extend([-80.0, 0.0, 20.0 * amp * s]); // LeftArm
    row.extend([0.0, 0.0, -10.0]); // LeftForeArm
    row.extend([0.0, 0.0, 0.0]); // LeftHand
    row.extend([80.0, 0.0, 20.0 * amp * s]); // RightArm
    row.extend([0.0, 0.0, 10.0]); // RightForeArm
    row.extend([0.0, 0.0, 0.0]); // RightHand
    row.extend([0.0, -25.0 * amp * s, 0.0]); // LeftUpLeg
    row.extend([0.0, knee(s), 0.0]); // LeftLeg
    row.extend([0.0, 0.0, 0.0]); // LeftFoot
    row.extend([0.0, -25.0 * amp * s_opp, 0.0]); // RightUpLeg
    row.extend([0.0, knee(s_opp), 0.0]); // RightLeg
    row.extend([0.0, 0.0, 0.0]); // RightFoot
    row
}

/// One in-place gait cycle of `frames` frames, looping, at 1 cycle/s.
pub fn walk_cycle_clip(frames: usize) -> BvhClip {
    let frames = frames.max(1);
    BvhClip {
        joints: humanoid(),
        frames: (0..frames)
            .map(|k| gait_row(k as f64 / frames as f64, 1.0, 0.0))
            .collect(),
        frame_time: 1.0 / frames as f64,
        unit_scale: DEFAULT_UNIT_SCALE,
    }
}

/// Walks `distance` meters forward at `speed` m/s, then stands still for
/// `hold` seconds.
pub fn crossing_clip(distance: f64, speed: f64, hold: f64, frame_time: f64) -> BvhClip {
    let walk_time = distance / speed;
    let total = ((walk_time + hold) / frame_time).ceil() as usize + 1;
    let frames = (0..total)
        .map(|k| {
            let t = k as f64 * frame_time;
            if t < walk_time {
                let walked = speed * t;
                gait_row(walked / STRIDE, 1.0, walked * DEFAULT_UNIT_SCALE)
            } else {
                gait_row(0.0, 0.0, distance * DEFAULT_UNIT_SCALE)
            }
        })
        .collect();
    BvhClip {
        joints: humanoid(),
        frames,
        frame_time,
        unit_scale: DEFAULT_UNIT_SCALE,
    }
}
