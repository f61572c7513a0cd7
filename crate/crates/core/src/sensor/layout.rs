//! Binary layouts for sensor payloads on the wire.
//!
//! Point cloud: 17 bytes per point, `x y z` as little-endian f32 (sensor
//! frame, meters), one label byte, then the actor id as little-endian u32
//! (0 for environment). Camera planes are row-major: depth as little-endian
//! f32 meters, labels as one byte per pixel, rgb as three bytes per pixel.

use super::{CameraFrame, Label, LidarPoint, PointCloud};
use crate::geom::Vec3;
use crate::world::ActorId;

pub const POINT_STRIDE: usize = 17;

pub fn encode_points(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * POINT_STRIDE);
    for p in &cloud.points {
        for v in p.position.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.push(p.label.as_byte());
        out.extend_from_slice(&(p.actor.map_or(0, |a| a.0) as u32).to_le_bytes());
    }
    out
}

/// Decoded point: position, label, actor (None for environment).
pub type WirePoint = ([f32; 3], Label, Option<ActorId>);

pub fn decode_points(bytes: &[u8]) -> Option<Vec<WirePoint>> {
    if bytes.len() % POINT_STRIDE != 0 {
        return None;
    }
    bytes
        .chunks_exact(POINT_STRIDE)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[i..i + 4].try_into().unwrap());
            let label = Label::from_byte(c[12])?;
            let actor = u32::from_le_bytes(c[13..17].try_into().unwrap());
            Some(([f(0), f(4), f(8)], label, (actor != 0).then_some(ActorId(actor as u64))))
        })
        .collect()
}

pub fn encode_depth(frame: &CameraFrame) -> Vec<u8> {
    frame.depth.iter().flat_map(|d| (*d as f32).to_le_bytes()).collect()
}

pub fn decode_depth(bytes: &[u8]) -> Option<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    )
}

pub fn encode_labels(frame: &CameraFrame) -> Vec<u8> {
    frame.labels.iter().map(|l| l.as_byte()).collect()
}

pub fn encode_rgb(frame: &CameraFrame) -> Vec<u8> {
    frame.rgb.iter().flatten().copied().collect()
}

/// Lossless in-memory point used by tests and tools; wire precision is f32.
pub fn to_wire_point(p: &LidarPoint) -> WirePoint {
    (
        [p.position.x as f32, p.position.y as f32, p.position.z as f32],
        p.label,
        p.actor,
    )
}

pub fn wire_position(p: &WirePoint) -> Vec3 {
    Vec3::new(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64)
}
