//! Positional audio cues for one listener. Playback happens client-side.

use serde::{Deserialize, Serialize};

use crate::geom::{normalize_angle, Transform, Vec2};
use crate::world::ActorId;

pub const IDLE_INTENSITY: f64 = 0.2;
pub const BRAKE_CUE_THRESHOLD: f64 = 0.5;
/// Reference distance for inverse-distance attenuation, m.
pub const REF_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Engine,
    Footsteps,
    Voice,
    Ambient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioSource {
    /// `None` for environmental sources.
    pub actor: Option<ActorId>,
    pub kind: SourceKind,
    pub base_gain: f64,
    /// World position; ignored for ambient sources.
    #[serde(default)]
    pub position: Vec2,
    #[serde(default)]
    pub intensity: f64,
    #[serde(default)]
    pub brake_cue: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioCue {
    pub actor: Option<ActorId>,
    pub kind: SourceKind,
    pub gain: f64,
    /// Positive is right.
    pub pan: f64,
    pub intensity: f64,
    pub brake_cue: bool,
}

pub fn engine_intensity(throttle: f64, brake: f64) -> (f64, bool) {
    let t = throttle.clamp(0.0, 1.0);
    (IDLE_INTENSITY + (1.0 - IDLE_INTENSITY) * t, brake > BRAKE_CUE_THRESHOLD)
}

/// Inverse-distance gain and sine panning relative to the listener's heading.
pub fn listener_cues(listener: &Transform, sources: &[AudioSource]) -> Vec<AudioCue> {
    let here = listener.xy();
    sources
        .iter()
        .map(|s| {
            let base = s.base_gain.clamp(0.0, 1.0);
            let (gain, pan) = if s.kind == SourceKind::Ambient {
                (base, 0.0)
            } else {
                let d = s.position - here;
                let dist = d.norm();
                let gain = base * REF_DISTANCE / dist.max(REF_DISTANCE);
                let pan = if dist == 0.0 {
                    0.0
                } else {
                    // clockwise from heading: the negated counterclockwise angle
                    let bearing = -normalize_angle(d.y.atan2(d.x) - listener.yaw);
                    bearing.sin().clamp(-1.0, 1.0)
                };
                (gain, pan)
            };
            AudioCue {
                actor: s.actor,
                kind: s.kind,
                gain,
                pan,
                intensity: s.intensity.clamp(0.0, 1.0),
                brake_cue: s.brake_cue,
            }
        })
        .collect()
}
