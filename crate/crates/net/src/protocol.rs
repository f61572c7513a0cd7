//! Message schema shared by the TCP and web-socket transports.
//!
//! Every message is one JSON object whose `"type"` field selects the
//! variant. Requests get exactly one reply (`ack`, a typed reply, or
//! `error`); snapshots and sensor frames are pushed to sessions unasked.

use agentsim_core::audio::AudioCue;
use agentsim_core::traffic::{EhmiMode, TrafficParams};
use agentsim_core::world::{Event, LightState, PropState, VehicleState, WalkerState};
use agentsim_core::{ActorId, Transform, Vec2, WorldSnapshot};
use serde::{Deserialize, Serialize};

/// Bumped on any incompatible schema change; carried in hello and welcome.
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Scenario driver; the first one in lockstep mode holds tick authority.
    Runner,
    Ui,
    Sensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerMode {
    Lockstep,
    Realtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Lidar,
    Camera,
}

/// Which binary layout a sensor frame's `data` holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorChannel {
    Points,
    Depth,
    Labels,
    Rgb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    ProtocolState,
    VersionMismatch,
    UnknownActor,
    WrongActorKind,
    NotAuthorized,
    InvalidCommand,
    SpawnFailed,
    UnknownMessage,
    UnexpectedMessage,
    BadFrame,
}

/// Tracked body points for live avatar fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvatarJoints {
    pub headset: Transform,
    #[serde(default)]
    pub left_hand: Option<Transform>,
    #[serde(default)]
    pub right_hand: Option<Transform>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SnapshotActors {
    pub vehicles: Vec<VehicleState>,
    pub walkers: Vec<WalkerState>,
    pub lights: Vec<LightState>,
    pub props: Vec<PropState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EhmiEntry {
    pub id: ActorId,
    pub mode: EhmiMode,
    pub strip_active: bool,
    pub strip_color: [u8; 3],
}

/// World state at one frame, as broadcast after each tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotBody {
    pub frame: u64,
    pub sim_time: f64,
    pub actors: SnapshotActors,
    pub ehmi: Vec<EhmiEntry>,
    pub audio: Vec<AudioCue>,
    pub events: Vec<Event>,
}

impl SnapshotBody {
    pub fn from_world(s: &WorldSnapshot) -> Self {
        Self {
            frame: s.frame,
            sim_time: s.sim_time,
            actors: SnapshotActors {
                vehicles: s.vehicles.clone(),
                walkers: s.walkers.clone(),
                lights: s.lights.clone(),
                props: s.props.clone(),
            },
            ehmi: s
                .vehicles
                .iter()
                .map(|v| EhmiEntry {
                    id: v.id,
                    mode: v.ehmi.mode,
                    strip_active: v.ehmi.strip_active,
                    strip_color: v.ehmi.strip_color,
                })
                .collect(),
            audio: s.audio.clone(),
            events: s.events.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello {
        role: Role,
        version: u32,
    },
    Welcome {
        tick_hz: f64,
        session_id: u64,
        version: u32,
        mode: ServerMode,
        authority: bool,
    },
    SpawnActor {
        blueprint: String,
        transform: Transform,
    },
    ActorSpawned {
        id: ActorId,
    },
    VehicleControl {
        id: ActorId,
        throttle: f64,
        steer: f64,
        brake: f64,
    },
    WalkerControl {
        id: ActorId,
        direction: Vec2,
        speed: f64,
        head_yaw: f64,
    },
    AvatarPose {
        id: ActorId,
        joints: AvatarJoints,
    },
    /// Replaces the traffic parameters; omitted fields take their defaults.
    SetTrafficParams(TrafficParams),
    Tick,
    QuerySnapshot,
    /// Pushed to every session after each tick, never sent as a reply.
    Snapshot(SnapshotBody),
    /// Reply to `query_snapshot`: the latest state, which may repeat a frame
    /// already broadcast.
    SnapshotReply(SnapshotBody),
    SubscribeSensor {
        sensor_kind: SensorKind,
        /// A lidar or camera config object, parsed per `sensor_kind`.
        config: serde_json::Value,
        /// Vehicle carrying the sensor; the mount is world-fixed when absent.
        #[serde(default)]
        attach_to: Option<ActorId>,
    },
    SensorSubscribed {
        sensor_id: u64,
    },
    SensorFrame {
        frame: u64,
        sensor_id: u64,
        channel: SensorChannel,
        /// Base-64 of the binary layout named by `channel`.
        data: String,
    },
    Ack {
        /// The `type` of the acknowledged request.
        request: String,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
    /// A well-formed object whose type this build does not know. Never
    /// encoded.
    #[serde(skip)]
    Unknown { type_name: String },
}

impl Message {
    pub fn type_name(&self) -> &str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Welcome { .. } => "welcome",
            Message::SpawnActor { .. } => "spawn_actor",
            Message::ActorSpawned { .. } => "actor_spawned",
            Message::VehicleControl { .. } => "vehicle_control",
            Message::WalkerControl { .. } => "walker_control",
            Message::AvatarPose { .. } => "avatar_pose",
            Message::SetTrafficParams(_) => "set_traffic_params",
            Message::Tick => "tick",
            Message::QuerySnapshot => "query_snapshot",
            Message::Snapshot(_) => "snapshot",
            Message::SnapshotReply(_) => "snapshot_reply",
            Message::SubscribeSensor { .. } => "subscribe_sensor",
            Message::SensorSubscribed { .. } => "sensor_subscribed",
            Message::SensorFrame { .. } => "sensor_frame",
            Message::Ack { .. } => "ack",
            Message::Error { .. } => "error",
            Message::Unknown { type_name } => type_name,
        }
    }

    /// Every type tag this build understands.
    pub const KNOWN_TYPES: [&'static str; 17] = [
        "hello",
        "welcome",
        "spawn_actor",
        "actor_spawned",
        "vehicle_control",
        "walker_control",
        "avatar_pose",
        "set_traffic_params",
        "tick",
        "query_snapshot",
        "snapshot",
        "snapshot_reply",
        "subscribe_sensor",
        "sensor_subscribed",
        "sensor_frame",
        "ack",
        "error",
    ];

    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        Message::Error {
            code,
            detail: detail.into(),
        }
    }

    pub fn ack(request: &Message) -> Self {
        Message::Ack {
            request: request.type_name().to_string(),
        }
    }

    pub fn snapshot(s: &WorldSnapshot) -> Self {
        Message::Snapshot(SnapshotBody::from_world(s))
    }

    /// Finite numbers only: the text format has no NaN or infinity.
    pub fn is_encodable(&self) -> bool {
        let fin = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let tf = |t: &Transform| t.is_finite();
        match self {
            Message::Unknown { .. } => false,
            Message::Welcome { tick_hz, .. } => tick_hz.is_finite(),
            Message::SpawnActor { transform, .. } => tf(transform),
            Message::VehicleControl {
                throttle, steer, brake, ..
            } => fin(&[*throttle, *steer, *brake]),
            Message::WalkerControl {
                direction,
                speed,
                head_yaw,
                ..
            } => fin(&[direction.x, direction.y, *speed, *head_yaw]),
            Message::AvatarPose { joints, .. } => {
                tf(&joints.headset) && joints.left_hand.iter().chain(&joints.right_hand).all(tf)
            }
            Message::SetTrafficParams(p) => fin(&[
                p.speed_limit_factor,
                p.comfort_decel,
                p.max_decel,
                p.intent_radius,
                p.intent_speed,
                p.lookahead,
                p.stop_margin,
            ]),
            Message::Snapshot(b) | Message::SnapshotReply(b) => b.sim_time.is_finite(),
            _ => true,
        }
    }
}
