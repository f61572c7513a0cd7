//! Transport-independent session handling around one [`World`].
//!
//! Each session owns a bounded outbox of message batches. Replies and
//! per-tick broadcasts are pushed with `try_send`; a session whose outbox
//! is full is dropped instead of blocking the tick.

use std::collections::BTreeMap;

use agentsim_core::mocap::TrackerSample;
use agentsim_core::par::Execution;
use agentsim_core::sensor::{
    layout, lidar_scan, render_camera, scene_from_snapshot, CameraConfig, LidarConfig,
};
use agentsim_core::traffic::VehicleControl;
use agentsim_core::world::{Command, WorldError};
use agentsim_core::{ActorId, World, WorldSnapshot};
use base64::Engine;
use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};

use crate::protocol::{
    ErrorCode, Message, Role, SensorChannel, SensorKind, ServerMode, SnapshotBody, PROTOCOL_VERSION,
};

/// Default outbox depth, in batches (one batch per tick or reply).
pub const OUTBOX_CAPACITY: usize = 64;

pub type SessionId = u64;
/// Messages written back-to-back for one reply or one tick.
pub type Batch = Vec<Message>;

#[derive(Debug, Clone)]
enum SensorSpec {
    Lidar(LidarConfig),
    Camera(CameraConfig),
}

#[derive(Debug, Clone)]
struct Subscription {
    id: u64,
    spec: SensorSpec,
    attach_to: Option<ActorId>,
}

#[derive(Debug)]
struct Session {
    role: Option<Role>,
    outbox: Sender<Batch>,
    sensors: Vec<Subscription>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DisconnectReason {
    Closed,
    Overflow,
}

/// Fault raised by the world while stepping.
#[derive(Debug, Clone, PartialEq)]
pub struct TickFault(pub String);

pub struct ServerCore {
    world: World,
    mode: ServerMode,
    exec: Execution,
    capacity: usize,
    sessions: BTreeMap<SessionId, Session>,
    next_session: SessionId,
    next_sensor: u64,
    authority: Option<SessionId>,
    latest: WorldSnapshot,
    disconnects: Vec<(SessionId, DisconnectReason)>,
}

impl std::fmt::Debug for ServerCore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerCore")
            .field("mode", &self.mode)
            .field("frame", &self.latest.frame)
            .field("sessions", &self.sessions.len())
            .finish_non_exhaustive()
    }
}

fn world_error(e: &WorldError) -> Message {
    let code = match e {
        WorldError::UnknownActor(_) => ErrorCode::UnknownActor,
        WorldError::WrongActorKind { .. } => ErrorCode::WrongActorKind,
        WorldError::UnknownBlueprint(_) | WorldError::SpawnOverlap { .. } => ErrorCode::SpawnFailed,
        _ => ErrorCode::InvalidCommand,
    };
    Message::error(code, e.to_string())
}

impl ServerCore {
    pub fn new(world: World, mode: ServerMode, exec: Execution) -> Self {
        let latest = world.snapshot();
        Self {
            world,
            mode,
            exec,
            capacity: OUTBOX_CAPACITY,
            sessions: BTreeMap::new(),
            next_session: 1,
            next_sensor: 1,
            authority: None,
            latest,
            disconnects: Vec::new(),
        }
    }

    /// Outbox depth for sessions connected from now on.
    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity.max(1);
        self
    }

    pub fn mode(&self) -> ServerMode {
        self.mode
    }

    pub fn tick_hz(&self) -> f64 {
        1.0 / self.world.config().dt
    }

    pub fn latest(&self) -> &WorldSnapshot {
        &self.latest
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_connected(&self, id: SessionId) -> bool {
        self.sessions.contains_key(&id)
    }

    pub fn authority(&self) -> Option<SessionId> {
        self.authority
    }

    /// Sessions dropped so far, in order.
    pub fn disconnects(&self) -> &[(SessionId, DisconnectReason)] {
        &self.disconnects
    }

    pub fn connect(&mut self) -> (SessionId, Receiver<Batch>) {
        let id = self.next_session;
        self.next_session += 1;
        let (tx, rx) = bounded(self.capacity);
        self.sessions.insert(
            id,
            Session {
                role: None,
                outbox: tx,
                sensors: Vec::new(),
            },
        );
        tracing::debug!(session = id, "connected");
        (id, rx)
    }

    pub fn disconnect(&mut self, id: SessionId) {
        self.drop_session(id, DisconnectReason::Closed);
    }

    fn drop_session(&mut self, id: SessionId, reason: DisconnectReason) {
        if self.sessions.remove(&id).is_none() {
            return;
        }
        if reason == DisconnectReason::Overflow {
            tracing::warn!(session = id, "outbox full, disconnecting");
        } else {
            tracing::debug!(session = id, "disconnected");
        }
        if self.authority == Some(id) {
            self.authority = None;
        }
        self.disconnects.push((id, reason));
    }

    fn send(&mut self, id: SessionId, batch: Batch) {
        let Some(s) = self.sessions.get(&id) else { return };
        match s.outbox.try_send(batch) {
            Ok(()) => {}
            Err(TrySendError::Full(_)) => self.drop_session(id, DisconnectReason::Overflow),
            Err(TrySendError::Disconnected(_)) => self.drop_session(id, DisconnectReason::Closed),
        }
    }

    /// Handles one decoded message from `id`. The reply, and in lockstep any
    /// broadcast the message triggers, lands in the session outboxes.
    pub fn handle(&mut self, id: SessionId, msg: Message) -> Result<(), TickFault> {
        let Some(session) = self.sessions.get(&id) else {
            return Ok(());
        };
        let handshaken = session.role.is_some();
        let reply = match (&msg, handshaken) {
            (Message::Hello { role, version }, false) => {
                if *version != PROTOCOL_VERSION {
                    Message::error(
                        ErrorCode::VersionMismatch,
                        format!("server speaks version {PROTOCOL_VERSION}, client sent {version}"),
                    )
                } else {
                    let take = self.mode == ServerMode::Lockstep && *role == Role::Runner && self.authority.is_none();
                    if take {
                        self.authority = Some(id);
                    }
                    if let Some(s) = self.sessions.get_mut(&id) {
                        s.role = Some(*role);
                    }
                    Message::Welcome {
                        tick_hz: self.tick_hz(),
                        session_id: id,
                        version: PROTOCOL_VERSION,
                        mode: self.mode,
                        authority: take,
                    }
                }
            }
            (Message::Hello { .. }, true) => Message::error(ErrorCode::ProtocolState, "hello already completed"),
            (Message::Unknown { type_name }, _) => {
                Message::error(ErrorCode::UnknownMessage, format!("unknown message type {type_name:?}"))
            }
            (_, false) => Message::error(
                ErrorCode::ProtocolState,
                format!("{} before hello", msg.type_name()),
            ),
            (Message::Tick, true) => return self.handle_tick(id),
            (_, true) => self.handle_request(id, &msg),
        };
        self.send(id, vec![reply]);
        Ok(())
    }

    /// Replies to a frame that could not be decoded.
    pub fn reject_frame(&mut self, id: SessionId, detail: &str) {
        self.send(id, vec![Message::error(ErrorCode::BadFrame, detail)]);
    }

    fn handle_tick(&mut self, id: SessionId) -> Result<(), TickFault> {
        let refuse = match self.mode {
            ServerMode::Realtime => Some("the server ticks itself in realtime mode"),
            ServerMode::Lockstep if self.authority != Some(id) => Some("only the tick authority may tick"),
            ServerMode::Lockstep => None,
        };
        if let Some(why) = refuse {
            self.send(id, vec![Message::error(ErrorCode::NotAuthorized, why)]);
            return Ok(());
        }
        let result = self.tick();
        if result.is_ok() {
            self.send(id, vec![Message::Ack { request: "tick".into() }]);
        } else if let Err(TickFault(detail)) = &result {
            self.send(id, vec![Message::error(ErrorCode::InvalidCommand, detail.clone())]);
        }
        result
    }

    fn handle_request(&mut self, id: SessionId, msg: &Message) -> Message {
        let enqueue = |world: &mut World, cmd: Command| match world.enqueue(cmd) {
            Ok(()) => Message::ack(msg),
            Err(e) => world_error(&e),
        };
        match msg {
            Message::SpawnActor { blueprint, transform } => match self.world.spawn_actor(blueprint, *transform) {
                Ok(id) => {
                    // spawns are immediate; later queries should see them
                    self.latest = self.world.snapshot();
                    Message::ActorSpawned { id }
                }
                Err(e) => world_error(&e),
            },
            Message::VehicleControl {
                id: actor,
                throttle,
                steer,
                brake,
            } => enqueue(
                &mut self.world,
                Command::VehicleControl {
                    id: *actor,
                    control: VehicleControl::new(*throttle, *steer, *brake),
                },
            ),
            Message::WalkerControl {
                id: actor,
                direction,
                speed,
                head_yaw,
            } => enqueue(
                &mut self.world,
                Command::WalkerControl {
                    id: *actor,
                    direction: *direction,
                    speed: *speed,
                    head_yaw: *head_yaw,
                },
            ),
            Message::AvatarPose { id: actor, joints } => {
                let sample = TrackerSample {
                    time: self.latest.sim_time,
                    headset: joints.headset,
                    left_hand: joints.left_hand,
                    right_hand: joints.right_hand,
                };
                enqueue(&mut self.world, Command::AvatarPose { id: *actor, sample })
            }
            Message::SetTrafficParams(params) => enqueue(&mut self.world, Command::SetTrafficParams { params: *params }),
            Message::QuerySnapshot => Message::SnapshotReply(SnapshotBody::from_world(&self.latest)),
            Message::SubscribeSensor {
                sensor_kind,
                config,
                attach_to,
            } => self.subscribe(id, *sensor_kind, config, *attach_to),
            other => Message::error(
                ErrorCode::UnexpectedMessage,
                format!("{} is sent by the server, not to it", other.type_name()),
            ),
        }
    }

    fn subscribe(
        &mut self,
        id: SessionId,
        kind: SensorKind,
        config: &serde_json::Value,
        attach_to: Option<ActorId>,
    ) -> Message {
        let spec = match kind {
            SensorKind::Lidar => serde_json::from_value::<LidarConfig>(config.clone())
                .map_err(|e| e.to_string())
                .and_then(|c| c.validate().map(|_| SensorSpec::Lidar(c)).map_err(|e| e.to_string())),
            SensorKind::Camera => serde_json::from_value::<CameraConfig>(config.clone())
                .map_err(|e| e.to_string())
                .and_then(|c| c.validate().map(|_| SensorSpec::Camera(c)).map_err(|e| e.to_string())),
        };
        let spec = match spec {
            Ok(s) => s,
            Err(e) => return Message::error(ErrorCode::InvalidCommand, e),
        };
        if let Some(a) = attach_to {
            if self.latest.vehicle(a).is_none() && self.latest.walker(a).is_none() {
                return Message::error(ErrorCode::UnknownActor, format!("unknown actor {a}"));
            }
        }
        let sensor_id = self.next_sensor;
        self.next_sensor += 1;
        if let Some(s) = self.sessions.get_mut(&id) {
            s.sensors.push(Subscription {
                id: sensor_id,
                spec,
                attach_to,
            });
        }
        Message::SensorSubscribed { sensor_id }
    }

    /// Advances the world one fixed step and broadcasts the result to every
    /// handshaken session.
    pub fn tick(&mut self) -> Result<(), TickFault> {
        let dt = self.world.config().dt;
        let snap = self.world.step(dt).map_err(|e| TickFault(e.to_string()))?;
        self.latest = snap;
        let snapshot_msg = Message::snapshot(&self.latest);
        let any_sensors = self.sessions.values().any(|s| !s.sensors.is_empty());
        let full_scene = any_sensors.then(|| scene_from_snapshot(&self.latest, Some(self.world.rig()), None));
        let targets: Vec<SessionId> = self
            .sessions
            .iter()
            .filter(|(_, s)| s.role.is_some())
            .map(|(id, _)| *id)
            .collect();
        for sid in targets {
            let mut batch = vec![snapshot_msg.clone()];
            if let (Some(scene), Some(s)) = (&full_scene, self.sessions.get(&sid)) {
                for sub in &s.sensors {
                    batch.extend(self.sensor_frames(sub, scene));
                }
            }
            self.send(sid, batch);
        }
        Ok(())
    }

    fn sensor_frames(&self, sub: &Subscription, full_scene: &agentsim_core::sensor::Scene) -> Vec<Message> {
        let snap = &self.latest;
        let base = match sub.attach_to {
            None => None,
            Some(a) => match snap.vehicle(a).map(|v| v.transform).or_else(|| snap.walker(a).map(|w| w.transform)) {
                Some(t) => Some(t),
                None => return Vec::new(),
            },
        };
        // a carried sensor does not see its carrier
        let own;
        let scene = if sub.attach_to.is_some() {
            own = scene_from_snapshot(snap, Some(self.world.rig()), sub.attach_to);
            &own
        } else {
            full_scene
        };
        let b64 = |bytes: Vec<u8>| base64::engine::general_purpose::STANDARD.encode(bytes);
        let frame = |channel, data| Message::SensorFrame {
            frame: snap.frame,
            sensor_id: sub.id,
            channel,
            data,
        };
        let pose = |mount: &agentsim_core::Transform| match base {
            Some(t) => t.isometry() * mount.isometry(),
            None => mount.isometry(),
        };
        match &sub.spec {
            SensorSpec::Lidar(c) => {
                let cloud = lidar_scan(c, &pose(&c.mount), scene, self.exec);
                vec![frame(SensorChannel::Points, b64(layout::encode_points(&cloud)))]
            }
            SensorSpec::Camera(c) => {
                let img = render_camera(c, &pose(&c.mount), scene, self.exec);
                vec![
                    frame(SensorChannel::Depth, b64(layout::encode_depth(&img))),
                    frame(SensorChannel::Labels, b64(layout::encode_labels(&img))),
                    frame(SensorChannel::Rgb, b64(layout::encode_rgb(&img))),
                ]
            }
        }
    }
}
