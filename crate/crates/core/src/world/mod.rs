//! Actor state and the fixed-step tick loop.
//!
//! All mutation goes through [`World`]. External commands are queued and
//! applied at the start of the next tick; each tick yields an immutable
//! [`WorldSnapshot`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioCue, AudioSource, SourceKind};
use crate::geom::{normalize_angle, Transform, Vec2, Vec3};
use crate::map::{LightPhase, LightTiming, RoadMap};
use crate::mocap::{
    avatar_root, compose_avatar, fk, gate_headset, synth, tracker, walk_cycle_pose, AvatarBinding, AvatarConfig,
    AvatarRig, BvhClip, SkeletonPose, TrackerSample,
};
use crate::par::Execution;
use crate::traffic::{self, EhmiState, Route, TrafficError, TrafficParams, VehicleControl, VehicleDynamics};

pub mod collision;

use collision::Footprint;

pub const DEFAULT_DT: f64 = 0.05;
pub const WALKER_RADIUS: f64 = 0.3;
pub const SEDAN_WHEELBASE: f64 = 2.7;
pub const WALK_SPEED: f64 = 1.4;

pub fn sedan_half_extents() -> Vec3 {
    Vec3::new(2.3, 0.95, 0.75)
}

pub fn prop_half_extents() -> Vec3 {
    Vec3::new(0.5, 0.5, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActorId(pub u64);

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Blueprint {
    #[serde(rename = "vehicle.sedan")]
    VehicleSedan,
    #[serde(rename = "walker.avatar")]
    WalkerAvatar,
    #[serde(rename = "light.standard")]
    LightStandard,
    #[serde(rename = "prop.box")]
    PropBox,
}

impl Blueprint {
    pub const ALL: [Blueprint; 4] = [
        Blueprint::VehicleSedan,
        Blueprint::WalkerAvatar,
        Blueprint::LightStandard,
        Blueprint::PropBox,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Blueprint::VehicleSedan => "vehicle.sedan",
            Blueprint::WalkerAvatar => "walker.avatar",
            Blueprint::LightStandard => "light.standard",
            Blueprint::PropBox => "prop.box",
        }
    }
}

impl FromStr for Blueprint {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| WorldError::UnknownBlueprint(s.to_string()))
    }
}

impl fmt::Display for Blueprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: ActorId,
    pub transform: Transform,
    pub speed: f64,
    pub wheelbase: f64,
    pub half_extents: Vec3,
    pub control: VehicleControl,
    pub ehmi: EhmiState,
}

impl VehicleState {
    pub fn footprint(&self) -> Footprint {
        Footprint::Rect {
            center: self.transform.xy(),
            yaw: self.transform.yaw,
            half: self.half_extents.xy(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.transform.is_finite() && self.speed.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriveMode {
    UiDrive,
    BvhReplay,
    LiveFusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkerState {
    pub id: ActorId,
    pub transform: Transform,
    pub speed: f64,
    /// Unit heading of travel in the ground plane.
    pub direction: Vec2,
    /// Head yaw relative to the body, rad.
    pub head_yaw: f64,
    pub drive_mode: DriveMode,
    pub pose: Option<SkeletonPose>,
}

impl WalkerState {
    pub fn footprint(&self) -> Footprint {
        Footprint::Disc {
            center: self.transform.xy(),
            radius: WALKER_RADIUS,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.transform.is_finite()
            && self.speed.is_finite()
            && self.direction.iter().all(|v| v.is_finite())
            && self.pose.as_ref().map_or(true, SkeletonPose::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightState {
    pub id: ActorId,
    pub position: Vec2,
    pub stop_line: Option<(Vec2, Vec2)>,
    pub timing: LightTiming,
    pub phase: LightPhase,
    /// Seconds left in the current phase.
    pub remaining: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropState {
    pub id: ActorId,
    pub transform: Transform,
    pub half_extents: Vec3,
}

impl PropState {
    pub fn footprint(&self) -> Footprint {
        Footprint::Rect {
            center: self.transform.xy(),
            yaw: self.transform.yaw,
            half: self.half_extents.xy(),
        }
    }
}

/// Advances a light's phase timer; on expiry the next phase starts with its
/// full duration.
pub fn traffic_light_step(light: &LightState, dt: f64) -> LightState {
    let mut next = light.clone();
    if light.remaining <= dt + 1e-9 {
        next.phase = light.phase.next();
        next.remaining = light.timing.duration(next.phase);
    } else {
        next.remaining = light.remaining - dt;
    }
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Spawn { actor: ActorId, blueprint: Blueprint },
    Destroy { actor: ActorId },
    Collision { a: ActorId, b: ActorId, depth: f64 },
    CompleteStop { actor: ActorId },
    OutOfBounds { actor: ActorId },
    Fault { actor: ActorId, detail: String },
    LaneChangeRequested { actor: ActorId },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub frame: u64,
    pub sim_time: f64,
    pub rng_seed: u64,
    pub vehicles: Vec<VehicleState>,
    pub walkers: Vec<WalkerState>,
    pub lights: Vec<LightState>,
    pub props: Vec<PropState>,
    pub events: Vec<Event>,
    pub audio: Vec<AudioCue>,
}

impl WorldSnapshot {
    pub fn vehicle(&self, id: ActorId) -> Option<&VehicleState> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn walker(&self, id: ActorId) -> Option<&WalkerState> {
        self.walkers.iter().find(|w| w.id == id)
    }

    pub fn actor_count(&self) -> usize {
        self.vehicles.len() + self.walkers.len() + self.lights.len() + self.props.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            min: Vec2::new(-500.0, -500.0),
            max: Vec2::new(500.0, 500.0),
        }
    }
}

impl Bounds {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub dt: f64,
    pub seed: u64,
    pub bounds: Bounds,
    pub dynamics: VehicleDynamics,
    pub traffic: TrafficParams,
    pub avatar: AvatarConfig,
    pub ambient: Vec<AudioSource>,
    pub exec: Execution,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            seed: 0,
            bounds: Bounds::default(),
            dynamics: VehicleDynamics::default(),
            traffic: TrafficParams::default(),
            avatar: AvatarConfig::default(),
            ambient: Vec::new(),
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("unknown blueprint {0:?}")]
    UnknownBlueprint(String),
    #[error("spawn overlaps actor {with} by {depth:.3} m")]
    SpawnOverlap { with: ActorId, depth: f64 },
    #[error("unknown actor {0}")]
    UnknownActor(ActorId),
    #[error("actor {id} is not a {expected}")]
    WrongActorKind { id: ActorId, expected: &'static str },
    #[error("step of {got} s does not match the fixed step {expected} s")]
    StepMismatch { expected: f64, got: f64 },
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error("skeleton mismatch: {0}")]
    Skeleton(String),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
}

/// How a walker is animated.
#[derive(Debug, Clone)]
pub enum WalkerDrive {
    /// Direction and speed from walker_control commands, walk-cycle body.
    UiDrive,
    /// Clip played from `start_time`, rooted at `anchor`; holds the last frame.
    BvhReplay {
        clip: Arc<BvhClip>,
        anchor: Transform,
        start_time: f64,
    },
    /// Tracker samples (recorded stream and/or live avatar_pose input) fused
    /// onto a standing body.
    LiveFusion { stream: Arc<Vec<TrackerSample>> },
}

impl WalkerDrive {
    pub fn mode(&self) -> DriveMode {
        match self {
            WalkerDrive::UiDrive => DriveMode::UiDrive,
            WalkerDrive::BvhReplay { .. } => DriveMode::BvhReplay,
            WalkerDrive::LiveFusion { .. } => DriveMode::LiveFusion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    VehicleControl { id: ActorId, control: VehicleControl },
    WalkerControl { id: ActorId, direction: Vec2, speed: f64, head_yaw: f64 },
    AvatarPose { id: ActorId, sample: TrackerSample },
    SetTrafficParams { params: TrafficParams },
    SetRoute { id: ActorId, route: Route },
    ForceLaneChange { id: ActorId },
    Destroy { id: ActorId },
}

#[derive(Debug)]
struct WalkerRuntime {
    drive: WalkerDrive,
    distance: f64,
    live: Option<TrackerSample>,
}

pub struct World {
    config: WorldConfig,
    map: Arc<RoadMap>,
    frame: u64,
    next_id: u64,
    vehicles: BTreeMap<ActorId, VehicleState>,
    walkers: BTreeMap<ActorId, WalkerState>,
    lights: BTreeMap<ActorId, LightState>,
    props: BTreeMap<ActorId, PropState>,
    routes: BTreeMap<ActorId, Route>,
    runtimes: BTreeMap<ActorId, WalkerRuntime>,
    frozen: BTreeSet<ActorId>,
    queue: Vec<Command>,
    pending_events: Vec<Event>,
    events: Vec<Event>,
    audio: Vec<AudioCue>,
    walk_clip: Arc<BvhClip>,
    rig: AvatarRig,
    binding: Option<AvatarBinding>,
}

impl fmt::Debug for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("World")
            .field("frame", &self.frame)
            .field("vehicles", &self.vehicles.len())
            .field("walkers", &self.walkers.len())
            .finish_non_exhaustive()
    }
}

impl World {
    /// Fresh world on `map`. Map traffic lights become actors immediately.
    pub fn new(map: Arc<RoadMap>, config: WorldConfig) -> Self {
        Self::with_skeleton(map, config, Arc::new(synth::walk_cycle_clip(40)))
    }

    /// Like [`World::new`] with a custom looping walk clip; its hierarchy is
    /// the avatar skeleton for every walker.
    pub fn with_skeleton(map: Arc<RoadMap>, config: WorldConfig, walk_clip: Arc<BvhClip>) -> Self {
        let rig = AvatarRig::for_skeleton(&walk_clip.joints);
        let binding = AvatarBinding::resolve(&walk_clip.joints, &config.avatar).ok();
        let mut world = Self {
            config,
            map: map.clone(),
            frame: 0,
            next_id: 1,
            vehicles: BTreeMap::new(),
            walkers: BTreeMap::new(),
            lights: BTreeMap::new(),
            props: BTreeMap::new(),
            routes: BTreeMap::new(),
            runtimes: BTreeMap::new(),
            frozen: BTreeSet::new(),
            queue: Vec::new(),
            pending_events: Vec::new(),
            events: Vec::new(),
            audio: Vec::new(),
            walk_clip,
            rig,
            binding,
        };
        for spec in &map.lights {
            let id = world.allocate_id();
            let remaining = spec.initial_remaining.unwrap_or(spec.timing.duration(spec.initial_phase));
            world.lights.insert(
                id,
                LightState {
                    id,
                    position: spec.position,
                    stop_line: Some(spec.stop_line),
                    timing: spec.timing,
                    phase: spec.initial_phase,
                    remaining,
                },
            );
            world.push_event(Event::Spawn {
                actor: id,
                blueprint: Blueprint::LightStandard,
            });
        }
        world
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn map(&self) -> &Arc<RoadMap> {
        &self.map
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn sim_time(&self) -> f64 {
        self.frame as f64 * self.config.dt
    }

    pub fn skeleton(&self) -> &BvhClip {
        &self.walk_clip
    }

    pub fn rig(&self) -> &AvatarRig {
        &self.rig
    }

    pub fn joint_names(&self) -> Vec<String> {
        self.walk_clip.joint_names()
    }

    pub fn traffic_params(&self) -> &TrafficParams {
        &self.config.traffic
    }

    fn allocate_id(&mut self) -> ActorId {
        let id = ActorId(self.next_id);
        self.next_id += 1;
        id
    }

    fn push_event(&mut self, e: Event) {
        // before the first tick, events belong to the initial frame
        if self.frame == 0 {
            self.events.push(e);
        } else {
            self.pending_events.push(e);
        }
    }

    fn footprints(&self) -> impl Iterator<Item = (ActorId, Footprint)> + '_ {
        self.vehicles
            .values()
            .map(|v| (v.id, v.footprint()))
            .chain(self.walkers.values().map(|w| (w.id, w.footprint())))
            .chain(self.props.values().map(|p| (p.id, p.footprint())))
    }

    pub fn kind_of(&self, id: ActorId) -> Option<Blueprint> {
        if self.vehicles.contains_key(&id) {
            Some(Blueprint::VehicleSedan)
        } else if self.walkers.contains_key(&id) {
            Some(Blueprint::WalkerAvatar)
        } else if self.lights.contains_key(&id) {
            Some(Blueprint::LightStandard)
        } else if self.props.contains_key(&id) {
            Some(Blueprint::PropBox)
        } else {
            None
        }
    }

    /// Creates an actor; it appears in the next snapshot.
    pub fn spawn_actor(&mut self, blueprint: &str, transform: Transform) -> Result<ActorId, WorldError> {
        let blueprint: Blueprint = blueprint.parse()?;
        if !transform.is_finite() {
            return Err(WorldError::InvalidCommand("spawn transform is not finite".into()));
        }
        let transform = transform.normalized();
        let xy = transform.xy();
        let footprint = match blueprint {
            Blueprint::VehicleSedan => Some(Footprint::Rect {
                center: xy,
                yaw: transform.yaw,
                half: sedan_half_extents().xy(),
            }),
            Blueprint::PropBox => Some(Footprint::Rect {
                center: xy,
                yaw: transform.yaw,
                half: prop_half_extents().xy(),
            }),
            Blueprint::WalkerAvatar => Some(Footprint::Disc {
                center: xy,
                radius: WALKER_RADIUS,
            }),
            Blueprint::LightStandard => None,
        };
        if let Some(fp) = footprint {
            if let Some((with, depth)) = self
                .footprints()
                .map(|(id, other)| (id, collision::depth(&fp, &other)))
                .find(|(_, d)| *d > 0.0)
            {
                return Err(WorldError::SpawnOverlap { with, depth });
            }
        }
        let id = self.allocate_id();
        match blueprint {
            Blueprint::VehicleSedan => {
                self.vehicles.insert(
                    id,
                    VehicleState {
                        id,
                        transform,
                        speed: 0.0,
                        wheelbase: SEDAN_WHEELBASE,
                        half_extents: sedan_half_extents(),
                        control: VehicleControl::default(),
                        ehmi: EhmiState::default(),
                    },
                );
            }
            Blueprint::WalkerAvatar => {
                let pose = walk_cycle_pose(&self.walk_clip, 0.0, synth::STRIDE, &avatar_root(&transform));
                self.walkers.insert(
                    id,
                    WalkerState {
                        id,
                        transform,
                        speed: 0.0,
                        direction: transform.heading(),
                        head_yaw: 0.0,
                        drive_mode: DriveMode::UiDrive,
                        pose: Some(pose),
                    },
                );
                self.runtimes.insert(
                    id,
                    WalkerRuntime {
                        drive: WalkerDrive::UiDrive,
                        distance: 0.0,
                        live: None,
                    },
                );
            }
            Blueprint::LightStandard => {
                let timing = LightTiming::default();
                self.lights.insert(
                    id,
                    LightState {
                        id,
                        position: xy,
                        stop_line: None,
                        timing,
                        phase: LightPhase::Red,
                        remaining: timing.red,
                    },
                );
            }
            Blueprint::PropBox => {
                self.props.insert(
                    id,
                    PropState {
                        id,
                        transform,
                        half_extents: prop_half_extents(),
                    },
                );
            }
        }
        self.push_event(Event::Spawn { actor: id, blueprint });
        Ok(id)
    }

    fn vehicle_mut(&mut self, id: ActorId) -> Result<&mut VehicleState, WorldError> {
        match self.kind_of(id) {
            None => Err(WorldError::UnknownActor(id)),
            Some(Blueprint::VehicleSedan) => Ok(self.vehicles.get_mut(&id).expect("kind checked")),
            Some(_) => Err(WorldError::WrongActorKind { id, expected: "vehicle" }),
        }
    }

    fn check_walker(&self, id: ActorId) -> Result<(), WorldError> {
        match self.kind_of(id) {
            None => Err(WorldError::UnknownActor(id)),
            Some(Blueprint::WalkerAvatar) => Ok(()),
            Some(_) => Err(WorldError::WrongActorKind { id, expected: "walker" }),
        }
    }

    /// Sets a vehicle's current speed (initial conditions).
    pub fn set_vehicle_speed(&mut self, id: ActorId, speed: f64) -> Result<(), WorldError> {
        if !(speed >= 0.0) {
            return Err(WorldError::InvalidCommand("speed must be >= 0".into()));
        }
        self.vehicle_mut(id)?.speed = speed;
        Ok(())
    }

    /// Puts a vehicle under traffic-manager control along `route`.
    pub fn set_route(&mut self, id: ActorId, route: Route) -> Result<(), WorldError> {
        self.vehicle_mut(id)?;
        if route.waypoints.len() < 2 {
            return Err(TrafficError::ShortRoute.into());
        }
        self.routes.insert(id, route);
        Ok(())
    }

    pub fn set_walker_drive(&mut self, id: ActorId, drive: WalkerDrive) -> Result<(), WorldError> {
        self.check_walker(id)?;
        match &drive {
            WalkerDrive::BvhReplay { clip, .. } => {
                if clip.joints.len() != self.walk_clip.joints.len() {
                    return Err(WorldError::Skeleton(format!(
                        "clip has {} joints, avatar skeleton has {}",
                        clip.joints.len(),
                        self.walk_clip.joints.len()
                    )));
                }
                if clip.frames.is_empty() {
                    return Err(WorldError::Skeleton("clip has no frames".into()));
                }
            }
            WalkerDrive::LiveFusion { .. } => {
                if self.binding.is_none() {
                    return Err(WorldError::Skeleton("skeleton lacks the neck/arm joints for fusion".into()));
                }
            }
            WalkerDrive::UiDrive => {}
        }
        let mode = drive.mode();
        let rt = self.runtimes.get_mut(&id).expect("walker has runtime");
        rt.drive = drive;
        let walker = self.walkers.get_mut(&id).expect("walker exists");
        walker.drive_mode = mode;
        // place the body for the current time right away
        let now = self.frame as f64 * self.config.dt;
        let next = advance_walker(
            walker,
            rt,
            &self.walk_clip,
            self.binding.as_ref(),
            &self.config.avatar,
            now,
            None,
        );
        *self.walkers.get_mut(&id).expect("walker exists") = next;
        Ok(())
    }

    /// Validates a command against the current state and queues it for the
    /// next tick.
    pub fn enqueue(&mut self, command: Command) -> Result<(), WorldError> {
        match &command {
            Command::VehicleControl { id, control } => {
                self.vehicle_mut(*id)?;
                let finite = [control.throttle, control.steer, control.brake].iter().all(|v| v.is_finite());
                if !finite {
                    return Err(WorldError::InvalidCommand("control values must be finite".into()));
                }
            }
            Command::WalkerControl {
                id,
                direction,
                speed,
                head_yaw,
            } => {
                self.check_walker(*id)?;
                if !(speed.is_finite() && *speed >= 0.0 && head_yaw.is_finite()) {
                    return Err(WorldError::InvalidCommand("walker speed must be finite and >= 0".into()));
                }
                if !direction.iter().all(|v| v.is_finite()) || (direction.norm() == 0.0 && *speed > 0.0) {
                    return Err(WorldError::InvalidCommand("walker direction must be non-zero when moving".into()));
                }
            }
            Command::AvatarPose { id, sample } => {
                self.check_walker(*id)?;
                if self.binding.is_none() {
                    return Err(WorldError::Skeleton("skeleton lacks the neck/arm joints for fusion".into()));
                }
                if !sample.headset.is_finite() {
                    return Err(WorldError::InvalidCommand("headset transform is not finite".into()));
                }
            }
            Command::SetTrafficParams { params } => params.validate()?,
            Command::SetRoute { id, route } => {
                self.vehicle_mut(*id)?;
                if route.waypoints.len() < 2 {
                    return Err(TrafficError::ShortRoute.into());
                }
            }
            Command::ForceLaneChange { id } => {
                self.vehicle_mut(*id)?;
            }
            Command::Destroy { id } => {
                if self.kind_of(*id).is_none() {
                    return Err(WorldError::UnknownActor(*id));
                }
            }
        }
        self.queue.push(command);
        Ok(())
    }

    fn remove_actor(&mut self, id: ActorId) -> bool {
        let removed = self.vehicles.remove(&id).is_some()
            || self.walkers.remove(&id).is_some()
            || self.lights.remove(&id).is_some()
            || self.props.remove(&id).is_some();
        self.routes.remove(&id);
        self.runtimes.remove(&id);
        self.frozen.remove(&id);
        removed
    }

    fn apply_commands(&mut self, events: &mut Vec<Event>) {
        for command in std::mem::take(&mut self.queue) {
            match command {
                Command::VehicleControl { id, control } => {
                    if let Some(v) = self.vehicles.get_mut(&id) {
                        v.control = control.clamped();
                        // manual input takes the vehicle off autopilot
                        self.routes.remove(&id);
                    }
                }
                Command::WalkerControl {
                    id,
                    direction,
                    speed,
                    head_yaw,
                } => {
                    if let Some(w) = self.walkers.get_mut(&id) {
                        if direction.norm() > 0.0 {
                            w.direction = direction.normalize();
                        }
                        w.speed = speed;
                        w.head_yaw = normalize_angle(head_yaw);
                    }
                }
                Command::AvatarPose { id, sample } => {
                    if let (Some(w), Some(rt)) = (self.walkers.get_mut(&id), self.runtimes.get_mut(&id)) {
                        if !matches!(rt.drive, WalkerDrive::LiveFusion { .. }) {
                            rt.drive = WalkerDrive::LiveFusion {
                                stream: Arc::new(Vec::new()),
                            };
                            w.drive_mode = DriveMode::LiveFusion;
                        }
                        rt.live = Some(sample);
                    }
                }
                Command::SetTrafficParams { params } => self.config.traffic = params,
                Command::SetRoute { id, route } => {
                    if self.vehicles.contains_key(&id) {
                        self.routes.insert(id, route);
                    }
                }
                Command::ForceLaneChange { id } => {
                    if self.vehicles.contains_key(&id) {
                        tracing::info!(actor = id.0, "lane change requested; not executed");
                        events.push(Event::LaneChangeRequested { actor: id });
                    }
                }
                Command::Destroy { id } => {
                    if self.remove_actor(id) {
                        events.push(Event::Destroy { actor: id });
                    }
                }
            }
        }
    }

    /// Advances one fixed step.
    pub fn step(&mut self, dt: f64) -> Result<WorldSnapshot, WorldError> {
        if dt != self.config.dt {
            return Err(WorldError::StepMismatch {
                expected: self.config.dt,
                got: dt,
            });
        }
        let mut events = std::mem::take(&mut self.pending_events);
        self.apply_commands(&mut events);
        let next_frame = self.frame + 1;
        let now = next_frame as f64 * dt;

        // vehicles
        let walkers_before: Vec<WalkerState> = self.walkers.values().cloned().collect();
        let lights_before: Vec<LightState> = self.lights.values().cloned().collect();
        let managed: Vec<(&VehicleState, &Route)> = self
            .routes
            .iter()
            .filter(|(id, _)| !self.frozen.contains(id))
            .filter_map(|(id, r)| self.vehicles.get(id).map(|v| (v, r)))
            .collect();
        let decisions = traffic::traffic_manager_step(
            &managed,
            &walkers_before,
            &lights_before,
            &self.map,
            &self.config.traffic,
            &self.config.dynamics,
            self.config.exec,
        );
        let mut faults = Vec::new();
        for (id, v) in self.vehicles.iter_mut() {
            if self.frozen.contains(id) {
                continue;
            }
            let decision = decisions.get(id);
            let control = decision.map_or(v.control, |d| d.control);
            let mut next = traffic::bicycle_step(v, &control, dt, &self.config.dynamics);
            if let Some(d) = decision {
                next.ehmi = traffic::ehmi_update(&v.ehmi, d.yielding, next.speed);
            }
            if !next.is_finite() {
                faults.push((*id, "vehicle state became non-finite".to_string()));
                continue;
            }
            if v.speed > traffic::STOP_SPEED && next.speed <= traffic::STOP_SPEED {
                events.push(Event::CompleteStop { actor: *id });
            }
            *v = next;
        }

        // walkers
        for (id, w) in self.walkers.iter_mut() {
            if self.frozen.contains(id) {
                continue;
            }
            let rt = self.runtimes.get_mut(id).expect("walker has runtime");
            let next = advance_walker(
                w,
                rt,
                &self.walk_clip,
                self.binding.as_ref(),
                &self.config.avatar,
                now,
                Some(dt),
            );
            if !next.is_finite() {
                faults.push((*id, "walker state became non-finite".to_string()));
                continue;
            }
            *w = next;
        }

        for l in self.lights.values_mut() {
            *l = traffic_light_step(l, dt);
        }

        for (id, detail) in faults {
            tracing::warn!(actor = id.0, %detail, "actor frozen");
            self.frozen.insert(id);
            events.push(Event::Fault { actor: id, detail });
        }

        events.extend(detect_collisions(
            self.vehicles.values(),
            self.walkers.values(),
            self.props.values(),
        ));

        let outside: Vec<ActorId> = self
            .vehicles
            .values()
            .map(|v| (v.id, v.transform.xy()))
            .chain(self.walkers.values().map(|w| (w.id, w.transform.xy())))
            .chain(self.props.values().map(|p| (p.id, p.transform.xy())))
            .filter(|(_, p)| !self.config.bounds.contains(*p))
            .map(|(id, _)| id)
            .collect();
        for id in outside {
            events.push(Event::OutOfBounds { actor: id });
            self.remove_actor(id);
            events.push(Event::Destroy { actor: id });
        }

        self.frame = next_frame;
        self.events = events;
        self.audio = self.compute_audio();
        Ok(self.snapshot())
    }

    fn compute_audio(&self) -> Vec<AudioCue> {
        let Some(listener) = self.walkers.values().next() else {
            return Vec::new();
        };
        let mut sources: Vec<AudioSource> = self
            .vehicles
            .values()
            .map(|v| {
                let (intensity, brake_cue) = audio::engine_intensity(v.control.throttle, v.control.brake);
                AudioSource {
                    actor: Some(v.id),
                    kind: SourceKind::Engine,
                    base_gain: 1.0,
                    position: v.transform.xy(),
                    intensity,
                    brake_cue,
                }
            })
            .collect();
        sources.extend(self.walkers.values().skip(1).map(|w| AudioSource {
            actor: Some(w.id),
            kind: SourceKind::Footsteps,
            base_gain: 0.6,
            position: w.transform.xy(),
            intensity: (w.speed / WALK_SPEED).min(1.0),
            brake_cue: false,
        }));
        sources.extend(self.config.ambient.iter().cloned());
        let mut ears = listener.transform;
        ears.yaw = normalize_angle(ears.yaw + listener.head_yaw);
        audio::listener_cues(&ears, &sources)
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            frame: self.frame,
            sim_time: self.sim_time(),
            rng_seed: self.config.seed,
            vehicles: self.vehicles.values().cloned().collect(),
            walkers: self.walkers.values().cloned().collect(),
            lights: self.lights.values().cloned().collect(),
            props: self.props.values().cloned().collect(),
            events: self.events.clone(),
            audio: self.audio.clone(),
        }
    }
}

fn heading_from_pose(pose: &SkeletonPose) -> Option<f64> {
    let hips = pose.joints.first()?;
    // the clip's forward axis is +z in its own frame
    let f = hips.rotation * Vec3::z();
    (f.x.hypot(f.y) > 1e-9).then(|| f.y.atan2(f.x))
}

/// Next state of one walker at absolute time `now`. `dt` is `None` when
/// re-placing a walker without advancing time.
fn advance_walker(
    w: &WalkerState,
    rt: &mut WalkerRuntime,
    walk_clip: &BvhClip,
    binding: Option<&AvatarBinding>,
    avatar: &AvatarConfig,
    now: f64,
    dt: Option<f64>,
) -> WalkerState {
    let mut next = w.clone();
    next.drive_mode = rt.drive.mode();
    let step = dt.unwrap_or(0.0);
    let update_motion = |next: &mut WalkerState, prev: Vec2| {
        let delta = next.transform.xy() - prev;
        let dist = delta.norm();
        if let Some(dt) = dt {
            next.speed = dist / dt;
        }
        if dist > 1e-12 {
            next.direction = delta / dist;
        }
    };
    match &rt.drive {
        WalkerDrive::UiDrive => {
            let travel = next.direction * (next.speed * step);
            next.transform.position.x += travel.x;
            next.transform.position.y += travel.y;
            if next.speed > 0.0 {
                next.transform.yaw = next.direction.y.atan2(next.direction.x);
            }
            rt.distance += next.speed * step;
            next.pose = Some(walk_cycle_pose(walk_clip, rt.distance, synth::STRIDE, &avatar_root(&next.transform)));
        }
        WalkerDrive::BvhReplay {
            clip,
            anchor,
            start_time,
        } => {
            let t = (now - start_time).max(0.0);
            let frame = ((t / clip.frame_time + 1e-9).floor() as usize).min(clip.frame_count() - 1);
            let pose = fk(clip, frame, &avatar_root(anchor)).expect("frame clamped into range");
            let prev = next.transform.xy();
            let hips = pose.joints[0].position;
            next.transform.position = Vec3::new(hips.x, hips.y, anchor.position.z);
            if let Some(yaw) = heading_from_pose(&pose) {
                next.transform.yaw = yaw;
            }
            update_motion(&mut next, prev);
            next.pose = Some(pose);
        }
        WalkerDrive::LiveFusion { stream } => {
            let sample = rt.live.clone().or_else(|| tracker::sample_at(stream, now).cloned());
            let prev = next.transform.xy();
            let root = match &sample {
                Some(s) => gate_headset(&next.transform, &s.headset, avatar.t_pos, avatar.t_rot),
                None => next.transform,
            };
            let base = fk(walk_clip, 0, &avatar_root(&root)).expect("walk clip has frames");
            next.pose = Some(match (binding, &sample) {
                (Some(b), Some(s)) => {
                    next.head_yaw = normalize_angle(s.headset.yaw - root.yaw);
                    compose_avatar(&base, &root, Some(s), b, avatar).pose
                }
                _ => base,
            });
            next.transform = root;
            update_motion(&mut next, prev);
        }
    }
    next.transform = next.transform.normalized();
    next
}

/// One event per overlapping pair: vehicle against walker, prop and vehicle.
pub fn detect_collisions<'a>(
    vehicles: impl Iterator<Item = &'a VehicleState> + Clone,
    walkers: impl Iterator<Item = &'a WalkerState> + Clone,
    props: impl Iterator<Item = &'a PropState> + Clone,
) -> Vec<Event> {
    let vs: Vec<&VehicleState> = vehicles.collect();
    let mut out = Vec::new();
    for (i, v) in vs.iter().enumerate() {
        let fv = v.footprint();
        let others = vs[i + 1..]
            .iter()
            .map(|o| (o.id, o.footprint()))
            .chain(walkers.clone().map(|w| (w.id, w.footprint())))
            .chain(props.clone().map(|p| (p.id, p.footprint())));
        for (other, fo) in others {
            let depth = collision::depth(&fv, &fo);
            if depth > 0.0 {
                out.push(Event::Collision { a: v.id, b: other, depth });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_world() -> World {
        World::new(Arc::new(RoadMap::default()), WorldConfig::default())
    }

    #[test]
    fn ids_start_at_one() {
        let mut w = empty_world();
        assert_eq!(w.spawn_actor("prop.box", Transform::from_xy_yaw(0.0, 0.0, 0.0)).unwrap(), ActorId(1));
        assert_eq!(w.spawn_actor("prop.box", Transform::from_xy_yaw(5.0, 0.0, 0.0)).unwrap(), ActorId(2));
        assert!(matches!(
            w.spawn_actor("vehicle.truck", Transform::identity()),
            Err(WorldError::UnknownBlueprint(_))
        ));
    }

    #[test]
    fn overlap_rejected() {
        let mut w = empty_world();
        w.spawn_actor("vehicle.sedan", Transform::identity()).unwrap();
        assert!(matches!(
            w.spawn_actor("vehicle.sedan", Transform::identity()),
            Err(WorldError::SpawnOverlap { with: ActorId(1), .. })
        ));
        // lights have no footprint
        assert!(w.spawn_actor("light.standard", Transform::identity()).is_ok());
    }

    #[test]
    fn empty_step() {
        let mut w = empty_world();
        let s = w.step(DEFAULT_DT).unwrap();
        assert_eq!((s.frame, s.actor_count(), s.events.len()), (1, 0, 0));
        assert!(matches!(w.step(0.1), Err(WorldError::StepMismatch { .. })));
    }

    #[test]
    fn coasting_vehicle() {
        let mut w = World::new(
            Arc::new(RoadMap::default()),
            WorldConfig {
                dynamics: VehicleDynamics {
                    drag: 0.0,
                    ..Default::default()
                },
                ..Default::default()
            },
        );
        let id = w.spawn_actor("vehicle.sedan", Transform::identity()).unwrap();
        w.set_vehicle_speed(id, 10.0).unwrap();
        let s = w.step(DEFAULT_DT).unwrap();
        assert!((s.vehicle(id).unwrap().transform.position.x - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ui_walker_moves() {
        let mut w = empty_world();
        let id = w.spawn_actor("walker.avatar", Transform::identity()).unwrap();
        w.enqueue(Command::WalkerControl {
            id,
            direction: Vec2::new(0.0, 1.0),
            speed: 1.4,
            head_yaw: 0.0,
        })
        .unwrap();
        let s = w.step(DEFAULT_DT).unwrap();
        let t = s.walker(id).unwrap().transform;
        assert!((t.position.y - 0.07).abs() < 1e-12);
        assert!(t.position.x.abs() < 1e-12);
    }

    #[test]
    fn vehicle_command_on_walker() {
        let mut w = empty_world();
        let id = w.spawn_actor("walker.avatar", Transform::identity()).unwrap();
        assert_eq!(
            w.enqueue(Command::VehicleControl {
                id,
                control: VehicleControl::default()
            }),
            Err(WorldError::WrongActorKind { id, expected: "vehicle" })
        );
        assert_eq!(
            w.enqueue(Command::Destroy { id: ActorId(9) }),
            Err(WorldError::UnknownActor(ActorId(9)))
        );
    }

    #[test]
    fn light_phases() {
        let l = LightState {
            id: ActorId(1),
            position: Vec2::zeros(),
            stop_line: None,
            timing: LightTiming::default(),
            phase: LightPhase::Red,
            remaining: 0.05,
        };
        let n = traffic_light_step(&l, 0.05);
        assert_eq!((n.phase, n.remaining), (LightPhase::Green, 20.0));
        let g = LightState {
            phase: LightPhase::Green,
            remaining: 5.0,
            ..l
        };
        let n = traffic_light_step(&g, 0.05);
        assert_eq!(n.phase, LightPhase::Green);
        assert!((n.remaining - 4.95).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_destroys() {
        let mut w = World::new(
            Arc::new(RoadMap::default()),
            WorldConfig {
                bounds: Bounds {
                    min: Vec2::new(-10.0, -10.0),
                    max: Vec2::new(10.0, 10.0),
                },
                ..Default::default()
            },
        );
        let id = w.spawn_actor("vehicle.sedan", Transform::from_xy_yaw(9.9, 0.0, 0.0)).unwrap();
        w.set_vehicle_speed(id, 10.0).unwrap();
        let s = w.step(DEFAULT_DT).unwrap();
        assert!(s.events.contains(&Event::OutOfBounds { actor: id }));
        assert!(s.events.contains(&Event::Destroy { actor: id }));
        assert!(s.vehicle(id).is_none());
    }

    #[test]
    fn non_finite_state_freezes() {
        let mut w = World::new(
            Arc::new(RoadMap::default()),
            WorldConfig {
                dynamics: VehicleDynamics {
                    drag: 0.0,
                    ..Default::default()
                },
                ..Default::default()
            },
        );
        let id = w.spawn_actor("vehicle.sedan", Transform::identity()).unwrap();
        w.set_vehicle_speed(id, f64::INFINITY).unwrap();
        let s = w.step(DEFAULT_DT).unwrap();
        assert!(matches!(s.events[0], Event::Fault { actor, .. } if actor == id), "{:?}", s.events);
        assert_eq!(s.vehicle(id).unwrap().transform.position, Vec3::zeros());
        let s = w.step(DEFAULT_DT).unwrap();
        assert!(s.events.is_empty());
    }
}
