//! Declarative scenarios: a map, an actor roster and a tick budget, run
//! headless in lockstep and recorded every tick.
//!
//! Relative file paths in a scenario resolve against the scenario file's
//! directory.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, cross2, Transform, Vec2};
use crate::map::{self, MapError, RoadMap};
use crate::mocap::{parse_bvh, parse_tracker_stream, synth, AvatarConfig, BvhClip};
use crate::par::Execution;
use crate::record::{RecordError, RecordHeader, RecordLog, FORMAT_VERSION};
use crate::traffic::{self, Route, TrafficParams, VehicleDynamics};
use crate::world::collision;
use crate::world::{ActorId, Blueprint, Event, VehicleState, WalkerDrive, World, WorldConfig, WorldError, DEFAULT_DT};

/// How far beyond the carriageway edge walkers and props may spawn.
pub const OFFROAD_MARGIN: f64 = 6.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario config: {0}")]
    Config(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("map: {0}")]
    Map(#[from] MapError),
    #[error("actor {index} ({blueprint}): {source}")]
    Spawn {
        index: usize,
        blueprint: String,
        #[source]
        source: WorldError,
    },
    #[error("tick {frame}: {source}")]
    Step {
        frame: u64,
        #[source]
        source: WorldError,
    },
    #[error(transparent)]
    Record(#[from] RecordError),
}

impl ScenarioError {
    /// Errors raised before the first tick are configuration problems.
    pub fn is_config(&self) -> bool {
        !matches!(self, ScenarioError::Step { .. } | ScenarioError::Record(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSource {
    Inline(RoadMap),
    /// Path to a JSON scene document.
    Scene(PathBuf),
    /// Path to an OpenDRIVE file (supported subset).
    Opendrive(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipSource {
    File(PathBuf),
    /// Generated straight walk followed by a standing hold.
    Crossing {
        distance: f64,
        speed: f64,
        hold: f64,
        #[serde(default = "default_frame_time")]
        frame_time: f64,
    },
}

fn default_frame_time() -> f64 {
    1.0 / 30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DriveSpec {
    UiDrive,
    BvhReplay {
        clip: ClipSource,
        /// Defaults to the actor's spawn transform.
        #[serde(default)]
        anchor: Option<Transform>,
        #[serde(default)]
        start_time: f64,
    },
    LiveFusion {
        tracker: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub waypoints: Vec<Vec2>,
    pub target_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub blueprint: String,
    pub transform: Transform,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<RouteSpec>,
    /// Initial speed for vehicles (m/s).
    #[serde(default)]
    pub speed: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive: Option<DriveSpec>,
}

/// Checks applied to the run summary; a failed check is a scenario
/// assertion failure.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Expectations {
    pub complete_stop: Option<bool>,
    pub collision: Option<bool>,
    /// Allowed [min, max] bumper distance before the nearest stop line at the
    /// end of the run, for every routed vehicle.
    pub stop_line_window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub map: MapSource,
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub traffic: TrafficParams,
    #[serde(default)]
    pub dynamics: VehicleDynamics,
    #[serde(default)]
    pub avatar: AvatarConfig,
    /// Number of ticks to simulate.
    pub duration: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub expect: Expectations,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl ScenarioConfig {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ScenarioError> {
        let mut cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&read(path)?, base)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Map reference written into the log header.
    pub fn map_reference(&self) -> String {
        match &self.map {
            MapSource::Inline(_) => "inline".into(),
            MapSource::Scene(p) | MapSource::Opendrive(p) => p.display().to_string(),
        }
    }

    pub fn load_map(&self) -> Result<RoadMap, ScenarioError> {
        Ok(match &self.map {
            MapSource::Inline(m) => {
                m.validate()?;
                m.clone()
            }
            MapSource::Scene(p) => map::parse_scene(&read(&self.resolve(p))?)?,
            MapSource::Opendrive(p) => map::parse_opendrive_subset(&read(&self.resolve(p))?)?,
        })
    }

    pub fn world_config(&self, exec: Execution) -> WorldConfig {
        WorldConfig {
            dt: self.dt,
            seed: self.seed,
            dynamics: self.dynamics,
            traffic: self.traffic,
            avatar: self.avatar.clone(),
            exec,
            ..WorldConfig::default()
        }
    }

    /// Structural checks that need the map.
    pub fn validate(&self, map: &RoadMap) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        if self.duration < 1 {
            return bad("duration must be at least 1 tick".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive".into());
        }
        self.traffic
            .validate()
            .map_err(|e| ScenarioError::Config(e.to_string()))?;
        for (i, a) in self.actors.iter().enumerate() {
            let bp: Blueprint = a
                .blueprint
                .parse()
                .map_err(|e: WorldError| ScenarioError::Config(format!("actor {i}: {e}")))?;
            if !on_map(map, bp, a.transform.xy()) {
                return bad(format!("actor {i} ({}) spawns off the map", a.blueprint));
            }
            if !(a.speed >= 0.0 && a.speed.is_finite()) {
                return bad(format!("actor {i}: speed must be finite and >= 0"));
            }
            if a.route.is_some() && bp != Blueprint::VehicleSedan {
                return bad(format!("actor {i}: only vehicles take routes"));
            }
            if a.drive.is_some() && bp != Blueprint::WalkerAvatar {
                return bad(format!("actor {i}: only walkers take a drive mode"));
            }
        }
        Ok(())
    }
}

/// Vehicles must spawn on a carriageway; walkers and props within
/// [`OFFROAD_MARGIN`] of one or on a crosswalk.
pub fn on_map(map: &RoadMap, blueprint: Blueprint, p: Vec2) -> bool {
    let margin = match blueprint {
        Blueprint::VehicleSedan => 0.0,
        Blueprint::WalkerAvatar | Blueprint::PropBox => OFFROAD_MARGIN,
        Blueprint::LightStandard => OFFROAD_MARGIN,
    };
    let near_road = map
        .segments
        .iter()
        .any(|s| geom::project_onto(&s.centerline, p).is_some_and(|(_, d)| d <= s.half_width() + margin));
    near_road || map.crosswalks.iter().any(|c| c.contains(p))
}

/// Signed distance along the heading from the front bumper to the nearest
/// stop line the heading line crosses; positive when the line is ahead.
pub fn stop_line_distance(vehicle: &VehicleState, map: &RoadMap) -> Option<f64> {
    let bumper = traffic::front_bumper(vehicle);
    let h = vehicle.transform.heading();
    let lines = map
        .crosswalks
        .iter()
        .flat_map(|c| c.stop_lines.iter().map(|l| (l.a, l.b)))
        .chain(map.lights.iter().map(|l| l.stop_line));
    lines
        .filter_map(|(a, b)| {
            let e = b - a;
            let denom = cross2(h, e);
            if denom.abs() < 1e-12 {
                return None;
            }
            let w = a - bumper;
            let t = cross2(w, e) / denom;
            let s = cross2(w, h) / denom;
            (-1e-9..=1.0 + 1e-9).contains(&s).then_some(t)
        })
        .min_by(|x, y| x.abs().total_cmp(&y.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSummary {
    pub id: ActorId,
    pub final_speed: f64,
    pub stop_line_distance: Option<f64>,
    pub routed: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub ticks: u64,
    pub collision_events: usize,
    pub collision_pairs: Vec<(ActorId, ActorId)>,
    pub complete_stops: Vec<(u64, ActorId)>,
    /// Smallest vehicle-to-walker footprint clearance seen (negative when
    /// overlapping).
    pub min_gap: Option<f64>,
    pub faults: Vec<String>,
    pub vehicles: Vec<VehicleSummary>,
}

impl ScenarioSummary {
    pub fn from_log(log: &RecordLog, map: &RoadMap, routed: &BTreeSet<ActorId>) -> Self {
        let mut s = ScenarioSummary {
            ticks: log.frames.last().map_or(0, |f| f.frame),
            ..Default::default()
        };
        let mut pairs = BTreeSet::new();
        for snap in log.replay() {
            for e in &snap.events {
                match e {
                    Event::Collision { a, b, .. } => {
                        s.collision_events += 1;
                        pairs.insert((*a, *b));
                    }
                    Event::CompleteStop { actor } => s.complete_stops.push((snap.frame, *actor)),
                    Event::Fault { actor, detail } => s.faults.push(format!("frame {}: {actor}: {detail}", snap.frame)),
                    _ => {}
                }
            }
            for v in &snap.vehicles {
                for w in &snap.walkers {
                    let gap = -collision::depth(&v.footprint(), &w.footprint());
                    s.min_gap = Some(s.min_gap.map_or(gap, |g: f64| g.min(gap)));
                }
            }
        }
        s.collision_pairs = pairs.into_iter().collect();
        if let Some(last) = log.frames.last() {
            s.vehicles = last
                .vehicles
                .iter()
                .map(|v| VehicleSummary {
                    id: v.id,
                    final_speed: v.speed,
                    stop_line_distance: stop_line_distance(v, map),
                    routed: routed.contains(&v.id),
                })
                .collect();
        }
        s
    }

    /// Failed expectations, one message each.
    pub fn check(&self, expect: &Expectations) -> Vec<String> {
        let mut failures = Vec::new();
        if let Some(want) = expect.complete_stop {
            if want != !self.complete_stops.is_empty() {
                failures.push(format!("expected complete stop: {want}, got {}", self.complete_stops.len()));
            }
        }
        if let Some(want) = expect.collision {
            if want != (self.collision_events > 0) {
                failures.push(format!("expected collision: {want}, got {} events", self.collision_events));
            }
        }
        if let Some([lo, hi]) = expect.stop_line_window {
            for v in self.vehicles.iter().filter(|v| v.routed) {
                match v.stop_line_distance {
                    Some(d) if d >= lo && d <= hi => {}
                    other => failures.push(format!(
                        "vehicle {} stop line distance {other:?} outside [{lo}, {hi}]",
                        v.id
                    )),
                }
            }
        }
        failures
    }
}

impl fmt::Display for ScenarioSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ticks: {}", self.ticks)?;
        writeln!(
            f,
            "collisions: {} events, {} pairs",
            self.collision_events,
            self.collision_pairs.len()
        )?;
        for (a, b) in &self.collision_pairs {
            writeln!(f, "  collision {a} <-> {b}")?;
        }
        writeln!(f, "complete stops: {}", self.complete_stops.len())?;
        for (frame, actor) in &self.complete_stops {
            writeln!(f, "  complete stop: actor {actor} at frame {frame}")?;
        }
        match self.min_gap {
            Some(g) => writeln!(f, "min gap: {g:.3} m")?,
            None => writeln!(f, "min gap: n/a")?,
        }
        for v in &self.vehicles {
            let line = v
                .stop_line_distance
                .map_or("none".to_string(), |d| format!("{d:.3} m"));
            writeln!(
                f,
                "vehicle {}: final speed {:.3} m/s, bumper to stop line {line}",
                v.id, v.final_speed
            )?;
        }
        writeln!(f, "faults: {}", self.faults.len())?;
        for fault in &self.faults {
            writeln!(f, "  {fault}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub log: RecordLog,
    pub summary: ScenarioSummary,
    pub failures: Vec<String>,
}

fn load_clip(cfg: &ScenarioConfig, src: &ClipSource) -> Result<BvhClip, ScenarioError> {
    match src {
        ClipSource::File(p) => {
            let path = cfg.resolve(p);
            parse_bvh(&read(&path)?).map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))
        }
        ClipSource::Crossing {
            distance,
            speed,
            hold,
            frame_time,
        } => {
            let ok = [*distance, *speed, *frame_time].iter().all(|v| *v > 0.0 && v.is_finite())
                && *hold >= 0.0
                && hold.is_finite();
            if !ok {
                return Err(ScenarioError::Config("crossing clip parameters must be positive".into()));
            }
            Ok(synth::crossing_clip(*distance, *speed, *hold, *frame_time))
        }
    }
}

/// Builds the world with every actor spawned and configured, before the
/// first tick.
pub fn build_world(cfg: &ScenarioConfig, exec: Execution) -> Result<(World, BTreeSet<ActorId>), ScenarioError> {
    let map = Arc::new(cfg.load_map()?);
    cfg.validate(&map)?;
    let mut world = World::new(map, cfg.world_config(exec));
    let mut routed = BTreeSet::new();
    for (index, a) in cfg.actors.iter().enumerate() {
        let spawn_err = |source| ScenarioError::Spawn {
            index,
            blueprint: a.blueprint.clone(),
            source,
        };
        let id = world.spawn_actor(&a.blueprint, a.transform).map_err(spawn_err)?;
        if a.speed > 0.0 {
            world.set_vehicle_speed(id, a.speed).map_err(spawn_err)?;
        }
        if let Some(r) = &a.route {
            let route = Route::new(r.waypoints.clone(), r.target_speed)
                .map_err(|e| ScenarioError::Config(format!("actor {index}: {e}")))?;
            world.set_route(id, route).map_err(spawn_err)?;
            routed.insert(id);
        }
        if let Some(drive) = &a.drive {
            let drive = match drive {
                DriveSpec::UiDrive => WalkerDrive::UiDrive,
                DriveSpec::BvhReplay {
                    clip,
                    anchor,
                    start_time,
                } => WalkerDrive::BvhReplay {
                    clip: Arc::new(load_clip(cfg, clip)?),
                    anchor: anchor.unwrap_or(a.transform),
                    start_time: *start_time,
                },
                DriveSpec::LiveFusion { tracker } => {
                    let path = cfg.resolve(tracker);
                    let samples = parse_tracker_stream(&read(&path)?)
                        .map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
                    WalkerDrive::LiveFusion {
                        stream: Arc::new(samples),
                    }
                }
            };
            world.set_walker_drive(id, drive).map_err(spawn_err)?;
        }
    }
    Ok((world, routed))
}

/// Runs `duration` lockstep ticks. The log holds the initial state as frame
/// 0 followed by one record per tick.
pub fn run_scenario(cfg: &ScenarioConfig, exec: Execution) -> Result<ScenarioRun, ScenarioError> {
    let (mut world, routed) = build_world(cfg, exec)?;
    let header = RecordHeader {
        format_version: FORMAT_VERSION,
        map: cfg.map_reference(),
        dt: cfg.dt,
        seed: cfg.seed,
        joints: world.joint_names(),
        rig: world.rig().clone(),
    };
    let mut log = RecordLog::new(header);
    log.record_tick(world.snapshot())?;
    for _ in 0..cfg.duration {
        let snap = world
            .step(cfg.dt)
            .map_err(|source| ScenarioError::Step {
                frame: world.frame() + 1,
                source,
            })?;
        log.record_tick(snap)?;
    }
    let summary = ScenarioSummary::from_log(&log, world.map(), &routed);
    let failures = summary.check(&cfg.expect);
    Ok(ScenarioRun { log, summary, failures })
}

/// The AV-yields-to-pedestrian crossing: one sedan on a straight two-lane
/// road and one walker replaying a crossing clip into its lane.
pub fn crosswalk_demo() -> ScenarioConfig {
    let v = |x: f64, y: f64| Vec2::new(x, y);
    let map = RoadMap {
        segments: vec![map::RoadSegment {
            id: 1,
            centerline: vec![v(-60.0, 0.0), v(220.0, 0.0)],
            lane_width: 3.5,
            lanes_forward: 1,
            lanes_backward: 1,
            speed_limit: 10.0,
        }],
        crosswalks: vec![map::Crosswalk {
            id: 1,
            segment: 1,
            polygon: vec![v(28.0, -4.0), v(32.0, -4.0), v(32.0, 4.0), v(28.0, 4.0)],
            stop_lines: vec![map::StopLine {
                approach: map::Approach::Forward,
                a: v(26.0, -4.0),
                b: v(26.0, 0.0),
            }],
        }],
        lights: Vec::new(),
        spawn_points: vec![Transform::from_xy_yaw(-40.0, -1.75, 0.0)],
    };
    let walker_spawn = Transform::from_xy_yaw(30.0, -9.0, std::f64::consts::FRAC_PI_2);
    ScenarioConfig {
        map: MapSource::Inline(map),
        actors: vec![
            ActorSpec {
                blueprint: Blueprint::VehicleSedan.as_str().into(),
                transform: Transform::from_xy_yaw(-40.0, -1.75, 0.0),
                route: Some(RouteSpec {
                    waypoints: vec![v(-40.0, -1.75), v(200.0, -1.75)],
                    target_speed: 8.0,
                }),
                speed: 8.0,
                drive: None,
            },
            ActorSpec {
                blueprint: Blueprint::WalkerAvatar.as_str().into(),
                transform: walker_spawn,
                route: None,
                speed: 0.0,
                drive: Some(DriveSpec::BvhReplay {
                    clip: ClipSource::Crossing {
                        distance: 7.0,
                        speed: 1.25,
                        hold: 1.0,
                        frame_time: default_frame_time(),
                    },
                    anchor: None,
                    start_time: 0.0,
                }),
            },
        ],
        traffic: TrafficParams::default(),
        dynamics: VehicleDynamics::default(),
        avatar: AvatarConfig::default(),
        duration: 600,
        seed: 7,
        dt: DEFAULT_DT,
        expect: Expectations {
            complete_stop: Some(true),
            collision: Some(false),
            stop_line_window: Some([0.5, 5.0]),
        },
        base_dir: PathBuf::new(),
    }
}

/// The crossing demo with extra through traffic in both lanes, `vehicles`
/// in total (at most 10). Used for load measurements; no expectations.
pub fn busy_crosswalk(vehicles: usize) -> ScenarioConfig {
    use std::f64::consts::PI;
    let mut cfg = crosswalk_demo();
    let slots = [
        (45.0, -1.75, 0.0),
        (75.0, -1.75, 0.0),
        (105.0, -1.75, 0.0),
        (135.0, -1.75, 0.0),
        (165.0, -1.75, 0.0),
        (-20.0, 1.75, PI),
        (20.0, 1.75, PI),
        (60.0, 1.75, PI),
        (100.0, 1.75, PI),
    ];
    for &(x, y, yaw) in slots.iter().take(vehicles.saturating_sub(1)) {
        let end = if yaw == 0.0 { 215.0 } else { -55.0 };
        cfg.actors.push(ActorSpec {
            blueprint: Blueprint::VehicleSedan.as_str().into(),
            transform: Transform::from_xy_yaw(x, y, yaw),
            route: Some(RouteSpec {
                waypoints: vec![Vec2::new(x, y), Vec2::new(end, y)],
                target_speed: 6.0,
            }),
            speed: 6.0,
            drive: None,
        });
    }
    cfg.expect = Expectations::default();
    cfg
}
