//! Vehicle autopilot: kinematic bicycle model, pure-pursuit steering, a
//! longitudinal planner with stop targets, pedestrian yielding and the eHMI
//! light strip.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, normalize_angle, Vec2};
use crate::map::{self, LightPhase, RoadMap};
use crate::par::{self, Execution};
use crate::world::{ActorId, LightState, VehicleState, WalkerState};

/// Speed at or below which a vehicle counts as stopped.
pub const STOP_SPEED: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("invalid traffic parameters: {0}")]
    InvalidParams(String),
    #[error("route needs at least 2 waypoints")]
    ShortRoute,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleControl {
    pub throttle: f64,
    /// Positive steers left.
    pub steer: f64,
    pub brake: f64,
}

impl VehicleControl {
    pub fn new(throttle: f64, steer: f64, brake: f64) -> Self {
        Self {
            throttle,
            steer,
            brake,
        }
        .clamped()
    }

    /// Clamps into range; NaN becomes 0.
    pub fn clamped(self) -> Self {
        let c = |v: f64, lo: f64| if v.is_nan() { 0.0 } else { v.clamp(lo, 1.0) };
        Self {
            throttle: c(self.throttle, 0.0),
            steer: c(self.steer, -1.0),
            brake: c(self.brake, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleDynamics {
    /// Acceleration at full throttle, m/s².
    pub a_max: f64,
    /// Deceleration at full brake, m/s².
    pub b_max: f64,
    /// Steering angle at full lock, rad.
    pub delta_max: f64,
    /// Linear drag coefficient, 1/s.
    pub drag: f64,
}

impl Default for VehicleDynamics {
    fn default() -> Self {
        Self {
            a_max: 4.0,
            b_max: 8.0,
            delta_max: 0.5,
            drag: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficParams {
    pub speed_limit_factor: f64,
    pub ignore_lights: bool,
    pub ignore_pedestrians: bool,
    pub comfort_decel: f64,
    pub max_decel: f64,
    /// Radius around a crosswalk inside which an approaching walker counts
    /// as intending to cross, m.
    pub intent_radius: f64,
    /// Minimum approach speed toward the crosswalk for that intent, m/s.
    pub intent_speed: f64,
    pub lookahead: f64,
    /// Gap kept between the front bumper and a stop line, m.
    pub stop_margin: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        Self {
            speed_limit_factor: 1.0,
            ignore_lights: false,
            ignore_pedestrians: false,
            comfort_decel: 3.0,
            max_decel: 8.0,
            intent_radius: 3.0,
            intent_speed: 0.1,
            lookahead: 6.0,
            stop_margin: 2.0,
        }
    }
}

impl TrafficParams {
    pub fn validate(&self) -> Result<(), TrafficError> {
        let bad = |m: &str| Err(TrafficError::InvalidParams(m.into()));
        if !(self.speed_limit_factor > 0.0) {
            return bad("speed_limit_factor must be > 0");
        }
        if !(self.comfort_decel > 0.0) {
            return bad("comfort_decel must be > 0");
        }
        if !(self.max_decel >= self.comfort_decel) {
            return bad("max_decel must be >= comfort_decel");
        }
        if !(self.lookahead > 0.0) {
            return bad("lookahead must be > 0");
        }
        if !(self.intent_radius >= 0.0 && self.intent_speed >= 0.0 && self.stop_margin >= 0.0) {
            return bad("intent_radius, intent_speed and stop_margin must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EhmiMode {
    #[default]
    Off,
    Cruising,
    Yielding,
    Stopped,
}

pub const STRIP_CYAN: [u8; 3] = [0, 255, 255];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EhmiState {
    pub mode: EhmiMode,
    pub strip_active: bool,
    pub strip_color: [u8; 3],
}

impl Default for EhmiState {
    fn default() -> Self {
        Self {
            mode: EhmiMode::Off,
            strip_active: false,
            strip_color: STRIP_CYAN,
        }
    }
}

pub fn ehmi_update(prev: &EhmiState, yielding: bool, v: f64) -> EhmiState {
    let mode = match (yielding, v > STOP_SPEED) {
        (true, true) => EhmiMode::Yielding,
        (true, false) => EhmiMode::Stopped,
        (false, _) => EhmiMode::Cruising,
    };
    EhmiState {
        mode,
        strip_active: matches!(mode, EhmiMode::Yielding | EhmiMode::Stopped),
        strip_color: prev.strip_color,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub waypoints: Vec<Vec2>,
    pub target_speed: f64,
}

impl Route {
    pub fn new(waypoints: Vec<Vec2>, target_speed: f64) -> Result<Self, TrafficError> {
        if waypoints.len() < 2 {
            return Err(TrafficError::ShortRoute);
        }
        Ok(Self {
            waypoints,
            target_speed,
        })
    }

    pub fn length(&self) -> f64 {
        geom::polyline_length(&self.waypoints)
    }
}

/// Advances one vehicle by `dt` under the kinematic bicycle model.
pub fn bicycle_step(state: &VehicleState, control: &VehicleControl, dt: f64, dy: &VehicleDynamics) -> VehicleState {
    let c = control.clamped();
    let v = state.speed;
    let raw = v + (dy.a_max * c.throttle - dy.b_max * c.brake - dy.drag * v) * dt;
    // NaN must surface as a fault rather than be clamped away
    let v_next = if raw.is_nan() { raw } else { raw.max(0.0) };
    let mut next = state.clone();
    let yaw = normalize_angle(state.transform.yaw + v_next / state.wheelbase * (dy.delta_max * c.steer).tan() * dt);
    next.transform.yaw = yaw;
    next.transform.position.x += v_next * yaw.cos() * dt;
    next.transform.position.y += v_next * yaw.sin() * dt;
    next.speed = v_next;
    next.control = c;
    next
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pursuit {
    pub steer: f64,
    pub finished: bool,
}

/// Steering toward the route point one `lookahead` beyond the vehicle's
/// projection onto the route.
pub fn pure_pursuit(state: &VehicleState, route: &[Vec2], lookahead: f64, delta_max: f64) -> Pursuit {
    if route.len() < 2 {
        return Pursuit {
            steer: 0.0,
            finished: true,
        };
    }
    let pos = state.transform.xy();
    let (s, _) = geom::project_onto(route, pos).expect("route is not empty");
    let total = geom::polyline_length(route);
    let (target, _) = geom::point_at(route, s + lookahead).expect("route is not empty");
    let d = target - pos;
    let (sin, cos) = state.transform.yaw.sin_cos();
    let y_l = -sin * d.x + cos * d.y;
    let kappa = 2.0 * y_l / (lookahead * lookahead);
    Pursuit {
        steer: ((kappa * state.wheelbase).atan() / delta_max).clamp(-1.0, 1.0),
        finished: s >= total,
    }
}

/// Throttle and brake for the current speed, a target speed and an optional
/// distance to a stop point.
pub fn longitudinal_plan(v: f64, target_speed: f64, stop_at: Option<f64>, params: &TrafficParams) -> (f64, f64) {
    let mut target = target_speed.max(0.0);
    if let Some(d) = stop_at {
        let d = d.max(0.0);
        if d < 0.1 && v < STOP_SPEED {
            return (0.0, 1.0);
        }
        let required = if d > 0.0 { v * v / (2.0 * d) } else { f64::INFINITY };
        if required >= params.comfort_decel {
            return (0.0, (required / params.max_decel).clamp(0.0, 1.0));
        }
        // never faster than what still allows a comfortable stop
        target = target.min((2.0 * params.comfort_decel * d).sqrt());
    }
    let err = target - v;
    if err >= 0.0 {
        ((0.5 * err).clamp(0.0, 1.0), 0.0)
    } else {
        (0.0, (-0.25 * err).clamp(0.0, 1.0))
    }
}

/// Center of the front bumper in the ground plane.
pub fn front_bumper(state: &VehicleState) -> Vec2 {
    state.transform.xy() + state.transform.heading() * state.half_extents.x
}

/// Route from the vehicle's front bumper onward.
pub fn route_ahead(state: &VehicleState, route: &[Vec2]) -> Vec<Vec2> {
    let bumper = front_bumper(state);
    match geom::project_onto(route, bumper) {
        Some((s, _)) => geom::trim_start(route, s),
        None => Vec::new(),
    }
}

fn walker_intends_to_cross(w: &WalkerState, poly: &[Vec2], params: &TrafficParams) -> bool {
    let p = w.transform.xy();
    if geom::convex_contains(poly, p) {
        return true;
    }
    let closest = geom::convex_closest_point(poly, p);
    let gap = closest - p;
    let dist = gap.norm();
    if dist > params.intent_radius || dist == 0.0 {
        return false;
    }
    let velocity = w.direction * w.speed;
    velocity.dot(&(gap / dist)) > params.intent_speed
}

/// Distance along the route ahead of the front bumper to the stop line of
/// the nearest crosswalk that a walker occupies or is about to enter.
pub fn pedestrian_yield_decision(
    vehicle: &VehicleState,
    route: &[Vec2],
    walkers: &[WalkerState],
    map: &RoadMap,
    params: &TrafficParams,
) -> Option<f64> {
    if params.ignore_pedestrians {
        return None;
    }
    let ahead = route_ahead(vehicle, route);
    map.crosswalks
        .iter()
        .filter_map(|cw| {
            let d = map::stop_distance_along_route(&ahead, cw)?;
            walkers
                .iter()
                .any(|w| walker_intends_to_cross(w, &cw.polygon, params))
                .then_some(d)
        })
        .min_by(f64::total_cmp)
}

/// Distance to the nearest red (or stoppable amber) light's stop line ahead.
pub fn light_stop_distance(vehicle: &VehicleState, route: &[Vec2], lights: &[LightState], params: &TrafficParams) -> Option<f64> {
    if params.ignore_lights {
        return None;
    }
    let ahead = route_ahead(vehicle, route);
    lights
        .iter()
        .filter_map(|l| {
            let line = l.stop_line?;
            let d = geom::first_crossing(&ahead, line)?;
            let stop = match l.phase {
                LightPhase::Red => true,
                LightPhase::Amber => vehicle.speed.powi(2) / (2.0 * d.max(1e-6)) <= params.comfort_decel,
                LightPhase::Green => false,
            };
            stop.then_some(d)
        })
        .min_by(f64::total_cmp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub control: VehicleControl,
    pub yielding: bool,
    pub finished: bool,
    pub target_speed: f64,
}

/// Speed target: the speed limit of the segment under the vehicle scaled by
/// the traffic factor, or the route's own target off-road.
pub fn speed_target(vehicle: &VehicleState, route: &Route, map: &RoadMap, params: &TrafficParams) -> f64 {
    let p = vehicle.transform.xy();
    let on_road = map.nearest_segment(p).filter(|s| {
        geom::project_onto(&s.centerline, p).is_some_and(|(_, d)| d <= s.half_width() + 1.0)
    });
    match on_road {
        Some(seg) => seg.speed_limit * params.speed_limit_factor,
        None => route.target_speed * params.speed_limit_factor,
    }
}

pub fn decide(
    vehicle: &VehicleState,
    route: &Route,
    walkers: &[WalkerState],
    lights: &[LightState],
    map: &RoadMap,
    params: &TrafficParams,
    dynamics: &VehicleDynamics,
) -> Decision {
    let pursuit = pure_pursuit(vehicle, &route.waypoints, params.lookahead, dynamics.delta_max);
    let yield_at = pedestrian_yield_decision(vehicle, &route.waypoints, walkers, map, params);
    let light_at = light_stop_distance(vehicle, &route.waypoints, lights, params);
    let end_at = geom::polyline_length(&route_ahead(vehicle, &route.waypoints)) + params.stop_margin;
    let stop_at = [yield_at, light_at, Some(end_at)]
        .into_iter()
        .flatten()
        .map(|d| d - params.stop_margin)
        .min_by(f64::total_cmp);
    let target_speed = speed_target(vehicle, route, map, params);
    let (throttle, brake) = longitudinal_plan(vehicle.speed, target_speed, stop_at, params);
    Decision {
        control: VehicleControl::new(throttle, pursuit.steer, brake),
        yielding: yield_at.is_some(),
        finished: pursuit.finished,
        target_speed,
    }
}

/// Decisions for every managed vehicle, evaluated independently and keyed by
/// actor id.
pub fn traffic_manager_step(
    managed: &[(&VehicleState, &Route)],
    walkers: &[WalkerState],
    lights: &[LightState],
    map: &RoadMap,
    params: &TrafficParams,
    dynamics: &VehicleDynamics,
    exec: Execution,
) -> BTreeMap<ActorId, Decision> {
    let out = par::map_slice(exec, managed, |(v, r)| (v.id, decide(v, r, walkers, lights, map, params, dynamics)));
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Transform, Vec3};
    use crate::map::{Approach, Crosswalk, RoadSegment, StopLine};
    use crate::world::DriveMode;

    fn car(x: f64, y: f64, yaw: f64, v: f64) -> VehicleState {
        VehicleState {
            id: ActorId(1),
            transform: Transform::from_xy_yaw(x, y, yaw),
            speed: v,
            wheelbase: 2.7,
            half_extents: Vec3::new(2.3, 0.95, 0.75),
            control: VehicleControl::default(),
            ehmi: EhmiState::default(),
        }
    }

    fn walker(x: f64, y: f64, dir: Vec2, speed: f64) -> WalkerState {
        WalkerState {
            id: ActorId(2),
            transform: Transform::from_xy_yaw(x, y, 0.0),
            speed,
            direction: dir,
            head_yaw: 0.0,
            drive_mode: DriveMode::UiDrive,
            pose: None,
        }
    }

    fn no_drag() -> VehicleDynamics {
        VehicleDynamics {
            drag: 0.0,
            ..Default::default()
        }
    }

    fn road_map() -> RoadMap {
        RoadMap {
            segments: vec![RoadSegment {
                id: 1,
                centerline: vec![Vec2::new(-100.0, 0.0), Vec2::new(100.0, 0.0)],
                lane_width: 3.5,
                lanes_forward: 1,
                lanes_backward: 1,
                speed_limit: 10.0,
            }],
            crosswalks: vec![Crosswalk {
                id: 1,
                segment: 1,
                polygon: vec![
                    Vec2::new(28.0, -4.0),
                    Vec2::new(32.0, -4.0),
                    Vec2::new(32.0, 4.0),
                    Vec2::new(28.0, 4.0),
                ],
                stop_lines: vec![StopLine {
                    approach: Approach::Forward,
                    a: Vec2::new(26.0, -4.0),
                    b: Vec2::new(26.0, 0.0),
                }],
            }],
            ..Default::default()
        }
    }

    #[test]
    fn coasting_advances() {
        let s = bicycle_step(&car(0.0, 0.0, 0.0, 10.0), &VehicleControl::default(), 0.05, &no_drag());
        assert!((s.transform.position.x - 0.5).abs() < 1e-12);
        assert_eq!(s.speed, 10.0);
        assert_eq!(s.transform.yaw, 0.0);
    }

    #[test]
    fn pursuit_formula() {
        let route = [Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 1.0)];
        let v = car(0.0, 0.0, 0.0, 0.0);
        // oracle: lookahead point at (10, 0) straight ahead
        assert_eq!(pure_pursuit(&v, &route, 10.0, 0.5).steer, 0.0);
        // vehicle offset so that the lookahead point sits 1 m to its left
        let v = car(0.0, -1.0, 0.0, 0.0);
        let straight = [Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)];
        let p = pure_pursuit(&v, &straight, 10.0, 0.5);
        assert!((p.steer - (0.02f64 * 2.7).atan() / 0.5).abs() < 1e-12);
        assert!((p.steer - 0.1079).abs() < 1e-4);
        let left = [Vec2::new(0.0, 0.0), Vec2::new(0.0, 50.0)];
        assert!(pure_pursuit(&car(0.0, 0.0, 0.0, 0.0), &left, 5.0, 0.5).steer > 0.0);
        let empty = pure_pursuit(&v, &[], 10.0, 0.5);
        assert_eq!(empty.steer, 0.0);
        assert!(empty.finished);
    }

    #[test]
    fn planner_cases() {
        let p = TrafficParams::default();
        let (t, b) = longitudinal_plan(5.0, 10.0, None, &p);
        assert!(t > 0.0 && b == 0.0);
        let (t, b) = longitudinal_plan(10.0, 10.0, Some(5.0), &p);
        assert_eq!((t, b), (0.0, 1.0));
        assert_eq!(longitudinal_plan(0.0, 10.0, Some(0.0), &p), (0.0, 1.0));
        // required 64/(2*16) = 2 < comfort: track a capped target instead
        let (t, b) = longitudinal_plan(8.0, 10.0, Some(16.0), &p);
        assert_eq!(b, 0.0);
        assert!(t > 0.0);
    }

    #[test]
    fn ehmi_state_map() {
        let s = ehmi_update(&EhmiState::default(), false, 10.0);
        assert_eq!((s.mode, s.strip_active), (EhmiMode::Cruising, false));
        let s = ehmi_update(&s, true, 3.0);
        assert_eq!((s.mode, s.strip_active), (EhmiMode::Yielding, true));
        let s = ehmi_update(&s, true, 0.0);
        assert_eq!((s.mode, s.strip_active), (EhmiMode::Stopped, true));
        let s = ehmi_update(&s, false, 1.0);
        assert_eq!((s.mode, s.strip_active), (EhmiMode::Cruising, false));
        assert_eq!(s.strip_color, STRIP_CYAN);
    }

    #[test]
    fn yield_cases() {
        let map = road_map();
        let route = [Vec2::new(-100.0, -1.75), Vec2::new(100.0, -1.75)];
        let v = car(0.0, -1.75, 0.0, 8.0);
        let p = TrafficParams::default();
        let inside = [walker(30.0, -2.0, Vec2::new(0.0, 1.0), 0.0)];
        let d = pedestrian_yield_decision(&v, &route, &inside, &map, &p).unwrap();
        // bumper at x = 2.3, stop line at x = 26
        assert!((d - 23.7).abs() < 1e-9);
        let away = [walker(30.0, -24.0, Vec2::new(0.0, -1.0), 1.4)];
        assert!(pedestrian_yield_decision(&v, &route, &away, &map, &p).is_none());
        let approaching = [walker(30.0, -6.0, Vec2::new(0.0, 1.0), 1.2)];
        assert!(pedestrian_yield_decision(&v, &route, &approaching, &map, &p).is_some());
        let ignoring = TrafficParams {
            ignore_pedestrians: true,
            ..p
        };
        assert!(pedestrian_yield_decision(&v, &route, &inside, &map, &ignoring).is_none());
    }

    #[test]
    fn speed_factor_scales_limit() {
        let map = road_map();
        let route = Route::new(vec![Vec2::new(-100.0, -1.75), Vec2::new(100.0, -1.75)], 5.0).unwrap();
        let p = TrafficParams {
            speed_limit_factor: 1.2,
            ..Default::default()
        };
        assert!((speed_target(&car(0.0, -1.75, 0.0, 0.0), &route, &map, &p) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn red_light_brakes_early() {
        let light = LightState {
            id: ActorId(5),
            position: Vec2::new(20.0, -4.0),
            stop_line: Some((Vec2::new(20.0, -4.0), Vec2::new(20.0, 0.0))),
            timing: Default::default(),
            phase: LightPhase::Red,
            remaining: 10.0,
        };
        let map = RoadMap {
            crosswalks: vec![],
            ..road_map()
        };
        let route = Route::new(vec![Vec2::new(-100.0, -1.75), Vec2::new(200.0, -1.75)], 10.0).unwrap();
        let v = car(0.0, -1.75, 0.0, 10.0);
        let dy = VehicleDynamics::default();
        let p = TrafficParams::default();
        let d = decide(&v, &route, &[], std::slice::from_ref(&light), &map, &p, &dy);
        assert!(d.control.brake > 0.0);
        let p2 = TrafficParams {
            ignore_lights: true,
            ..p
        };
        let d = decide(&v, &route, &[], std::slice::from_ref(&light), &map, &p2, &dy);
        assert_eq!(d.control.brake, 0.0);
    }
}
