//! Road layout model: segments, crosswalks with stop lines, timed lights.
//!
//! The scene document is JSON with the top-level keys `segments`,
//! `crosswalks`, `lights` and `spawn_points`. Omitted lists default to empty.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Transform, Vec2};

pub mod opendrive;

pub use opendrive::parse_opendrive_subset;

/// Maximum distance between a stop line and its crosswalk centroid.
pub const MAX_STOP_LINE_OFFSET: f64 = 50.0;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("dangling reference: crosswalk {crosswalk} refers to missing segment {segment}")]
    DanglingReference { crosswalk: u32, segment: u32 },
    #[error("zero-length segment in road {segment} between points {index} and {}", index + 1)]
    ZeroLengthSegment { segment: u32, index: usize },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u32 },
    #[error("unsupported element <{element}>")]
    Unsupported { element: String },
    #[error("invalid map: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub id: u32,
    pub centerline: Vec<Vec2>,
    pub lane_width: f64,
    pub lanes_forward: u32,
    pub lanes_backward: u32,
    pub speed_limit: f64,
}

impl RoadSegment {
    pub fn length(&self) -> f64 {
        geom::polyline_length(&self.centerline)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.lane_width * f64::from(self.lanes_forward + self.lanes_backward)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    /// Traffic moving along the segment's centerline direction.
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopLine {
    pub approach: Approach,
    pub a: Vec2,
    pub b: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crosswalk {
    pub id: u32,
    pub segment: u32,
    pub polygon: Vec<Vec2>,
    #[serde(default)]
    pub stop_lines: Vec<StopLine>,
}

impl Crosswalk {
    pub fn centroid(&self) -> Vec2 {
        geom::polygon_centroid(&self.polygon)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        geom::convex_contains(&self.polygon, p)
    }

    pub fn distance_to(&self, p: Vec2) -> f64 {
        geom::convex_distance(&self.polygon, p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightPhase {
    Red,
    Green,
    Amber,
}

impl LightPhase {
    pub fn next(self) -> Self {
        match self {
            LightPhase::Red => LightPhase::Green,
            LightPhase::Green => LightPhase::Amber,
            LightPhase::Amber => LightPhase::Red,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightTiming {
    pub red: f64,
    pub green: f64,
    pub amber: f64,
}

impl LightTiming {
    pub fn duration(&self, phase: LightPhase) -> f64 {
        match phase {
            LightPhase::Red => self.red,
            LightPhase::Green => self.green,
            LightPhase::Amber => self.amber,
        }
    }

    pub fn cycle(&self) -> f64 {
        self.red + self.green + self.amber
    }
}

impl Default for LightTiming {
    fn default() -> Self {
        Self {
            red: 20.0,
            green: 20.0,
            amber: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficLightSpec {
    pub id: u32,
    pub position: Vec2,
    pub stop_line: (Vec2, Vec2),
    #[serde(default)]
    pub timing: LightTiming,
    #[serde(default = "default_phase")]
    pub initial_phase: LightPhase,
    /// Time left in the initial phase; defaults to its full duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_remaining: Option<f64>,
}

fn default_phase() -> LightPhase {
    LightPhase::Red
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoadMap {
    #[serde(default)]
    pub segments: Vec<RoadSegment>,
    #[serde(default)]
    pub crosswalks: Vec<Crosswalk>,
    #[serde(default)]
    pub lights: Vec<TrafficLightSpec>,
    #[serde(default)]
    pub spawn_points: Vec<Transform>,
}

impl RoadMap {
    pub fn segment(&self, id: u32) -> Option<&RoadSegment> {
        self.segments.iter().find(|s| s.id == id)
    }

    pub fn crosswalk(&self, id: u32) -> Option<&Crosswalk> {
        self.crosswalks.iter().find(|c| c.id == id)
    }

    /// Segment whose centerline passes closest to `p`.
    pub fn nearest_segment(&self, p: Vec2) -> Option<&RoadSegment> {
        self.segments
            .iter()
            .filter_map(|s| geom::project_onto(&s.centerline, p).map(|(_, d)| (s, d)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(s, _)| s)
    }

    /// Checks every structural invariant of the layout.
    pub fn validate(&self) -> Result<(), MapError> {
        let mut seen = BTreeSet::new();
        for seg in &self.segments {
            if !seen.insert(seg.id) {
                return Err(MapError::DuplicateId {
                    kind: "segment",
                    id: seg.id,
                });
            }
            if seg.centerline.len() < 2 {
                return Err(MapError::Invalid(format!(
                    "segment {} centerline needs at least 2 points",
                    seg.id
                )));
            }
            for (i, w) in seg.centerline.windows(2).enumerate() {
                if w[0] == w[1] {
                    return Err(MapError::ZeroLengthSegment {
                        segment: seg.id,
                        index: i,
                    });
                }
            }
            if !(seg.lane_width > 0.0) || !(seg.speed_limit > 0.0) {
                return Err(MapError::Invalid(format!(
                    "segment {} needs positive lane_width and speed_limit",
                    seg.id
                )));
            }
            if seg.centerline.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                return Err(MapError::Invalid(format!("segment {} has non-finite points", seg.id)));
            }
        }

        let mut cw_ids = BTreeSet::new();
        for cw in &self.crosswalks {
            if !cw_ids.insert(cw.id) {
                return Err(MapError::DuplicateId {
                    kind: "crosswalk",
                    id: cw.id,
                });
            }
            if !seen.contains(&cw.segment) {
                return Err(MapError::DanglingReference {
                    crosswalk: cw.id,
                    segment: cw.segment,
                });
            }
            if cw.polygon.len() < 3 || geom::polygon_signed_area(&cw.polygon).abs() == 0.0 {
                return Err(MapError::Invalid(format!(
                    "crosswalk {} polygon needs 3+ vertices and non-zero area",
                    cw.id
                )));
            }
            if !geom::polygon_is_convex(&cw.polygon) {
                return Err(MapError::Invalid(format!("crosswalk {} polygon is not convex", cw.id)));
            }
            let centroid = cw.centroid();
            for line in &cw.stop_lines {
                if geom::segment_enters_convex(&cw.polygon, line.a, line.b) {
                    return Err(MapError::Invalid(format!(
                        "crosswalk {} stop line crosses the crossing area",
                        cw.id
                    )));
                }
                let mid = (line.a + line.b) * 0.5;
                if (mid - centroid).norm() > MAX_STOP_LINE_OFFSET {
                    return Err(MapError::Invalid(format!(
                        "crosswalk {} stop line is more than {MAX_STOP_LINE_OFFSET} m away",
                        cw.id
                    )));
                }
            }
        }

        let mut light_ids = BTreeSet::new();
        for light in &self.lights {
            if !light_ids.insert(light.id) {
                return Err(MapError::DuplicateId {
                    kind: "light",
                    id: light.id,
                });
            }
            let t = light.timing;
            if !(t.red > 0.0 && t.green > 0.0 && t.amber > 0.0) {
                return Err(MapError::Invalid(format!(
                    "light {} phase durations must be positive",
                    light.id
                )));
            }
        }
        Ok(())
    }
}

/// Parses a scene document into a validated [`RoadMap`].
pub fn parse_scene(text: &str) -> Result<RoadMap, MapError> {
    let map: RoadMap = serde_json::from_str(text).map_err(|e| MapError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    map.validate()?;
    Ok(map)
}

pub fn serialize_scene(map: &RoadMap) -> String {
    serde_json::to_string_pretty(map).expect("road map serializes")
}

/// Arc length from the route start to its first crossing with one of the
/// crosswalk's stop lines, i.e. the line on the side the route approaches from.
pub fn stop_distance_along_route(route: &[Vec2], crosswalk: &Crosswalk) -> Option<f64> {
    crosswalk
        .stop_lines
        .iter()
        .filter_map(|l| geom::first_crossing(route, (l.a, l.b)))
        .min_by(f64::total_cmp)
}
