//! OpenDRIVE subset reader.
//!
//! Supported: `road` elements with `planView` line geometries, the first
//! `laneSection` with constant-width driving lanes, an optional `type/speed`
//! record, and `object type="crosswalk"` entries with an outline or a
//! length/width footprint. Arcs, spirals and polynomial geometries are
//! rejected. Stop lines are not part of OpenDRIVE objects; one is derived per
//! approach, [`STOP_LINE_SETBACK`] meters before the crossing.

use roxmltree::{Document, Node};

use super::{Approach, Crosswalk, MapError, RoadMap, RoadSegment, StopLine};
use crate::geom::{self, Vec2};

pub const STOP_LINE_SETBACK: f64 = 2.0;
const DEFAULT_SPEED_LIMIT: f64 = 50.0 / 3.6;

pub fn parse_opendrive_subset(text: &str) -> Result<RoadMap, MapError> {
    let doc = Document::parse(text).map_err(|e| {
        let pos = e.pos();
        MapError::Syntax {
            line: pos.row as usize,
            column: pos.col as usize,
            message: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "OpenDRIVE" {
        return Err(MapError::Invalid(format!(
            "expected <OpenDRIVE> root, found <{}>",
            root.tag_name().name()
        )));
    }

    let mut map = RoadMap::default();
    for child in root.children().filter(Node::is_element) {
        match child.tag_name().name() {
            "road" => {
                let (segment, crosswalks) = parse_road(child)?;
                map.segments.push(segment);
                map.crosswalks.extend(crosswalks);
            }
            "junction" | "controller" => {
                return Err(MapError::Unsupported {
                    element: child.tag_name().name().to_string(),
                })
            }
            _ => {}
        }
    }
    map.validate()?;
    Ok(map)
}

fn attr_f64(node: Node, name: &str) -> Result<f64, MapError> {
    let raw = node.attribute(name).ok_or_else(|| {
        MapError::Invalid(format!(
            "<{}> is missing attribute '{name}'",
            node.tag_name().name()
        ))
    })?;
    raw.trim().parse::<f64>().map_err(|_| {
        MapError::Invalid(format!(
            "<{}> attribute '{name}' is not a number: {raw:?}",
            node.tag_name().name()
        ))
    })
}

fn attr_f64_or(node: Node, name: &str, default: f64) -> Result<f64, MapError> {
    if node.attribute(name).is_some() {
        attr_f64(node, name)
    } else {
        Ok(default)
    }
}

fn attr_u32(node: Node, name: &str) -> Result<u32, MapError> {
    let raw = node.attribute(name).unwrap_or_default();
    raw.trim().parse::<u32>().map_err(|_| {
        MapError::Invalid(format!(
            "<{}> attribute '{name}' must be a non-negative integer, got {raw:?}",
            node.tag_name().name()
        ))
    })
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children()
        .find(|c| c.is_element() && c.tag_name().name() == name)
}

fn elements<'a, 'i>(node: Node<'a, 'i>, name: &'a str) -> impl Iterator<Item = Node<'a, 'i>> + 'a {
    node.children()
        .filter(move |c| c.is_element() && c.tag_name().name() == name)
}

fn parse_road(road: Node) -> Result<(RoadSegment, Vec<Crosswalk>), MapError> {
    let id = attr_u32(road, "id")?;
    let plan = child(road, "planView")
        .ok_or_else(|| MapError::Invalid(format!("road {id} has no <planView>")))?;

    let mut centerline: Vec<Vec2> = Vec::new();
    for geometry in elements(plan, "geometry") {
        let kind = geometry
            .children()
            .find(Node::is_element)
            .ok_or_else(|| MapError::Invalid(format!("road {id} has an empty <geometry>")))?;
        if kind.tag_name().name() != "line" {
            return Err(MapError::Unsupported {
                element: kind.tag_name().name().to_string(),
            });
        }
        let x = attr_f64(geometry, "x")?;
        let y = attr_f64(geometry, "y")?;
        let hdg = attr_f64(geometry, "hdg")?;
        let length = attr_f64(geometry, "length")?;
        if !(length > 0.0) {
            return Err(MapError::Invalid(format!(
                "road {id} has a line geometry with non-positive length"
            )));
        }
        let start = Vec2::new(x, y);
        let end = start + Vec2::new(hdg.cos(), hdg.sin()) * length;
        if centerline.last() != Some(&start) {
            centerline.push(start);
        }
        centerline.push(end);
    }
    if centerline.len() < 2 {
        return Err(MapError::Invalid(format!("road {id} has no line geometry")));
    }

    let (lane_width, lanes_forward, lanes_backward) = parse_lanes(road, id)?;
    let speed_limit = parse_speed(road)?;

    let segment = RoadSegment {
        id,
        centerline,
        lane_width,
        lanes_forward,
        lanes_backward,
        speed_limit,
    };

    let mut crosswalks = Vec::new();
    if let Some(objects) = child(road, "objects") {
        for object in elements(objects, "object") {
            if object.attribute("type") == Some("crosswalk") {
                crosswalks.push(parse_crosswalk(object, &segment)?);
            }
        }
    }
    Ok((segment, crosswalks))
}

/// Returns (lane width, driving lanes on the right, driving lanes on the left).
fn parse_lanes(road: Node, id: u32) -> Result<(f64, u32, u32), MapError> {
    let section = child(road, "lanes")
        .and_then(|l| child(l, "laneSection"))
        .ok_or_else(|| MapError::Invalid(format!("road {id} has no <laneSection>")))?;
    let mut width = None;
    let mut count_side = |side: &str| -> Result<u32, MapError> {
        let Some(group) = child(section, side) else {
            return Ok(0);
        };
        let mut n = 0;
        for lane in elements(group, "lane") {
            if lane.attribute("type") != Some("driving") {
                continue;
            }
            let w = child(lane, "width").ok_or_else(|| {
                MapError::Invalid(format!("road {id} driving lane without <width>"))
            })?;
            for coeff in ["b", "c", "d"] {
                if attr_f64_or(w, coeff, 0.0)? != 0.0 {
                    return Err(MapError::Unsupported {
                        element: "width (non-constant)".to_string(),
                    });
                }
            }
            let a = attr_f64(w, "a")?;
            width.get_or_insert(a);
            n += 1;
        }
        Ok(n)
    };
    let forward = count_side("right")?;
    let backward = count_side("left")?;
    let width =
        width.ok_or_else(|| MapError::Invalid(format!("road {id} has no driving lanes")))?;
    Ok((width, forward, backward))
}

fn parse_speed(road: Node) -> Result<f64, MapError> {
    let Some(speed) = child(road, "type").and_then(|t| child(t, "speed")) else {
        return Ok(DEFAULT_SPEED_LIMIT);
    };
    let max = attr_f64(speed, "max")?;
    let factor = match speed.attribute("unit").unwrap_or("m/s") {
        "m/s" => 1.0,
        "km/h" => 1.0 / 3.6,
        "mph" => 0.44704,
        other => {
            return Err(MapError::Invalid(format!("unknown speed unit {other:?}")));
        }
    };
    Ok(max * factor)
}

/// Road reference-line frame at arc length `s`: point and left normal.
fn road_frame(seg: &RoadSegment, s: f64) -> (Vec2, Vec2, Vec2) {
    let (p, tangent) = geom::point_at(&seg.centerline, s).unwrap_or((Vec2::zeros(), Vec2::x()));
    let left = Vec2::new(-tangent.y, tangent.x);
    (p, tangent, left)
}

fn parse_crosswalk(object: Node, seg: &RoadSegment) -> Result<Crosswalk, MapError> {
    let id = attr_u32(object, "id")?;
    let s = attr_f64(object, "s")?;
    let t = attr_f64_or(object, "t", 0.0)?;
    let hdg = attr_f64_or(object, "hdg", 0.0)?;
    let (p, tangent, left) = road_frame(seg, s);
    let origin = p + left * t;
    let base = tangent.y.atan2(tangent.x) + hdg;
    let (u_axis, v_axis) = (
        Vec2::new(base.cos(), base.sin()),
        Vec2::new(-base.sin(), base.cos()),
    );

    let mut polygon = Vec::new();
    if let Some(outline) = child(object, "outline") {
        for corner in outline.children().filter(Node::is_element) {
            match corner.tag_name().name() {
                "cornerLocal" => {
                    let u = attr_f64(corner, "u")?;
                    let v = attr_f64(corner, "v")?;
                    polygon.push(origin + u_axis * u + v_axis * v);
                }
                "cornerRoad" => {
                    let cs = attr_f64(corner, "s")?;
                    let ct = attr_f64(corner, "t")?;
                    let (cp, _, cl) = road_frame(seg, cs);
                    polygon.push(cp + cl * ct);
                }
                other => {
                    return Err(MapError::Unsupported {
                        element: other.to_string(),
                    })
                }
            }
        }
    } else {
        let length = attr_f64(object, "length")?;
        let width = attr_f64(object, "width")?;
        let (hl, hw) = (length * 0.5, width * 0.5);
        for (u, v) in [(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)] {
            polygon.push(origin + u_axis * u + v_axis * v);
        }
    }
    if geom::polygon_signed_area(&polygon) < 0.0 {
        polygon.reverse();
    }

    // Extent of the crossing along the road.
    let (s_min, s_max) = polygon
        .iter()
        .filter_map(|v| geom::project_onto(&seg.centerline, *v).map(|(s, _)| s))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s), hi.max(s))
        });

    let mut stop_lines = Vec::new();
    if seg.lanes_forward > 0 {
        let (sp, _, sl) = road_frame(seg, s_min - STOP_LINE_SETBACK);
        let w = seg.lane_width * f64::from(seg.lanes_forward);
        stop_lines.push(StopLine {
            approach: Approach::Forward,
            a: sp - sl * w,
            b: sp,
        });
    }
    if seg.lanes_backward > 0 {
        let (sp, _, sl) = road_frame(seg, s_max + STOP_LINE_SETBACK);
        let w = seg.lane_width * f64::from(seg.lanes_backward);
        stop_lines.push(StopLine {
            approach: Approach::Backward,
            a: sp,
            b: sp + sl * w,
        });
    }

    Ok(Crosswalk {
        id,
        segment: seg.id,
        polygon,
        stop_lines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn road_xml(geometries: &str, extra: &str) -> String {
        format!(
            r#"<?xml version="1.0"?>
<OpenDRIVE>
  <header revMajor="1" revMinor="6"/>
  <road id="7" length="100" junction="-1">
    <type s="0" type="town"><speed max="36" unit="km/h"/></type>
    <planView>{geometries}</planView>
    <lanes><laneSection s="0">
      <left><lane id="1" type="driving"><width sOffset="0" a="3.5" b="0" c="0" d="0"/></lane></left>
      <center><lane id="0" type="none"/></center>
      <right><lane id="-1" type="driving"><width sOffset="0" a="3.5" b="0" c="0" d="0"/></lane>
             <lane id="-2" type="sidewalk"><width sOffset="0" a="2" b="0" c="0" d="0"/></lane></right>
    </laneSection></lanes>
    {extra}
  </road>
</OpenDRIVE>"#
        )
    }

    fn line(x: f64, y: f64, hdg: f64, len: f64) -> String {
        format!(r#"<geometry s="0" x="{x}" y="{y}" hdg="{hdg}" length="{len}"><line/></geometry>"#)
    }

    #[test]
    fn single_line_heading_zero() {
        let map = parse_opendrive_subset(&road_xml(&line(0.0, 0.0, 0.0, 100.0), "")).unwrap();
        let seg = &map.segments[0];
        assert_eq!(seg.id, 7);
        assert_eq!(seg.centerline, vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)]);
        assert_eq!((seg.lanes_forward, seg.lanes_backward), (1, 1));
        assert_eq!(seg.lane_width, 3.5);
        assert!((seg.speed_limit - 10.0).abs() < 1e-12);
    }

    #[test]
    fn single_line_heading_quarter_turn() {
        let map =
            parse_opendrive_subset(&road_xml(&line(0.0, 0.0, FRAC_PI_2, 100.0), "")).unwrap();
        let end = map.segments[0].centerline[1];
        assert!(end.x.abs() < 1e-9 && (end.y - 100.0).abs() < 1e-9);
    }

    #[test]
    fn chained_lines_sum_lengths() {
        let hdg = 0.3_f64;
        let g = format!(
            "{}{}",
            line(0.0, 0.0, hdg, 40.0),
            line(40.0 * hdg.cos(), 40.0 * hdg.sin(), 1.0, 60.0)
        );
        let map = parse_opendrive_subset(&road_xml(&g, "")).unwrap();
        let pts = &map.segments[0].centerline;
        assert_eq!(pts.len(), 3);
        // oracle: sum of per-piece euclidean lengths
        let oracle: f64 = pts
            .windows(2)
            .map(|w| ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt())
            .sum();
        assert!((oracle - 100.0).abs() < 1e-9);
        assert!((map.segments[0].length() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn arcs_and_spirals_rejected_by_name() {
        for kind in ["arc curvature=\"0.01\"", "spiral curvStart=\"0\" curvEnd=\"0.1\""] {
            let g = format!(
                r#"<geometry s="0" x="0" y="0" hdg="0" length="10"><{kind}/></geometry>"#
            );
            let err = parse_opendrive_subset(&road_xml(&g, "")).unwrap_err();
            let name = kind.split_whitespace().next().unwrap();
            assert!(
                matches!(&err, MapError::Unsupported { element } if element == name),
                "{err}"
            );
            assert!(err.to_string().contains(name));
        }
    }

    #[test]
    fn malformed_xml_is_syntax_error() {
        let err = parse_opendrive_subset("<OpenDRIVE><road id=\"1\">\n</OpenDRIVE>").unwrap_err();
        assert!(matches!(err, MapError::Syntax { line: 2, .. }), "{err}");
    }

    #[test]
    fn crosswalk_object_with_derived_stop_lines() {
        let objects = r#"<objects>
            <object type="crosswalk" id="3" s="50" t="0" hdg="0" length="4" width="8"/>
        </objects>"#;
        let map =
            parse_opendrive_subset(&road_xml(&line(0.0, 0.0, 0.0, 100.0), objects)).unwrap();
        let cw = &map.crosswalks[0];
        assert_eq!(cw.segment, 7);
        assert!(cw.contains(Vec2::new(50.0, 0.0)));
        assert_eq!(cw.stop_lines.len(), 2);
        let route = [Vec2::new(0.0, -1.75), Vec2::new(100.0, -1.75)];
        let d = crate::map::stop_distance_along_route(&route, cw).unwrap();
        assert!((d - (48.0 - STOP_LINE_SETBACK)).abs() < 1e-9);
    }
}
