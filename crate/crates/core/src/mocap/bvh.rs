//! BVH (Biovision Hierarchy) reader and writer.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec3;

/// File units per meter assumed when a file does not say otherwise (centimeters).
pub const DEFAULT_UNIT_SCALE: f64 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum BvhError {
    #[error("line {line}: unknown keyword {keyword:?}")]
    UnknownKeyword { line: usize, keyword: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("frame row {row} (line {line}) has {found} values, expected {expected}")]
    CountMismatch {
        row: usize,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("declared {declared} frames but {found} rows are present")]
    FrameCount { declared: usize, found: usize },
    #[error("hierarchy must have exactly one root")]
    RootCount,
    #[error("frame {frame} out of range (clip has {frames} frames)")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("motion has no frames")]
    EmptyMotion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Xposition" => Channel::Xposition,
            "Yposition" => Channel::Yposition,
            "Zposition" => Channel::Zposition,
            "Xrotation" => Channel::Xrotation,
            "Yrotation" => Channel::Yrotation,
            "Zrotation" => Channel::Zrotation,
            _ => return None,
        })
    }

    /// Axis index 0..3.
    pub fn axis(self) -> usize {
        match self {
            Channel::Xposition | Channel::Xrotation => 0,
            Channel::Yposition | Channel::Yrotation => 1,
            Channel::Zposition | Channel::Zrotation => 2,
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(
            self,
            Channel::Xrotation | Channel::Yrotation | Channel::Zrotation
        )
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvhJoint {
    pub name: String,
    pub parent: Option<usize>,
    /// Offset from the parent joint, in file units.
    pub offset: Vec3,
    pub channels: Vec<Channel>,
    /// `End Site` offset, if the joint is a leaf with one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_site: Option<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvhClip {
    /// Joints in depth-first declaration order; parents precede children.
    pub joints: Vec<BvhJoint>,
    /// One row of `channel_count()` values per frame.
    pub frames: Vec<Vec<f64>>,
    pub frame_time: f64,
    pub unit_scale: f64,
}

impl BvhClip {
    pub fn channel_count(&self) -> usize {
        channel_count(&self.joints)
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.frame_time
    }

    pub fn duration(&self) -> f64 {
        self.frame_time * self.frames.len() as f64
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn joint_names(&self) -> Vec<String> {
        self.joints.iter().map(|j| j.name.clone()).collect()
    }

    pub fn with_unit_scale(mut self, unit_scale: f64) -> Self {
        self.unit_scale = unit_scale;
        self
    }
}

pub fn channel_count(joints: &[BvhJoint]) -> usize {
    joints.iter().map(|j| j.channels.len()).sum()
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(lines: &[(usize, &'a str)]) -> Self {
        let mut items = Vec::new();
        for (n, line) in lines {
            for tok in line.split_whitespace() {
                // split braces glued to names, e.g. "Hips{"
                let mut rest = tok;
                while !rest.is_empty() {
                    if let Some(i) = rest.find(['{', '}']) {
                        if i > 0 {
                            items.push((*n, &rest[..i]));
                        }
                        items.push((*n, &rest[i..i + 1]));
                        rest = &rest[i + 1..];
                    } else {
                        items.push((*n, rest));
                        break;
                    }
                }
            }
        }
        let last_line = lines.last().map_or(1, |l| l.0);
        Self {
            items,
            pos: 0,
            last_line,
        }
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        self.items.get(self.pos).copied()
    }

    fn next(&mut self) -> Result<(usize, &'a str), BvhError> {
        let t = self.peek().ok_or(BvhError::Syntax {
            line: self.last_line,
            message: "unexpected end of hierarchy".into(),
        })?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, want: &str) -> Result<usize, BvhError> {
        let (line, tok) = self.next()?;
        if tok != want {
            return Err(BvhError::Syntax {
                line,
                message: format!("expected {want:?}, found {tok:?}"),
            });
        }
        Ok(line)
    }

    fn number(&mut self) -> Result<f64, BvhError> {
        let (line, tok) = self.next()?;
        tok.parse::<f64>().map_err(|_| BvhError::Syntax {
            line,
            message: format!("expected a number, found {tok:?}"),
        })
    }

    fn vec3(&mut self) -> Result<Vec3, BvhError> {
        Ok(Vec3::new(self.number()?, self.number()?, self.number()?))
    }
}

fn parse_joint_body(
    toks: &mut Tokens,
    joints: &mut Vec<BvhJoint>,
    name: String,
    parent: Option<usize>,
) -> Result<(), BvhError> {
    toks.expect("{")?;
    let index = joints.len();
    joints.push(BvhJoint {
        name,
        parent,
        offset: Vec3::zeros(),
        channels: Vec::new(),
        end_site: None,
    });
    loop {
        let (line, tok) = toks.next()?;
        match tok {
            "OFFSET" => joints[index].offset = toks.vec3()?,
            "CHANNELS" => {
                let n = toks.number()?;
                if n < 0.0 || n.fract() != 0.0 {
                    return Err(BvhError::Syntax {
                        line,
                        message: "channel count must be a non-negative integer".into(),
                    });
                }
                let mut channels = Vec::with_capacity(n as usize);
                for _ in 0..n as usize {
                    let (cl, name) = toks.next()?;
                    channels.push(Channel::parse(name).ok_or_else(|| BvhError::UnknownKeyword {
                        line: cl,
                        keyword: name.to_string(),
                    })?);
                }
                joints[index].channels = channels;
            }
            "JOINT" => {
                let (_, child) = toks.next()?;
                parse_joint_body(toks, joints, child.to_string(), Some(index))?;
            }
            "End" => {
                toks.expect("Site")?;
                toks.expect("{")?;
                toks.expect("OFFSET")?;
                joints[index].end_site = Some(toks.vec3()?);
                toks.expect("}")?;
            }
            "}" => return Ok(()),
            "ROOT" => return Err(BvhError::RootCount),
            other => {
                return Err(BvhError::UnknownKeyword {
                    line,
                    keyword: other.to_string(),
                })
            }
        }
    }
}

/// Parses a BVH document. Offsets and position channels stay in file units;
/// `unit_scale` is set to [`DEFAULT_UNIT_SCALE`].
pub fn parse_bvh(text: &str) -> Result<BvhClip, BvhError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();

    let motion_at = lines
        .iter()
        .position(|(_, l)| *l == "MOTION")
        .ok_or(BvhError::Syntax {
            line: lines.last().map_or(1, |l| l.0),
            message: "missing MOTION section".into(),
        })?;

    match lines.first() {
        Some((_, "HIERARCHY")) => {}
        Some((line, other)) => {
            return Err(BvhError::UnknownKeyword {
                line: *line,
                keyword: other.to_string(),
            })
        }
        None => {
            return Err(BvhError::Syntax {
                line: 1,
                message: "empty document".into(),
            })
        }
    }

    let mut toks = Tokens::new(&lines[1..motion_at]);
    let mut joints = Vec::new();
    while let Some((line, tok)) = toks.peek() {
        toks.pos += 1;
        match tok {
            "ROOT" => {
                if !joints.is_empty() {
                    return Err(BvhError::RootCount);
                }
                let (_, name) = toks.next()?;
                parse_joint_body(&mut toks, &mut joints, name.to_string(), None)?;
            }
            other => {
                return Err(BvhError::UnknownKeyword {
                    line,
                    keyword: other.to_string(),
                })
            }
        }
    }
    if joints.is_empty() {
        return Err(BvhError::RootCount);
    }

    let motion = &lines[motion_at + 1..];
    let header_value = |idx: usize, key: &str| -> Result<&str, BvhError> {
        let (line, text) = motion.get(idx).copied().ok_or(BvhError::Syntax {
            line: lines[motion_at].0,
            message: format!("missing {key:?}"),
        })?;
        text.strip_prefix(key)
            .map(str::trim)
            .ok_or_else(|| BvhError::UnknownKeyword {
                line,
                keyword: text.split(':').next().unwrap_or(text).to_string(),
            })
    };
    let frames_raw = header_value(0, "Frames:")?;
    let declared: usize = frames_raw.parse().map_err(|_| BvhError::Syntax {
        line: motion[0].0,
        message: format!("bad frame count {frames_raw:?}"),
    })?;
    let ft_raw = header_value(1, "Frame Time:")?;
    let frame_time: f64 = ft_raw.parse().map_err(|_| BvhError::Syntax {
        line: motion[1].0,
        message: format!("bad frame time {ft_raw:?}"),
    })?;
    if !(frame_time > 0.0) {
        return Err(BvhError::Syntax {
            line: motion[1].0,
            message: "frame time must be positive".into(),
        });
    }

    let expected = channel_count(&joints);
    let mut frames = Vec::with_capacity(declared);
    for (row, (line, text)) in motion[2..].iter().enumerate() {
        let values = text
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>().map_err(|_| BvhError::Syntax {
                    line: *line,
                    message: format!("frame row {row}: bad value {v:?}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != expected {
            return Err(BvhError::CountMismatch {
                row,
                line: *line,
                expected,
                found: values.len(),
            });
        }
        frames.push(values);
    }
    if frames.len() != declared {
        return Err(BvhError::FrameCount {
            declared,
            found: frames.len(),
        });
    }

    Ok(BvhClip {
        joints,
        frames,
        frame_time,
        unit_scale: DEFAULT_UNIT_SCALE,
    })
}

fn write_joint(out: &mut String, joints: &[BvhJoint], index: usize, depth: usize) {
    let pad = "\t".repeat(depth);
    let j = &joints[index];
    let kw = if j.parent.is_none() { "ROOT" } else { "JOINT" };
    let _ = writeln!(out, "{pad}{kw} {}", j.name);
    let _ = writeln!(out, "{pad}{{");
    let _ = writeln!(
        out,
        "{pad}\tOFFSET {:.6} {:.6} {:.6}",
        j.offset.x, j.offset.y, j.offset.z
    );
    if !j.channels.is_empty() || j.parent.is_none() {
        let names: Vec<String> = j.channels.iter().map(Channel::to_string).collect();
        let _ = writeln!(out, "{pad}\tCHANNELS {} {}", j.channels.len(), names.join(" "));
    }
    for child in (index + 1..joints.len()).filter(|&c| joints[c].parent == Some(index)) {
        write_joint(out, joints, child, depth + 1);
    }
    if let Some(end) = j.end_site {
        let _ = writeln!(out, "{pad}\tEnd Site");
        let _ = writeln!(out, "{pad}\t{{");
        let _ = writeln!(out, "{pad}\t\tOFFSET {:.6} {:.6} {:.6}", end.x, end.y, end.z);
        let _ = writeln!(out, "{pad}\t}}");
    }
    let _ = writeln!(out, "{pad}}}");
}

/// Writes a hierarchy and channel rows as BVH text.
pub fn export_bvh(joints: &[BvhJoint], rows: &[Vec<f64>], frame_time: f64) -> Result<String, BvhError> {
    if rows.is_empty() {
        return Err(BvhError::EmptyMotion);
    }
    let roots = joints.iter().filter(|j| j.parent.is_none()).count();
    if roots != 1 || joints[0].parent.is_some() {
        return Err(BvhError::RootCount);
    }
    let expected = channel_count(joints);
    for (row, values) in rows.iter().enumerate() {
        if values.len() != expected {
            return Err(BvhError::CountMismatch {
                row,
                line: 0,
                expected,
                found: values.len(),
            });
        }
    }

    let mut out = String::from("HIERARCHY\n");
    write_joint(&mut out, joints, 0, 0);
    out.push_str("MOTION\n");
    let _ = writeln!(out, "Frames: {}", rows.len());
    let _ = writeln!(out, "Frame Time: {frame_time}");
    for values in rows {
        let line: Vec<String> = values.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn export_clip(clip: &BvhClip) -> Result<String, BvhError> {
    export_bvh(&clip.joints, &clip.frames, clip.frame_time)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_ROOT: &str = "HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  End Site
  {
    OFFSET 0 10 0
  }
}
MOTION
Frames: 1
Frame Time: 0.05
0 0 0 0 0 0
";

    #[test]
    fn minimal_root() {
        let clip = parse_bvh(ONE_ROOT).unwrap();
        assert_eq!(clip.frame_count(), 1);
        assert_eq!(clip.channel_count(), 6);
        assert_eq!(clip.frame_time, 0.05);
        assert_eq!(clip.joints[0].end_site, Some(Vec3::new(0.0, 10.0, 0.0)));
        assert_eq!(
            clip.joints[0].channels,
            vec![
                Channel::Xposition,
                Channel::Yposition,
                Channel::Zposition,
                Channel::Zrotation,
                Channel::Xrotation,
                Channel::Yrotation
            ]
        );
    }

    #[test]
    fn sixty_hz_frame_time() {
        let text = ONE_ROOT.replace("Frame Time: 0.05", "Frame Time: 0.0166667");
        let clip = parse_bvh(&text).unwrap();
        assert_eq!(clip.sample_rate().round(), 60.0);
    }

    #[test]
    fn short_row_names_the_row() {
        let text = ONE_ROOT.replace("0 0 0 0 0 0", "0 0 0 0 0");
        assert_eq!(
            parse_bvh(&text).unwrap_err(),
            BvhError::CountMismatch {
                row: 0,
                line: 14,
                expected: 6,
                found: 5
            }
        );
    }

    #[test]
    fn declared_frames_must_match_rows() {
        let text = ONE_ROOT.replace("Frames: 1", "Frames: 2");
        assert_eq!(
            parse_bvh(&text).unwrap_err(),
            BvhError::FrameCount {
                declared: 2,
                found: 1
            }
        );
    }

    #[test]
    fn unknown_keyword() {
        let text = ONE_ROOT.replace("OFFSET 0 0 0", "OFSET 0 0 0");
        assert!(matches!(
            parse_bvh(&text),
            Err(BvhError::UnknownKeyword { line: 4, .. })
        ));
    }

    #[test]
    fn second_root_rejected() {
        let text = ONE_ROOT.replace("MOTION", "ROOT Other\n{\nOFFSET 0 0 0\n}\nMOTION");
        assert_eq!(parse_bvh(&text).unwrap_err(), BvhError::RootCount);
    }

    #[test]
    fn export_identity_frame() {
        let clip = parse_bvh(ONE_ROOT).unwrap();
        let text = export_clip(&clip).unwrap();
        let last = text.lines().last().unwrap();
        assert!(last.split_whitespace().all(|v| v == "0.000000"), "{last}");
        assert_eq!(parse_bvh(&text).unwrap(), clip);
    }

    #[test]
    fn export_requires_frames() {
        let clip = parse_bvh(ONE_ROOT).unwrap();
        assert_eq!(
            export_bvh(&clip.joints, &[], 0.05).unwrap_err(),
            BvhError::EmptyMotion
        );
    }
}
