//! Per-tick recording as JSON Lines: one header line, then one snapshot per
//! line. Replay returns the stored snapshots verbatim.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mocap::AvatarRig;
use crate::world::WorldSnapshot;

pub mod export;

pub use export::{export_frames, ExportError, ExportedFile, Manifest, SensorSuite};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub format_version: u32,
    /// Map source the run used, as given to the scenario.
    pub map: String,
    pub dt: f64,
    pub seed: u64,
    /// Avatar joint names; every recorded pose has exactly this many joints.
    pub joints: Vec<String>,
    /// Collision rig over those joints, used to rebuild sensing scenes.
    #[serde(default)]
    pub rig: AvatarRig,
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("frame {got} recorded out of order (expected {expected})")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("walker {walker} in frame {frame} has {got} joints, header lists {expected}")]
    JointCount {
        frame: u64,
        walker: u64,
        expected: usize,
        got: usize,
    },
    #[error("log truncated at line {line}; last complete frame: {}", last_good.map_or("none".to_string(), |f| f.to_string()))]
    Truncated { line: usize, last_good: Option<u64> },
    #[error("log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("unsupported log format version {0}")]
    Version(u32),
    #[error("log has no header")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordLog {
    pub header: RecordHeader,
    pub frames: Vec<WorldSnapshot>,
}

fn check_snapshot(header: &RecordHeader, next: u64, snap: &WorldSnapshot) -> Result<(), RecordError> {
    if snap.frame != next {
        return Err(RecordError::OutOfOrder {
            expected: next,
            got: snap.frame,
        });
    }
    for w in &snap.walkers {
        if let Some(pose) = &w.pose {
            if pose.len() != header.joints.len() {
                return Err(RecordError::JointCount {
                    frame: snap.frame,
                    walker: w.id.0,
                    expected: header.joints.len(),
                    got: pose.len(),
                });
            }
        }
    }
    Ok(())
}

impl RecordLog {
    pub fn new(header: RecordHeader) -> Self {
        Self {
            header,
            frames: Vec::new(),
        }
    }

    fn next_frame(&self) -> u64 {
        self.frames.last().map_or(0, |f| f.frame + 1)
    }

    /// Appends a snapshot; frames must be contiguous from 0.
    pub fn record_tick(&mut self, snapshot: WorldSnapshot) -> Result<(), RecordError> {
        check_snapshot(&self.header, self.next_frame(), &snapshot)?;
        self.frames.push(snapshot);
        Ok(())
    }

    /// Random access by frame index.
    pub fn frame(&self, k: u64) -> Option<&WorldSnapshot> {
        self.frames.get(usize::try_from(k).ok()?)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn replay(&self) -> impl Iterator<Item = &WorldSnapshot> {
        self.frames.iter()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), RecordError> {
        writeln!(out, "{}", serde_json::to_string(&self.header).expect("header serializes"))?;
        for f in &self.frames {
            writeln!(out, "{}", serde_json::to_string(f).expect("snapshot serializes"))?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory cannot fail");
        out
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self, RecordError> {
        let mut lines = reader.split(b'\n').enumerate().peekable();
        let (_, first) = lines.next().ok_or(RecordError::MissingHeader)?;
        let first = first?;
        let header: RecordHeader = serde_json::from_slice(&first).map_err(|e| RecordError::Corrupt {
            line: 1,
            message: format!("bad header: {e}"),
        })?;
        if header.format_version != FORMAT_VERSION {
            return Err(RecordError::Version(header.format_version));
        }
        let mut log = RecordLog::new(header);
        while let Some((idx, line)) = lines.next() {
            let line = line?;
            let number = idx + 1;
            let is_last = lines.peek().is_none();
            if line.is_empty() && is_last {
                break;
            }
            let snapshot: WorldSnapshot = match serde_json::from_slice(&line) {
                Ok(s) => s,
                Err(e) if is_last => {
                    // a cut inside a token may surface as a syntax error rather than EOF
                    tracing::debug!(%e, "final log line unparseable");
                    return Err(RecordError::Truncated {
                        line: number,
                        last_good: log.frames.last().map(|f| f.frame),
                    });
                }
                Err(e) => {
                    return Err(RecordError::Corrupt {
                        line: number,
                        message: e.to_string(),
                    })
                }
            };
            log.record_tick(snapshot)?;
        }
        Ok(log)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RecordError> {
        Self::read_from(bytes)
    }
}

/// Streams a log to a writer as ticks arrive.
pub struct RecordWriter<W: Write> {
    out: W,
    header: RecordHeader,
    next: u64,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut out: W, header: RecordHeader) -> Result<Self, RecordError> {
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        Ok(Self { out, header, next: 0 })
    }

    pub fn record_tick(&mut self, snapshot: &WorldSnapshot) -> Result<(), RecordError> {
        check_snapshot(&self.header, self.next, snapshot)?;
        writeln!(self.out, "{}", serde_json::to_string(snapshot).expect("snapshot serializes"))?;
        self.next += 1;
        Ok(())
    }

    pub fn into_inner(mut self) -> Result<W, RecordError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> RecordHeader {
        RecordHeader {
            format_version: FORMAT_VERSION,
            map: "inline".into(),
            dt: 0.05,
            seed: 1,
            joints: vec!["Hips".into()],
            rig: AvatarRig::default(),
        }
    }

    fn snap(frame: u64) -> WorldSnapshot {
        WorldSnapshot {
            frame,
            sim_time: frame as f64 * 0.05,
            ..Default::default()
        }
    }

    #[test]
    fn contiguous_frames() {
        let mut log = RecordLog::new(header());
        for k in 0..3 {
            log.record_tick(snap(k)).unwrap();
        }
        let text = String::from_utf8(log.to_bytes()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(matches!(
            log.record_tick(snap(5)),
            Err(RecordError::OutOfOrder { expected: 3, got: 5 })
        ));
        let back = RecordLog::from_bytes(text.as_bytes()).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.frame(1).unwrap().frame, 1);
    }

    #[test]
    fn truncated_names_last_frame() {
        let mut log = RecordLog::new(header());
        for k in 0..3 {
            log.record_tick(snap(k)).unwrap();
        }
        let bytes = log.to_bytes();
        let cut = &bytes[..bytes.len() - 10];
        match RecordLog::from_bytes(cut) {
            Err(RecordError::Truncated { last_good, .. }) => assert_eq!(last_good, Some(1)),
            other => panic!("{other:?}"),
        }
    }
}
