//! Tracker-stream files: one sample per line,
//! `time, headset(x,y,z,yaw,pitch,roll), left(x,y,z,yaw,pitch,roll), right(...)`.
//! A hand's six fields may be left empty (or the trailing groups omitted)
//! when that controller is not tracked. Lines starting with `#` are comments.

use std::fmt::Write as _;

use thiserror::Error;

use super::avatar::TrackerSample;
use crate::geom::{Transform, Vec3};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("tracker line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("tracker line {line}: time {time} goes backwards")]
    NonMonotonic { line: u64, time: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn transform_from(fields: &[&str], line: u64) -> Result<Option<Transform>, TrackerError> {
    if fields.iter().all(|f| f.trim().is_empty()) {
        return Ok(None);
    }
    let mut v = [0.0; 6];
    for (slot, raw) in v.iter_mut().zip(fields) {
        *slot = raw.trim().parse().map_err(|_| TrackerError::Malformed {
            line,
            message: format!("bad number {raw:?}"),
        })?;
    }
    Ok(Some(Transform::new(Vec3::new(v[0], v[1], v[2]), v[3], v[4], v[5])))
}

pub fn parse_tracker_stream(text: &str) -> Result<Vec<TrackerSample>, TrackerError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out: Vec<TrackerSample> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let fields: Vec<&str> = record.iter().collect();
        if !matches!(fields.len(), 7 | 13 | 19) {
            return Err(TrackerError::Malformed {
                line,
                message: format!("expected 7, 13 or 19 fields, found {}", fields.len()),
            });
        }
        let time: f64 = fields[0].parse().map_err(|_| TrackerError::Malformed {
            line,
            message: format!("bad time {:?}", fields[0]),
        })?;
        if out.last().is_some_and(|prev| time < prev.time) {
            return Err(TrackerError::NonMonotonic { line, time });
        }
        let headset = transform_from(&fields[1..7], line)?.ok_or(TrackerError::Malformed {
            line,
            message: "headset transform is required".into(),
        })?;
        let left_hand = match fields.get(7..13) {
            Some(f) => transform_from(f, line)?,
            None => None,
        };
        let right_hand = match fields.get(13..19) {
            Some(f) => transform_from(f, line)?,
            None => None,
        };
        out.push(TrackerSample {
            time,
            headset,
            left_hand,
            right_hand,
        });
    }
    Ok(out)
}

pub fn write_tracker_stream(samples: &[TrackerSample]) -> String {
    fn push(out: &mut String, t: Option<&Transform>) {
        match t {
            Some(t) => {
                let _ = write!(
                    out,
                    ",{},{},{},{},{},{}",
                    t.position.x, t.position.y, t.position.z, t.yaw, t.pitch, t.roll
                );
            }
            None => out.push_str(",,,,,,"),
        }
    }
    let mut out = String::new();
    for s in samples {
        let _ = write!(out, "{}", s.time);
        push(&mut out, Some(&s.headset));
        push(&mut out, s.left_hand.as_ref());
        push(&mut out, s.right_hand.as_ref());
        out.push('\n');
    }
    out
}

/// Latest sample at or before `time`.
pub fn sample_at(samples: &[TrackerSample], time: f64) -> Option<&TrackerSample> {
    let idx = samples.partition_point(|s| s.time <= time);
    idx.checked_sub(1).map(|i| &samples[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_optional_hands() {
        let text = "# t, headset, left, right\n\
                    0.0, 1,2,1.7, 0.1,0,0\n\
                    0.05, 1,2,1.7, 0.1,0,0, 1.2,2.3,1.1,0,0,0, ,,,,,\n";
        let samples = parse_tracker_stream(text).unwrap();
        assert_eq!(samples.len(), 2);
        assert!(samples[0].left_hand.is_none());
        assert_eq!(samples[1].left_hand.unwrap().position, Vec3::new(1.2, 2.3, 1.1));
        assert!(samples[1].right_hand.is_none());
        let again = parse_tracker_stream(&write_tracker_stream(&samples)).unwrap();
        assert_eq!(again, samples);
        assert_eq!(sample_at(&samples, 0.01).unwrap().time, 0.0);
        assert!(sample_at(&samples, -1.0).is_none());
    }

    #[test]
    fn time_must_not_decrease() {
        let text = "1.0,0,0,0,0,0,0\n0.5,0,0,0,0,0,0\n";
        assert!(matches!(
            parse_tracker_stream(text),
            Err(TrackerError::NonMonotonic { line: 2, .. })
        ));
    }

    #[test]
    fn wrong_field_count() {
        assert!(matches!(
            parse_tracker_stream("0,1,2\n"),
            Err(TrackerError::Malformed { line: 1, .. })
        ));
    }
}
