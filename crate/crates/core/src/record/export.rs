//! Sensor dataset export from a recorded log.
//!
//! Output per frame and sensor, named `{sensor}_{frame:06}.{ext}`:
//! LiDAR as ASCII PLY (`x y z label actor_id`, sensor frame), camera depth
//! as 16-bit binary PGM in millimeters, camera rgb and segmentation as
//! binary PPM.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::RecordLog;
use crate::par::{self, Execution};
use crate::sensor::{
    lidar_scan, render_camera, scene_from_snapshot, CameraConfig, CameraFrame, LidarConfig, PointCloud, SensorError,
};
use crate::world::{ActorId, WorldSnapshot};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write to {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] SensorError),
    #[error("sensor suite: {0}")]
    Suite(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedLidar {
    pub name: String,
    #[serde(flatten)]
    pub config: LidarConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCamera {
    pub name: String,
    #[serde(flatten)]
    pub config: CameraConfig,
}

/// Sensors mounted on one actor (`ego`), or fixed in the world when `ego`
/// is absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSuite {
    pub ego: Option<ActorId>,
    pub lidars: Vec<NamedLidar>,
    pub cameras: Vec<NamedCamera>,
}

impl SensorSuite {
    pub fn validate(&self) -> Result<(), ExportError> {
        let mut names = std::collections::BTreeSet::new();
        for name in self.lidars.iter().map(|l| &l.name).chain(self.cameras.iter().map(|c| &c.name)) {
            let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok {
                return Err(ExportError::Suite(format!("bad sensor name {name:?}")));
            }
            if !names.insert(name.clone()) {
                return Err(ExportError::Suite(format!("duplicate sensor name {name:?}")));
            }
        }
        for l in &self.lidars {
            l.config.validate()?;
        }
        for c in &self.cameras {
            c.config.validate()?;
        }
        Ok(())
    }

    /// World pose of a sensor mounted at `mount`, or `None` when the ego
    /// actor is absent from the frame.
    pub fn sensor_pose(&self, snapshot: &WorldSnapshot, mount: &crate::geom::Transform) -> Option<Isometry3<f64>> {
        match self.ego {
            None => Some(mount.isometry()),
            Some(id) => {
                let base = if let Some(v) = snapshot.vehicle(id) {
                    v.transform
                } else {
                    snapshot.walker(id)?.transform
                };
                Some(base.isometry() * mount.isometry())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedFile {
    pub file: String,
    pub sensor: String,
    pub frame: u64,
    /// Point count for LiDAR files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ExportedFile>,
}

pub fn ply_bytes(cloud: &PointCloud, frame: u64) -> Vec<u8> {
    let mut s = String::with_capacity(64 * cloud.len() + 256);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "comment frame {frame}");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str(
        "property float x\nproperty float y\nproperty float z\nproperty uchar label\nproperty uint actor_id\nend_header\n",
    );
    for p in &cloud.points {
        let _ = writeln!(
            s,
            "{:.6} {:.6} {:.6} {} {}",
            p.position.x,
            p.position.y,
            p.position.z,
            p.label.as_byte(),
            p.actor.map_or(0, |a| a.0)
        );
    }
    s.into_bytes()
}

/// Depth in millimeters, rounded and clamped to 16 bits.
pub fn depth_mm(d: f64) -> u16 {
    (d * 1000.0).round().clamp(0.0, 65535.0) as u16
}

pub fn depth_pgm_bytes(frame: &CameraFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", frame.width, frame.height).into_bytes();
    for d in &frame.depth {
        out.extend_from_slice(&depth_mm(*d).to_be_bytes());
    }
    out
}

pub fn rgb_ppm_bytes(frame: &CameraFrame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend(frame.rgb.iter().flatten());
    out
}

pub fn segmentation_ppm_bytes(frame: &CameraFrame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend(frame.labels.iter().flat_map(|l| l.color()));
    out
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), ExportError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| ExportError::Io { path, source })
}

fn export_one(
    log: &RecordLog,
    snapshot: &WorldSnapshot,
    suite: &SensorSuite,
    dir: &Path,
) -> Result<Vec<ExportedFile>, ExportError> {
    let scene = scene_from_snapshot(snapshot, Some(&log.header.rig), suite.ego);
    let frame = snapshot.frame;
    let mut files = Vec::new();
    for l in &suite.lidars {
        let Some(pose) = suite.sensor_pose(snapshot, &l.config.mount) else {
            continue;
        };
        let cloud = lidar_scan(&l.config, &pose, &scene, Execution::Sequential);
        let file = format!("{}_{frame:06}.ply", l.name);
        write(dir, &file, &ply_bytes(&cloud, frame))?;
        files.push(ExportedFile {
            file,
            sensor: l.name.clone(),
            frame,
            points: Some(cloud.len()),
        });
    }
    for c in &suite.cameras {
        let Some(pose) = suite.sensor_pose(snapshot, &c.config.mount) else {
            continue;
        };
        let image = render_camera(&c.config, &pose, &scene, Execution::Sequential);
        let planes: [(&str, &str, Vec<u8>); 3] = [
            ("rgb", "ppm", rgb_ppm_bytes(&image)),
            ("depth", "pgm", depth_pgm_bytes(&image)),
            ("seg", "ppm", segmentation_ppm_bytes(&image)),
        ];
        for (plane, ext, bytes) in planes {
            let sensor = format!("{}_{plane}", c.name);
            let file = format!("{sensor}_{frame:06}.{ext}");
            write(dir, &file, &bytes)?;
            files.push(ExportedFile {
                file,
                sensor,
                frame,
                points: None,
            });
        }
    }
    Ok(files)
}

/// Rebuilds each recorded frame's sensing scene and writes every sensor's
/// output into `out_dir`, plus `manifest.json`. Frames are processed in
/// parallel; file contents never depend on the execution policy.
pub fn export_frames(log: &RecordLog, suite: &SensorSuite, out_dir: &Path, exec: Execution) -> Result<Manifest, ExportError> {
    suite.validate()?;
    fs::create_dir_all(out_dir).map_err(|source| ExportError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let per_frame = par::map_slice(exec, &log.frames, |snap| export_one(log, snap, suite, out_dir));
    let mut manifest = Manifest::default();
    for files in per_frame {
        manifest.files.extend(files?);
    }
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write(out_dir, "manifest.json", &json)?;
    Ok(manifest)
}
