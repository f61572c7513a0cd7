//! Pinhole RGB / depth / segmentation camera.
//!
//! Camera frame: x forward, y left, z up. Pixel (0, 0) is the top-left corner.

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};

use super::{ray_cast, Label, Ray, Scene, SensorError};
use crate::geom::{Transform, Vec3};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
    /// Horizontal field of view, radians.
    pub h_fov: f64,
    /// Depth sentinel for misses; hits beyond it count as misses.
    pub max_range: f64,
    pub mount: Transform,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            h_fov: std::f64::consts::FRAC_PI_2,
            max_range: 100.0,
            mount: Transform::new(Vec3::new(0.5, 0.0, 1.6), 0.0, 0.0, 0.0),
        }
    }
}

/// Direction toward the light, world frame.
pub fn light_direction() -> Vec3 {
    Vec3::new(0.4, 0.3, 0.85).normalize()
}

pub const AMBIENT: f64 = 0.3;

/// Shaded palette color for a surface normal.
pub fn shade(label: Label, normal: &Vec3) -> [u8; 3] {
    let lambert = normal.dot(&light_direction()).max(0.0);
    let k = AMBIENT + (1.0 - AMBIENT) * lambert;
    label.color().map(|c| (c as f64 * k).round().clamp(0.0, 255.0) as u8)
}

impl CameraConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        let bad = |m: &str| Err(SensorError::InvalidConfig(format!("camera: {m}")));
        if self.width == 0 || self.height == 0 {
            return bad("width and height must be at least 1");
        }
        if !(self.h_fov > 0.0 && self.h_fov < std::f64::consts::PI) {
            return bad("h_fov must lie in (0, pi)");
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return bad("max_range must be positive");
        }
        Ok(())
    }

    pub fn focal_px(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.h_fov).tan()
    }

    /// Unit direction through the center of pixel (u, v), camera frame.
    pub fn pixel_direction(&self, u: u32, v: u32) -> Vec3 {
        let f = self.focal_px();
        let x = u as f64 + 0.5 - 0.5 * self.width as f64;
        let y = v as f64 + 0.5 - 0.5 * self.height as f64;
        Vec3::new(1.0, -x / f, -y / f).normalize()
    }

    /// World ray through pixel (u, v) for a camera at `pose` (camera to world).
    pub fn pixel_ray(&self, pose: &Isometry3<f64>, u: u32, v: u32) -> Ray {
        Ray {
            origin: pose.translation.vector,
            dir: pose.rotation * self.pixel_direction(u, v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFrame {
    pub width: u32,
    pub height: u32,
    /// Row-major.
    pub rgb: Vec<[u8; 3]>,
    /// Euclidean ray depth in meters, `max_range` for misses.
    pub depth: Vec<f64>,
    pub labels: Vec<Label>,
}

impl CameraFrame {
    pub fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.width as usize + u as usize
    }
}

pub fn render_camera(config: &CameraConfig, pose: &Isometry3<f64>, scene: &Scene, exec: Execution) -> CameraFrame {
    let w = config.width;
    let n = w as usize * config.height as usize;
    let pixels = par::map_indexed(exec, n, |i| {
        let ray = config.pixel_ray(pose, (i % w as usize) as u32, (i / w as usize) as u32);
        match ray_cast(&ray, scene) {
            Some(hit) if hit.t <= config.max_range => (shade(hit.label, &hit.normal), hit.t, hit.label),
            _ => (Label::Sky.color(), config.max_range, Label::Sky),
        }
    });
    let mut frame = CameraFrame {
        width: config.width,
        height: config.height,
        rgb: Vec::with_capacity(n),
        depth: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
    };
    for (rgb, d, l) in pixels {
        frame.rgb.push(rgb);
        frame.depth.push(d);
        frame.labels.push(l);
    }
    frame
}
