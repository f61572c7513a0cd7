//! Rotating multi-channel LiDAR.

use nalgebra::Isometry3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ray_cast, Label, Ray, Scene, SensorError};
use crate::geom::{Transform, Vec3};
use crate::par::{self, Execution};
use crate::world::ActorId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub channels: u32,
    /// Elevation range `[min, max]` in degrees.
    pub v_fov: [f64; 2],
    /// Rays per revolution.
    pub h_steps: u32,
    pub max_range: f64,
    /// Mount relative to the carrying vehicle.
    pub mount: Transform,
    /// Gaussian range noise standard deviation (m); 0 disables noise.
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            v_fov: [-30.0, 10.0],
            h_steps: 1000,
            max_range: 100.0,
            mount: Transform::new(Vec3::new(0.0, 0.0, 1.9), 0.0, 0.0, 0.0),
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        let bad = |m: &str| Err(SensorError::InvalidConfig(format!("lidar: {m}")));
        if self.channels == 0 {
            return bad("channels must be at least 1");
        }
        if self.h_steps == 0 {
            return bad("h_steps must be at least 1");
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return bad("max_range must be positive");
        }
        if !(self.v_fov[0] <= self.v_fov[1]) || self.v_fov.iter().any(|a| a.abs() > 90.0) {
            return bad("v_fov must be an ordered range within [-90, 90]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        Ok(())
    }

    pub fn ray_count(&self) -> usize {
        self.channels as usize * self.h_steps as usize
    }

    /// Elevation of channel `c` in radians; channels are spaced evenly from
    /// `v_fov[0]` to `v_fov[1]` inclusive, a single channel sits mid-range.
    pub fn elevation(&self, c: u32) -> f64 {
        let [lo, hi] = self.v_fov;
        let deg = if self.channels == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * c as f64 / (self.channels - 1) as f64
        };
        deg.to_radians()
    }

    pub fn azimuth(&self, h: u32) -> f64 {
        std::f64::consts::TAU * h as f64 / self.h_steps as f64
    }

    /// Unit direction of ray `index` in the sensor frame. Rays are ordered
    /// azimuth-major: `index = h * channels + c`.
    pub fn direction(&self, index: usize) -> Vec3 {
        let c = (index % self.channels as usize) as u32;
        let h = (index / self.channels as usize) as u32;
        let (se, ce) = self.elevation(c).sin_cos();
        let (sa, ca) = self.azimuth(h).sin_cos();
        Vec3::new(ce * ca, ce * sa, se)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    /// Sensor frame, meters.
    pub position: Vec3,
    pub range: f64,
    pub label: Label,
    pub actor: Option<ActorId>,
    /// Index of the emitting ray.
    pub ray: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.points.iter().filter(|p| p.label == label).count()
    }
}

/// Casts `channels * h_steps` rays from `sensor_pose` (sensor to world) and
/// keeps the hits within `max_range`. Output follows ray order.
pub fn lidar_scan(config: &LidarConfig, sensor_pose: &Isometry3<f64>, scene: &Scene, exec: Execution) -> PointCloud {
    let origin = sensor_pose.translation.vector;
    let rot = sensor_pose.rotation;
    let noise = (config.noise_sigma > 0.0).then(|| Normal::new(0.0, config.noise_sigma).expect("sigma validated"));
    let hits = par::map_indexed(exec, config.ray_count(), |i| {
        let local = config.direction(i);
        let ray = Ray {
            origin,
            dir: rot * local,
        };
        let hit = ray_cast(&ray, scene)?;
        if hit.t > config.max_range {
            return None;
        }
        let mut range = hit.t;
        if let Some(n) = &noise {
            let mut rng = ChaCha8Rng::seed_from_u64(config.noise_seed);
            rng.set_stream(i as u64);
            range = (range + n.sample(&mut rng)).clamp(0.0, config.max_range);
        }
        Some(LidarPoint {
            position: local * range,
            range,
            label: hit.label,
            actor: hit.actor,
            ray: i as u32,
        })
    });
    PointCloud {
        points: hits.into_iter().flatten().collect(),
    }
}
