//! Headless, deterministic driving simulation with a pedestrian avatar in
//! the loop: road maps, fixed-step world, motion capture, ray-cast sensors,
//! traffic and eHMI logic, audio cues, and per-tick record/replay.

pub mod audio;
pub mod geom;
pub mod map;
pub mod mocap;
pub mod par;
pub mod presence;
pub mod record;
pub mod scenario;
pub mod sensor;
pub mod traffic;
pub mod world;

pub use geom::{Transform, Vec2, Vec3};
pub use par::Execution;
pub use world::{ActorId, World, WorldConfig, WorldSnapshot};
