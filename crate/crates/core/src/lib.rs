//! Monte Carlo localization on hand-drawn raster maps.
//!
//! The filter tracks the robot pose in the pixel frame of a sketch and
//! jointly estimates a local map-deformation scale (meters per pixel).
//! Besides the filter itself the crate ships a raster map backend with DDA
//! ray casting, a beam mixture observation model evaluated in pixel units, a
//! 2D waypoint simulator, maximum-likelihood parameter learning, and the
//! room-level evaluation protocol.

pub mod beam;
pub mod error;
pub mod eval;
pub mod filter;
pub mod learn;
pub mod log;
pub mod map;
pub mod se2;
pub mod sim;
pub mod synth;

pub use beam::{beam_density, scan_log_likelihood, BeamModelParams, RangeScan};
pub use error::{Error, Result};
pub use filter::{
    estimate, initialize, kld_required_n, kld_resample, predict, resample_low_variance,
    update_weights, Estimate, FilterConfig, InitRegion, KldConfig, McLocalizer, ParticleSet,
    ScaledParticle, StepSummary,
};
pub use log::{LogEntry, SensorLog};
pub use map::{load_map, map_aspect_ratio, Cell, MapMetadata, PixelRect, SketchMap};
pub use se2::{MotionNoiseParams, OdomIncrement, Pose2D};
pub use sim::{simulate_run, MetricRect, SensorSpec, TrajectorySpec, WorldMap};
