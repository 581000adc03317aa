//! Deterministic 2D simulator: drives a unicycle robot along waypoints
//! through a metric occupancy grid and emits odometry, scans and ground
//! truth as a [`SensorLog`].

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::beam::RangeScan;
use crate::error::{Error, Result};
use crate::log::{beam_angles, LogEntry, SensorLog};
use crate::map::{Cell, SketchMap};
use crate::se2::{sample_noise, wrap_angle, MotionNoiseParams, OdomIncrement, Pose2D};

/// Axis-aligned rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl MetricRect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }
}

/// Metric occupancy grid: a cell grid plus its resolution and the metric
/// position of cell (0,0).
#[derive(Debug, Clone)]
pub struct WorldMap {
    pub grid: SketchMap,
    pub resolution: f64,
    pub origin: (f64, f64),
}

impl WorldMap {
    pub fn new(grid: SketchMap, resolution: f64, origin: (f64, f64)) -> Result<Self> {
        if !resolution.is_finite() || resolution <= 0.0 {
            return Err(Error::validation("resolution must be > 0"));
        }
        Ok(WorldMap {
            grid,
            resolution,
            origin,
        })
    }

    pub fn width_m(&self) -> f64 {
        self.grid.width() as f64 * self.resolution
    }

    pub fn height_m(&self) -> f64 {
        self.grid.height() as f64 * self.resolution
    }

    fn to_cells(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin.0) / self.resolution,
            (y - self.origin.1) / self.resolution,
        )
    }

    pub fn is_free(&self, x: f64, y: f64) -> bool {
        let (cx, cy) = self.to_cells(x, y);
        self.grid.in_bounds(cx, cy)
            && self.grid.cell(cx.floor() as u32, cy.floor() as u32) == Cell::Free
    }

    /// Metric raycast: distance in meters to the first occupied cell.
    pub fn raycast(&self, x: f64, y: f64, angle: f64, max_range_m: f64) -> Result<f64> {
        let (cx, cy) = self.to_cells(x, y);
        let cells = self.grid.raycast((cx, cy), angle, max_range_m / self.resolution)?;
        Ok(cells * self.resolution)
    }
}

/// Simulated range sensor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SensorSpec {
    pub beams: usize,
    pub fov: f64,
    pub z_max: f64,
    /// A scan is emitted every this many motion steps.
    pub scan_period: usize,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec {
            beams: 180,
            fov: std::f64::consts::PI,
            z_max: 20.0,
            scan_period: 5,
        }
    }
}

/// Waypoint trajectory and drive limits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub waypoints: Vec<(f64, f64)>,
    /// Forward distance per step (meters).
    pub speed: f64,
    /// Maximum heading change per step (radians).
    pub turn_rate: f64,
    pub sensor: SensorSpec,
}

impl TrajectorySpec {
    pub fn new(waypoints: Vec<(f64, f64)>, speed: f64, turn_rate: f64, sensor: SensorSpec) -> Self {
        TrajectorySpec {
            waypoints,
            speed,
            turn_rate,
            sensor,
        }
    }
}

const CAPTURE_RADIUS: f64 = 0.2;
const MAX_STEPS: usize = 100_000;
const STEP_SECONDS: f64 = 0.1;

fn validate_trajectory(world: &WorldMap, traj: &TrajectorySpec) -> Result<()> {
    if traj.waypoints.len() < 2 {
        return Err(Error::validation("trajectory needs at least 2 waypoints"));
    }
    if !(traj.speed > 0.0 && traj.turn_rate > 0.0) {
        return Err(Error::validation("speed and turn_rate must be > 0"));
    }
    if traj.sensor.beams == 0 || traj.sensor.scan_period == 0 {
        return Err(Error::validation("sensor needs beams >= 1, scan_period >= 1"));
    }
    for &(x, y) in &traj.waypoints {
        if !world.is_free(x, y) {
            return Err(Error::validation(format!(
                "waypoint ({x:.2}, {y:.2}) is not in free space"
            )));
        }
    }
    for pair in traj.waypoints.windows(2) {
        let (ax, ay) = pair[0];
        let (bx, by) = pair[1];
        let dist = (bx - ax).hypot(by - ay);
        if dist < 1e-9 {
            continue;
        }
        let angle = (by - ay).atan2(bx - ax);
        let clear = world.raycast(ax, ay, angle, dist)?;
        if clear < dist - 1e-9 {
            return Err(Error::InfeasibleTrajectory(ax, ay, bx, by));
        }
    }
    Ok(())
}

/// Drive the robot along the waypoints and emit per-step ground truth,
/// noisy odometry increments, and periodic noisy scans. Deterministic for a
/// fixed RNG.
pub fn simulate_run<R: Rng + ?Sized>(
    world: &WorldMap,
    traj: &TrajectorySpec,
    odom_noise: &MotionNoiseParams,
    range_noise_sigma: f64,
    rng: &mut R,
) -> Result<SensorLog> {
    validate_trajectory(world, traj)?;
    let mut entries = Vec::new();

    let (x0, y0) = traj.waypoints[0];
    let (x1, y1) = traj.waypoints[1];
    let mut truth = Pose2D::new(x0, y0, (y1 - y0).atan2(x1 - x0));
    let mut target = 1usize;

    let emit_scan = |truth: &Pose2D, t: f64, rng: &mut R, entries: &mut Vec<LogEntry>| -> Result<()> {
        let angles = beam_angles(traj.sensor.beams, traj.sensor.fov);
        let mut ranges = Vec::with_capacity(angles.len());
        for a in &angles {
            let r = world.raycast(truth.x, truth.y, truth.theta + a, traj.sensor.z_max)?;
            let noisy = if range_noise_sigma > 0.0 {
                r + rand_distr::Normal::new(0.0, range_noise_sigma)
                    .expect("range noise")
                    .sample(rng)
            } else {
                r
            };
            ranges.push(noisy.clamp(0.0, traj.sensor.z_max));
        }
        entries.push(LogEntry::Scan(RangeScan::new(ranges, angles, t)?));
        Ok(())
    };

    entries.push(LogEntry::TruePose {
        pose: truth,
        timestamp: 0.0,
    });
    emit_scan(&truth, 0.0, rng, &mut entries)?;

    for step in 1..=MAX_STEPS {
        let t = step as f64 * STEP_SECONDS;
        let (tx, ty) = traj.waypoints[target];
        let dx = tx - truth.x;
        let dy = ty - truth.y;
        let dist = dx.hypot(dy);

        let heading_err = wrap_angle(dy.atan2(dx) - truth.theta);
        let dtheta = heading_err.clamp(-traj.turn_rate, traj.turn_rate);
        // turn in place while badly misaligned
        let forward = if heading_err.abs() < std::f64::consts::FRAC_PI_4 {
            traj.speed.min(dist)
        } else {
            0.0
        };
        let mut u_true = Pose2D::new(forward, 0.0, dtheta);
        let candidate = truth.compose(&u_true);
        if !world.is_free(candidate.x, candidate.y) {
            u_true = Pose2D::new(0.0, 0.0, dtheta);
        }
        truth = truth.compose(&u_true);

        let noise = sample_noise(odom_noise, rng);
        let u_noisy = OdomIncrement::from(u_true).compose(&noise);
        entries.push(LogEntry::Odom {
            increment: u_noisy,
            timestamp: t,
        });
        entries.push(LogEntry::TruePose {
            pose: truth,
            timestamp: t,
        });
        if step % traj.sensor.scan_period == 0 {
            emit_scan(&truth, t, rng, &mut entries)?;
        }

        let (tx, ty) = traj.waypoints[target];
        if (tx - truth.x).hypot(ty - truth.y) < CAPTURE_RADIUS {
            target += 1;
            if target >= traj.waypoints.len() {
                return Ok(SensorLog { entries });
            }
        }
    }
    Err(Error::validation(
        "trajectory did not reach its final waypoint within the step budget",
    ))
}
