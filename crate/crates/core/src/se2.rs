//! SE(2) pose algebra and the scale-projected motion proposal.
//!
//! Particle poses live in the pixel frame of the sketch while odometry is
//! metric. A per-particle scale `s` (meters/pixel) projects metric motion
//! into pixels: the translational part of an increment is divided by `s`,
//! the rotation passes through unchanged. The scale itself evolves as a
//! clamped random walk.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wrap an angle to [-pi, pi).
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
        - std::f64::consts::PI;
    // rem_euclid can land exactly on 2*pi for inputs like -pi - 1e-17
    if t >= std::f64::consts::PI {
        t - 2.0 * std::f64::consts::PI
    } else {
        t
    }
}

/// A planar pose. The filter tracks poses in sketch pixels; the simulator
/// uses the same algebra with metric coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2D {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    /// Standard SE(2) composition `self (+) other`.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let (sin, cos) = self.theta.sin_cos();
        Pose2D {
            x: self.x + other.x * cos - other.y * sin,
            y: self.y + other.x * sin + other.y * cos,
            theta: wrap_angle(self.theta + other.theta),
        }
    }

    /// Inverse element: `p.compose(&p.inverse())` is the identity.
    pub fn inverse(&self) -> Pose2D {
        let (sin, cos) = self.theta.sin_cos();
        Pose2D {
            x: -(self.x * cos + self.y * sin),
            y: self.x * sin - self.y * cos,
            theta: wrap_angle(-self.theta),
        }
    }

    /// `other` expressed in the frame of `self` (the relative transform).
    pub fn relative_to(&self, other: &Pose2D) -> Pose2D {
        self.inverse().compose(other)
    }
}

/// One step of incremental odometry, in meters/radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdomIncrement {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl OdomIncrement {
    pub const ZERO: OdomIncrement = OdomIncrement {
        dx: 0.0,
        dy: 0.0,
        dtheta: 0.0,
    };

    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        OdomIncrement { dx, dy, dtheta }
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dtheta.is_finite()
    }

    /// SE(2) composition of two increments (accumulates odometry between
    /// filter updates).
    pub fn compose(&self, other: &OdomIncrement) -> OdomIncrement {
        let (sin, cos) = self.dtheta.sin_cos();
        OdomIncrement {
            dx: self.dx + other.dx * cos - other.dy * sin,
            dy: self.dy + other.dx * sin + other.dy * cos,
            dtheta: wrap_angle(self.dtheta + other.dtheta),
        }
    }
}

impl From<Pose2D> for OdomIncrement {
    fn from(p: Pose2D) -> Self {
        OdomIncrement::new(p.x, p.y, p.theta)
    }
}

/// Noise parameters of the motion proposal.
///
/// `sigma_q` is the covariance of the metric translational noise (row-major
/// 2x2), `sigma_theta` the standard deviation of the wrapped-normal heading
/// noise, `sigma_s` the standard deviation of the scale increment. The scale
/// random walk is clamped to `[s_min, s_max]` because a non-positive scale
/// has no inverse projection.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MotionNoiseParams {
    pub sigma_q: [[f64; 2]; 2],
    pub sigma_theta: f64,
    pub sigma_s: f64,
    pub s_min: f64,
    pub s_max: f64,
}

impl Default for MotionNoiseParams {
    fn default() -> Self {
        MotionNoiseParams {
            sigma_q: [[0.1, 0.0], [0.0, 0.1]],
            sigma_theta: 0.05,
            sigma_s: 0.1,
            s_min: 1e-3,
            s_max: 10.0,
        }
    }
}

impl MotionNoiseParams {
    pub fn validate(&self) -> Result<()> {
        let [[a, b], [c, d]] = self.sigma_q;
        if !(a.is_finite() && b.is_finite() && c.is_finite() && d.is_finite()) {
            return Err(Error::validation("sigma_q has non-finite entries"));
        }
        if (b - c).abs() > 1e-9 {
            return Err(Error::validation("sigma_q must be symmetric"));
        }
        if a < 0.0 || d < 0.0 || a * d - b * c < -1e-12 {
            return Err(Error::validation("sigma_q must be positive semi-definite"));
        }
        if self.sigma_theta < 0.0 || self.sigma_s < 0.0 {
            return Err(Error::validation("noise std deviations must be >= 0"));
        }
        if !(self.s_min > 0.0 && self.s_min < self.s_max) {
            return Err(Error::validation("require 0 < s_min < s_max"));
        }
        Ok(())
    }

    /// Lower-triangular Cholesky factor of `sigma_q` (PSD-tolerant).
    fn chol_q(&self) -> [[f64; 2]; 2] {
        let a = self.sigma_q[0][0];
        let b = self.sigma_q[0][1];
        let d = self.sigma_q[1][1];
        if a <= 0.0 {
            return [[0.0, 0.0], [0.0, d.max(0.0).sqrt()]];
        }
        let l11 = a.sqrt();
        let l21 = b / l11;
        let l22 = (d - l21 * l21).max(0.0).sqrt();
        [[l11, 0.0], [l21, l22]]
    }
}

/// Sample the metric-frame noise term: translation from N(0, sigma_q),
/// rotation from a wrapped normal WN(0, sigma_theta^2).
pub fn sample_noise<R: Rng + ?Sized>(params: &MotionNoiseParams, rng: &mut R) -> OdomIncrement {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let l = params.chol_q();
    let n1 = unit.sample(rng);
    let n2 = unit.sample(rng);
    let qx = l[0][0] * n1;
    let qy = l[1][0] * n1 + l[1][1] * n2;
    let theta = if params.sigma_theta > 0.0 {
        wrap_angle(params.sigma_theta * unit.sample(rng))
    } else {
        0.0
    };
    OdomIncrement::new(qx, qy, theta)
}

/// Advance a pixel-frame pose by a metric odometry increment.
///
/// The increment is perturbed by sampled noise in the metric frame, its
/// translation is divided by the particle scale `s` (meters -> pixels), the
/// rotation is left untouched, and the result is composed onto `pose`.
pub fn propagate<R: Rng + ?Sized>(
    pose: &Pose2D,
    s: f64,
    u: &OdomIncrement,
    params: &MotionNoiseParams,
    rng: &mut R,
) -> Result<Pose2D> {
    if !u.is_finite() {
        return Err(Error::validation("odometry increment must be finite"));
    }
    debug_assert!(s > 0.0, "scale must be positive");
    let noise = sample_noise(params, rng);
    let perturbed = u.compose(&noise);
    let delta_px = Pose2D::new(perturbed.dx / s, perturbed.dy / s, perturbed.dtheta);
    Ok(pose.compose(&delta_px))
}

/// One Brownian step of the scale chain, clamped to `[s_min, s_max]`.
pub fn sample_scale<R: Rng + ?Sized>(
    s: f64,
    sigma_s: f64,
    s_min: f64,
    s_max: f64,
    rng: &mut R,
) -> f64 {
    if sigma_s <= 0.0 {
        return s.clamp(s_min, s_max);
    }
    let eps = Normal::new(0.0, sigma_s).expect("scale noise").sample(rng);
    (s + eps).clamp(s_min, s_max)
}
