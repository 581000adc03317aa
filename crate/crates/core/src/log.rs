//! Sensor logs: timestamped odometry increments, range scans and optional
//! ground truth, with CARMEN-style text serialization.
//!
//! The on-disk format carries absolute odometry poses (`ODOM x y theta ...`),
//! laser lines (`FLASER n r1 .. rN x y theta odom_x odom_y odom_theta ts ...`)
//! and optional `TRUEPOS` lines, so the same reader handles both our
//! simulator output and the public FR079/Intel logs. Reading converts
//! consecutive odometry poses back into relative increments.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::beam::RangeScan;
use crate::error::{Error, Result};
use crate::se2::{OdomIncrement, Pose2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LogEntry {
    Odom {
        increment: OdomIncrement,
        timestamp: f64,
    },
    Scan(RangeScan),
    /// Metric ground-truth pose (simulator output; absent in real logs).
    TruePose { pose: Pose2D, timestamp: f64 },
}

/// Replay/simulation interchange type: the full sensor stream of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SensorLog {
    pub entries: Vec<LogEntry>,
}

impl SensorLog {
    pub fn scan_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e, LogEntry::Scan(_)))
            .count()
    }

    pub fn true_poses(&self) -> Vec<(f64, Pose2D)> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                LogEntry::TruePose { pose, timestamp } => Some((*timestamp, *pose)),
                _ => None,
            })
            .collect()
    }

    /// Serialize to CARMEN-style text. Increments are composed from the
    /// identity to recover an absolute odometry trajectory.
    pub fn to_carmen(&self) -> String {
        let mut out = String::new();
        let mut odom = Pose2D::new(0.0, 0.0, 0.0);
        for entry in &self.entries {
            match entry {
                LogEntry::Odom {
                    increment,
                    timestamp,
                } => {
                    odom = odom.compose(&Pose2D::new(
                        increment.dx,
                        increment.dy,
                        increment.dtheta,
                    ));
                    let _ = writeln!(
                        out,
                        "ODOM {:.6} {:.6} {:.6} 0 0 0 {timestamp:.6} sim {timestamp:.6}",
                        odom.x, odom.y, odom.theta
                    );
                }
                LogEntry::Scan(scan) => {
                    let _ = write!(out, "FLASER {}", scan.len());
                    for r in &scan.ranges {
                        let _ = write!(out, " {r:.6}");
                    }
                    let _ = writeln!(
                        out,
                        " {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} sim {:.6}",
                        odom.x,
                        odom.y,
                        odom.theta,
                        odom.x,
                        odom.y,
                        odom.theta,
                        scan.timestamp,
                        scan.timestamp
                    );
                }
                LogEntry::TruePose { pose, timestamp } => {
                    let _ = writeln!(
                        out,
                        "TRUEPOS {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {timestamp:.6} sim {timestamp:.6}",
                        pose.x, pose.y, pose.theta, odom.x, odom.y, odom.theta
                    );
                }
            }
        }
        out
    }

    /// Parse CARMEN-style text. `laser_fov` spreads FLASER beams evenly
    /// over the field of view (public 180-degree lasers: pi). Unknown line
    /// types (PARAM, comments, ...) are skipped.
    pub fn from_carmen(text: &str, laser_fov: f64) -> Result<SensorLog> {
        let mut entries = Vec::new();
        let mut last_odom: Option<Pose2D> = None;
        let mut fallback_ts = 0.0f64;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let keyword = tokens.next().unwrap_or("");
            let rest: Vec<&str> = tokens.collect();
            let parse = |idx: usize, what: &str| -> Result<f64> {
                rest.get(idx)
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| Error::LogParse {
                        line: lineno + 1,
                        message: format!("missing or invalid {what}"),
                    })
            };
            fallback_ts += 1.0;
            match keyword {
                "ODOM" => {
                    let pose = Pose2D::new(parse(0, "x")?, parse(1, "y")?, parse(2, "theta")?);
                    let timestamp = parse(6, "timestamp").unwrap_or(fallback_ts);
                    let increment = match last_odom {
                        Some(prev) => OdomIncrement::from(prev.relative_to(&pose)),
                        None => OdomIncrement::ZERO,
                    };
                    last_odom = Some(pose);
                    entries.push(LogEntry::Odom {
                        increment,
                        timestamp,
                    });
                }
                "FLASER" | "RAWLASER1" => {
                    let n = parse(0, "reading count")? as usize;
                    if rest.len() < n + 1 {
                        return Err(Error::LogParse {
                            line: lineno + 1,
                            message: format!("expected {n} range readings"),
                        });
                    }
                    let ranges: Vec<f64> = (0..n)
                        .map(|i| parse(i + 1, "range"))
                        .collect::<Result<_>>()?;
                    let angles = beam_angles(n, laser_fov);
                    let timestamp = parse(n + 7, "timestamp").unwrap_or(fallback_ts);
                    entries.push(LogEntry::Scan(RangeScan::new(ranges, angles, timestamp)?));
                }
                "TRUEPOS" => {
                    let pose = Pose2D::new(parse(0, "x")?, parse(1, "y")?, parse(2, "theta")?);
                    let timestamp = parse(6, "timestamp").unwrap_or(fallback_ts);
                    entries.push(LogEntry::TruePose { pose, timestamp });
                }
                _ => {}
            }
        }
        Ok(SensorLog { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_carmen())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, laser_fov: f64) -> Result<SensorLog> {
        Self::from_carmen(&std::fs::read_to_string(path)?, laser_fov)
    }
}

/// Evenly spaced beam angles across a field of view, centered on the robot
/// heading.
pub fn beam_angles(n: usize, fov: f64) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| -fov / 2.0 + i as f64 * fov / (n - 1) as f64)
        .collect()
}
