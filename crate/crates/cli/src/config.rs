//! Run configuration: one TOML block per subsystem, defaults matching the
//! reference operating point, and a content hash embedded in every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sketchloc::beam::BeamModelParams;
use sketchloc::filter::{FilterConfig, InitRegion, KldConfig};
use sketchloc::map::PixelRect;
use sketchloc::se2::MotionNoiseParams;
use sketchloc::sim::SensorSpec;

use crate::CliError;

const PI: f64 = std::f64::consts::PI;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub map: MapSection,
    pub log: LogSection,
    pub init: InitSection,
    pub motion: MotionSection,
    pub beam: BeamSection,
    pub kld: KldSection,
    pub filter: FilterSection,
    pub localize: LocalizeSection,
    pub sim: SimSection,
    pub learn: LearnSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            map: MapSection::default(),
            log: LogSection::default(),
            init: InitSection::default(),
            motion: MotionSection::default(),
            beam: BeamSection::default(),
            kld: KldSection::default(),
            filter: FilterSection::default(),
            localize: LocalizeSection::default(),
            sim: SimSection::default(),
            learn: LearnSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    /// Sketch raster (PNG or binary PGM).
    pub path: PathBuf,
    /// Key-value sidecar with threshold and room rectangles.
    pub metadata: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogSection {
    pub path: PathBuf,
    /// Field of view assumed for FLASER lines.
    pub laser_fov: f64,
}

impl Default for LogSection {
    fn default() -> Self {
        LogSection {
            path: PathBuf::new(),
            laser_fov: PI,
        }
    }
}

/// Initialization region; either an explicit rectangle or a square around
/// `center` with `half_extent` pixels on each side (the "user tap" prior).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    pub rect: Option<[f64; 4]>,
    pub center: Option<[f64; 2]>,
    pub half_extent: f64,
    pub theta: [f64; 2],
    pub scale: [f64; 2],
    pub particles: usize,
}

impl Default for InitSection {
    fn default() -> Self {
        InitSection {
            rect: None,
            center: None,
            half_extent: 75.0,
            theta: [-PI, PI],
            scale: [0.01, 1.0],
            particles: 5000,
        }
    }
}

impl InitSection {
    pub fn to_region(&self, map_w: u32, map_h: u32) -> Result<InitRegion, CliError> {
        let rect = if let Some([x0, y0, x1, y1]) = self.rect {
            PixelRect::new(x0, y0, x1, y1).map_err(CliError::config)?
        } else if let Some([cx, cy]) = self.center {
            let h = self.half_extent;
            PixelRect::new(
                (cx - h).max(0.0),
                (cy - h).max(0.0),
                (cx + h).min(map_w as f64),
                (cy + h).min(map_h as f64),
            )
            .map_err(CliError::config)?
        } else {
            return Err(CliError::Config(
                "init section needs either 'rect' or 'center'".into(),
            ));
        };
        Ok(InitRegion {
            rect,
            theta_range: (self.theta[0], self.theta[1]),
            scale_range: (self.scale[0], self.scale[1]),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSection {
    pub sigma_q: [[f64; 2]; 2],
    pub sigma_theta: f64,
    pub sigma_s: f64,
    pub s_min: f64,
    pub s_max: f64,
}

impl Default for MotionSection {
    fn default() -> Self {
        let d = MotionNoiseParams::default();
        MotionSection {
            sigma_q: d.sigma_q,
            sigma_theta: d.sigma_theta,
            sigma_s: d.sigma_s,
            s_min: d.s_min,
            s_max: d.s_max,
        }
    }
}

impl MotionSection {
    pub fn to_params(&self) -> Result<MotionNoiseParams, CliError> {
        let p = MotionNoiseParams {
            sigma_q: self.sigma_q,
            sigma_theta: self.sigma_theta,
            sigma_s: self.sigma_s,
            s_min: self.s_min,
            s_max: self.s_max,
        };
        p.validate().map_err(CliError::config)?;
        Ok(p)
    }
}

/// Raw mixture weights as configured; they are normalized on load (the
/// reference values 0.005/0.5/0.3/0.4 sum to 1.205 and keep their ratios).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamSection {
    pub sigma_z: f64,
    pub lambda: f64,
    pub delta: f64,
    pub z_max: f64,
    pub w_hit: f64,
    pub w_dyn: f64,
    pub w_max: f64,
    pub w_rnd: f64,
    pub beams_per_scan: usize,
    pub out_of_map_log_likelihood: f64,
}

impl Default for BeamSection {
    fn default() -> Self {
        BeamSection {
            sigma_z: 0.1,
            lambda: 0.1,
            delta: 0.01,
            z_max: 20.0,
            w_hit: 0.005,
            w_dyn: 0.5,
            w_max: 0.3,
            w_rnd: 0.4,
            beams_per_scan: 10,
            out_of_map_log_likelihood: -1e4,
        }
    }
}

impl BeamSection {
    pub fn to_params(&self) -> Result<BeamModelParams, CliError> {
        let mut p = BeamModelParams::new(
            self.sigma_z,
            self.lambda,
            self.delta,
            self.z_max,
            [self.w_hit, self.w_dyn, self.w_max, self.w_rnd],
            self.beams_per_scan,
        )
        .map_err(CliError::config)?;
        p.out_of_map_log_likelihood = self.out_of_map_log_likelihood;
        Ok(p)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KldSection {
    pub bin_xy: f64,
    pub bin_theta: f64,
    pub bin_scale: f64,
    pub epsilon: f64,
    pub z_quantile: f64,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for KldSection {
    fn default() -> Self {
        let d = KldConfig::default();
        KldSection {
            bin_xy: d.bin_size.0,
            bin_theta: d.bin_size.2,
            bin_scale: d.bin_size.3,
            epsilon: d.epsilon,
            z_quantile: d.z_quantile,
            n_min: d.n_min,
            n_max: d.n_max,
        }
    }
}

impl KldSection {
    pub fn to_config(&self) -> Result<KldConfig, CliError> {
        let cfg = KldConfig {
            bin_size: (self.bin_xy, self.bin_xy, self.bin_theta, self.bin_scale),
            epsilon: self.epsilon,
            z_quantile: self.z_quantile,
            n_min: self.n_min,
            n_max: self.n_max,
        };
        cfg.validate().map_err(CliError::config)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub resample_every_update: bool,
    pub ess_threshold_ratio: f64,
    pub use_kld: bool,
    pub reinit_on_degenerate: bool,
    /// Room-test estimator: "mean" (weighted mean) or "max_weight".
    pub estimator: String,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            resample_every_update: true,
            ess_threshold_ratio: 0.5,
            use_kld: true,
            reinit_on_degenerate: true,
            estimator: "mean".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeSection {
    /// Label recorded in artifacts (e.g. "1->6").
    pub route: String,
    pub sketch_id: String,
    /// Room the run is supposed to end in; enables the success verdict.
    pub target_room: Option<String>,
    /// Render an overlay frame every this many scans (0 = off).
    pub render_stride: usize,
    /// Embed the per-scan estimate trace in the result JSON.
    pub trace_in_result: bool,
}

impl Default for LocalizeSection {
    fn default() -> Self {
        LocalizeSection {
            route: "run".to_string(),
            sketch_id: "s0".to_string(),
            target_room: None,
            render_stride: 0,
            trace_in_result: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// "builtin:room", "builtin:apartment", or a raster path.
    pub world: String,
    /// Metadata sidecar for raster worlds.
    pub world_metadata: Option<PathBuf>,
    /// Meters per cell for raster worlds (builtin worlds carry their own).
    pub resolution: f64,
    pub speed: f64,
    pub turn_rate: f64,
    pub beams: usize,
    pub fov: f64,
    pub z_max: f64,
    pub scan_period: usize,
    pub range_noise_sigma: f64,
    /// Per-step odometry corruption (std devs).
    pub odom_trans_noise_std: f64,
    pub odom_rot_noise_std: f64,
    /// Explicit metric waypoints ...
    pub waypoints: Vec<[f64; 2]>,
    /// ... or a room-to-room route on a builtin world.
    pub route: Option<[String; 2]>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            world: "builtin:room".to_string(),
            world_metadata: None,
            resolution: 0.05,
            speed: 0.1,
            turn_rate: 0.2,
            beams: 180,
            fov: PI,
            z_max: 20.0,
            scan_period: 5,
            range_noise_sigma: 0.02,
            odom_trans_noise_std: 0.002,
            odom_rot_noise_std: 0.002,
            waypoints: Vec::new(),
            route: None,
        }
    }
}

impl SimSection {
    pub fn sensor(&self) -> SensorSpec {
        SensorSpec {
            beams: self.beams,
            fov: self.fov,
            z_max: self.z_max,
            scan_period: self.scan_period,
        }
    }

    pub fn odom_noise(&self) -> MotionNoiseParams {
        let v = self.odom_trans_noise_std * self.odom_trans_noise_std;
        MotionNoiseParams {
            sigma_q: [[v, 0.0], [0.0, v]],
            sigma_theta: self.odom_rot_noise_std,
            sigma_s: 0.0,
            ..MotionNoiseParams::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnSection {
    pub calibration_csv: PathBuf,
    pub scale_grid_start: f64,
    pub scale_grid_stop: f64,
    pub scale_grid_step: f64,
    /// Sketches referenced by calibration rows; falls back to [map].
    pub sketches: Vec<SketchRef>,
}

impl Default for LearnSection {
    fn default() -> Self {
        LearnSection {
            calibration_csv: PathBuf::new(),
            scale_grid_start: 0.02,
            scale_grid_stop: 0.5,
            scale_grid_step: 0.005,
            sketches: Vec::new(),
        }
    }
}

impl LearnSection {
    pub fn grid(&self) -> Vec<f64> {
        let mut g = Vec::new();
        let mut s = self.scale_grid_start;
        while s <= self.scale_grid_stop + 1e-12 {
            g.push(s);
            s += self.scale_grid_step;
        }
        g
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchRef {
    pub id: String,
    pub map: PathBuf,
    pub metadata: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Directory of result_*.json files from localize runs.
    pub results_dir: PathBuf,
    /// Undistorted reference for the ratio-difference series.
    pub reference_map: Option<PathBuf>,
    pub reference_metadata: Option<PathBuf>,
    pub sketches: Vec<SketchRef>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("bad config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Content hash of the effective configuration (after CLI overrides).
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        let digest = hasher.finalize();
        hex_prefix(&digest, 16)
    }

    pub fn filter_config(&self) -> Result<FilterConfig, CliError> {
        Ok(FilterConfig {
            motion: self.motion.to_params()?,
            beam: self.beam.to_params()?,
            kld: self.kld.to_config()?,
            initial_particles: self.init.particles,
            resample_every_update: self.filter.resample_every_update,
            ess_threshold_ratio: self.filter.ess_threshold_ratio,
            use_kld: self.filter.use_kld,
            reinit_on_degenerate: self.filter.reinit_on_degenerate,
        })
    }
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut out = String::with_capacity(chars);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
        if out.len() >= chars {
            break;
        }
    }
    out.truncate(chars);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dump_carries_reference_values() {
        let dump = RunConfig::default().to_toml();
        assert!(dump.contains("sigma_theta = 0.05"), "{dump}");
        assert!(dump.contains("sigma_s = 0.1"));
        assert!(dump.contains("w_hit = 0.005"));
        assert!(dump.contains("w_dyn = 0.5"));
        assert!(dump.contains("w_max = 0.3"));
        assert!(dump.contains("w_rnd = 0.4"));
        assert!(dump.contains("beams_per_scan = 10"));
        // weights normalize on load, preserving ratios
        let p = RunConfig::default().beam.to_params().unwrap();
        let sum: f64 = p.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((p.w_dyn - 0.5 / 1.205).abs() < 1e-12);
    }

    #[test]
    fn roundtrip_and_hash_stability() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let parsed: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg.hash(), parsed.hash());
        let mut changed = parsed;
        changed.seed = 43;
        assert_ne!(cfg.hash(), changed.hash());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = toml::from_str::<RunConfig>("[beam]\nsigma_zz = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("sigma_zz"));
    }

    #[test]
    fn init_region_from_center() {
        let sec = InitSection {
            center: Some([200.0, 100.0]),
            ..InitSection::default()
        };
        let region = sec.to_region(400, 300).unwrap();
        assert_eq!(region.rect.x0, 125.0);
        assert_eq!(region.rect.x1, 275.0);
        assert_eq!(region.rect.width(), 150.0);
        // clamped at the map edge
        let sec = InitSection {
            center: Some([10.0, 10.0]),
            ..InitSection::default()
        };
        let region = sec.to_region(400, 300).unwrap();
        assert_eq!(region.rect.x0, 0.0);
    }

    #[test]
    fn learn_grid_is_inclusive() {
        let sec = LearnSection {
            scale_grid_start: 0.05,
            scale_grid_stop: 0.2,
            scale_grid_step: 0.005,
            ..LearnSection::default()
        };
        let g = sec.grid();
        assert_eq!(g.len(), 31);
        assert!((g[0] - 0.05).abs() < 1e-12);
        assert!((g[30] - 0.2).abs() < 1e-9);
    }
}
