//! Subcommand implementations. Every artifact embeds the config hash and
//! seed; re-running with identical inputs reproduces identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use sketchloc::error::Error as CoreError;
use sketchloc::eval::{locate_room, ratio_vs_success, success_table, RoomRegions, RunResult};
use sketchloc::filter::{max_weight_particle, McLocalizer};
use sketchloc::learn::{
    attach_expected_ranges, best_scale_grid, fit_beam_params, read_calibration_csv_file,
    CalibrationSample,
};
use sketchloc::log::{LogEntry, SensorLog};
use sketchloc::map::{MapMetadata, SketchMap};
use sketchloc::se2::Pose2D;
use sketchloc::sim::{simulate_run, TrajectorySpec, WorldMap};
use sketchloc::synth;

use crate::config::{RunConfig, SketchRef};
use crate::render;
use crate::CliError;

/// Localize result JSON: the run outcome plus provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizeResult {
    pub config_hash: String,
    #[serde(flatten)]
    pub run: RunResult,
    pub n_scans: usize,
    pub degenerate_events: usize,
    pub final_ess: f64,
    pub final_n_particles: usize,
}

fn load_sketch(cfg: &RunConfig) -> Result<(SketchMap, MapMetadata), CliError> {
    let meta = match &cfg.map.metadata {
        Some(path) => MapMetadata::load(path).map_err(CliError::config)?,
        None => MapMetadata::default(),
    };
    let map = SketchMap::from_file(&cfg.map.path, &meta).map_err(CliError::from)?;
    Ok((map, meta))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Replay the configured log through the filter. Returns artifact paths.
pub fn cmd_localize(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let hash = cfg.hash();
    let (map, meta) = load_sketch(cfg)?;
    let log = SensorLog::load(&cfg.log.path, cfg.log.laser_fov).map_err(CliError::from)?;
    if log.scan_count() == 0 {
        return Err(CliError::Config(format!(
            "log {} contains no scans",
            cfg.log.path.display()
        )));
    }
    let filter_cfg = cfg.filter_config()?;
    let region = cfg.init.to_region(map.width(), map.height())?;
    let mut localizer =
        McLocalizer::new(filter_cfg, region, &map, cfg.seed).map_err(CliError::config)?;

    let mut trajectory = String::new();
    let _ = writeln!(trajectory, "# config_hash={hash} seed={}", cfg.seed);
    let _ = writeln!(trajectory, "step,x_px,y_px,theta,scale,n_particles,ess");

    let frames_dir = cfg.out_dir.join(format!("frames_{}", cfg.seed));
    let mut trace = Vec::new();
    let mut scan_idx = 0usize;
    let mut last_summary = None;
    for entry in &log.entries {
        match entry {
            LogEntry::Odom { increment, .. } => localizer.on_odometry(increment),
            LogEntry::Scan(scan) => {
                let summary = localizer.on_scan(scan, &map).map_err(CliError::config)?;
                let est = &summary.estimate;
                let _ = writeln!(
                    trajectory,
                    "{scan_idx},{:.4},{:.4},{:.6},{:.6},{},{:.2}",
                    est.pose.x, est.pose.y, est.pose.theta, est.scale, summary.n_particles,
                    summary.ess
                );
                trace.push(est.pose);
                if cfg.localize.render_stride > 0 && scan_idx.is_multiple_of(cfg.localize.render_stride) {
                    let frame = render::overlay(&map, localizer.particles(), &est.pose);
                    let path = frames_dir.join(format!("frame_{scan_idx:05}.png"));
                    render::save_png(&frame, &path)?;
                }
                scan_idx += 1;
                last_summary = Some(summary);
            }
            LogEntry::TruePose { .. } => {}
        }
    }

    let summary = last_summary.expect("scan count checked above");
    let (final_pose, final_scale) = if cfg.filter.estimator == "max_weight" {
        let p = max_weight_particle(localizer.particles());
        (p.pose, p.scale)
    } else {
        (summary.estimate.pose, summary.estimate.scale)
    };

    let regions = RoomRegions::from(&meta);
    let target_room = cfg.localize.target_room.clone().unwrap_or_default();
    let success = !target_room.is_empty()
        && locate_room(&final_pose, &regions) == Some(target_room.as_str());
    let result = LocalizeResult {
        config_hash: hash.clone(),
        run: RunResult {
            seed: cfg.seed,
            route: cfg.localize.route.clone(),
            sketch_id: cfg.localize.sketch_id.clone(),
            target_room,
            final_pose,
            final_scale,
            success,
            trace: cfg.localize.trace_in_result.then_some(trace),
        },
        n_scans: scan_idx,
        degenerate_events: localizer.degenerate_events,
        final_ess: summary.ess,
        final_n_particles: summary.n_particles,
    };

    let traj_path = cfg.out_dir.join(format!("trajectory_{}.csv", cfg.seed));
    let result_path = cfg.out_dir.join(format!("result_{}.json", cfg.seed));
    write_atomic(&traj_path, trajectory.as_bytes())?;
    write_atomic(
        &result_path,
        serde_json::to_string_pretty(&result)
            .expect("result serializes")
            .as_bytes(),
    )?;
    Ok(vec![traj_path, result_path])
}

fn builtin_world(name: &str) -> Option<synth::BuiltWorld> {
    match name {
        "builtin:room" => Some(synth::room_world()),
        "builtin:apartment" => Some(synth::apartment_world()),
        _ => None,
    }
}

fn resolve_world(cfg: &RunConfig) -> Result<(WorldMap, Option<synth::BuiltWorld>), CliError> {
    if let Some(bw) = builtin_world(&cfg.sim.world) {
        return Ok((bw.world.clone(), Some(bw)));
    }
    let meta = match &cfg.sim.world_metadata {
        Some(path) => MapMetadata::load(path).map_err(CliError::config)?,
        None => MapMetadata::default(),
    };
    let grid = SketchMap::from_file(Path::new(&cfg.sim.world), &meta)?;
    let world = WorldMap::new(grid, cfg.sim.resolution, (0.0, 0.0)).map_err(CliError::config)?;
    Ok((world, None))
}

/// Generate a sensor log by driving the simulator along the configured
/// waypoints (or a room-to-room route on a builtin world).
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let hash = cfg.hash();
    let (world, built) = resolve_world(cfg)?;
    let waypoints: Vec<(f64, f64)> = if !cfg.sim.waypoints.is_empty() {
        cfg.sim.waypoints.iter().map(|w| (w[0], w[1])).collect()
    } else if let Some([from, to]) = &cfg.sim.route {
        let bw = built.as_ref().ok_or_else(|| {
            CliError::Config("sim.route requires a builtin world".to_string())
        })?;
        synth::route_waypoints(bw, from, to).map_err(CliError::config)?
    } else {
        return Err(CliError::Config(
            "sim section needs 'waypoints' or 'route'".to_string(),
        ));
    };

    let traj = TrajectorySpec::new(waypoints, cfg.sim.speed, cfg.sim.turn_rate, cfg.sim.sensor());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let log = simulate_run(
        &world,
        &traj,
        &cfg.sim.odom_noise(),
        cfg.sim.range_noise_sigma,
        &mut rng,
    )
    .map_err(CliError::config)?;

    let mut text = format!("# config_hash={hash} seed={}\n", cfg.seed);
    text.push_str(&log.to_carmen());
    let path = cfg.out_dir.join(format!("sim_{}.clf", cfg.seed));
    write_atomic(&path, text.as_bytes())?;
    Ok(vec![path])
}

#[derive(Debug, Serialize)]
struct LearnReport {
    config_hash: String,
    seed: u64,
    /// Best grid-search scale per (sketch, pose) calibration group.
    group_scales: Vec<GroupScale>,
    fit: sketchloc::learn::FitReport,
}

#[derive(Debug, Serialize)]
struct GroupScale {
    sketch_id: String,
    pose: Pose2D,
    scale: f64,
    samples: usize,
}

fn sketch_table(
    refs: &[SketchRef],
    fallback: Option<(&str, &SketchMap)>,
) -> Result<Vec<(String, SketchMap)>, CliError> {
    let mut out = Vec::new();
    for r in refs {
        let meta = match &r.metadata {
            Some(p) => MapMetadata::load(p).map_err(CliError::config)?,
            None => MapMetadata::default(),
        };
        out.push((r.id.clone(), SketchMap::from_file(&r.map, &meta)?));
    }
    if out.is_empty() {
        if let Some((id, map)) = fallback {
            out.push((id.to_string(), map.clone()));
        }
    }
    Ok(out)
}

/// Learn beam-model parameters from a calibration CSV: per-group scale grid
/// search, then an EM fit over all samples brought into metric units.
pub fn cmd_learn(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let hash = cfg.hash();
    let rows = read_calibration_csv_file(&cfg.learn.calibration_csv)?;
    if rows.is_empty() {
        return Err(CliError::Config("calibration CSV has no rows".to_string()));
    }
    let fallback = if cfg.map.path.as_os_str().is_empty() {
        None
    } else {
        Some(load_sketch(cfg)?)
    };
    let sketches = sketch_table(
        &cfg.learn.sketches,
        fallback
            .as_ref()
            .map(|(m, _)| (cfg.localize.sketch_id.as_str(), m)),
    )?;
    if sketches.is_empty() {
        return Err(CliError::Config(
            "learn needs sketches (learn.sketches or the map section)".to_string(),
        ));
    }

    let p0 = cfg.beam.to_params()?;
    let grid = cfg.learn.grid();
    // cast out to z_max at the smallest candidate scale
    let max_range_px = p0.z_max / grid.first().copied().unwrap_or(0.01);
    let samples = attach_expected_ranges(
        &rows,
        |id| sketches.iter().find(|(sid, _)| sid == id).map(|(_, m)| m),
        max_range_px,
    )
    .map_err(CliError::config)?;

    // group by sketch and pose (poses quantized for key stability)
    let mut groups: std::collections::BTreeMap<String, Vec<&CalibrationSample>> =
        std::collections::BTreeMap::new();
    for s in &samples {
        let key = format!(
            "{}@{:.4},{:.4},{:.4}",
            s.sketch_id, s.pose.x, s.pose.y, s.pose.theta
        );
        groups.entry(key).or_default().push(s);
    }

    let mut group_scales = Vec::new();
    let mut metric_pairs: Vec<(f64, f64)> = Vec::new();
    for group in groups.values() {
        let owned: Vec<CalibrationSample> = group.iter().map(|s| (*s).clone()).collect();
        let s_star = best_scale_grid(&owned, &grid, &p0).map_err(CliError::config)?;
        for s in &owned {
            metric_pairs.push((s.z, s.z_hat_px * s_star));
        }
        group_scales.push(GroupScale {
            sketch_id: owned[0].sketch_id.clone(),
            pose: owned[0].pose,
            scale: s_star,
            samples: owned.len(),
        });
    }

    let fit = fit_beam_params(&metric_pairs, &p0).map_err(CliError::config)?;
    let report = LearnReport {
        config_hash: hash,
        seed: cfg.seed,
        group_scales,
        fit,
    };
    let path = cfg.out_dir.join("fit_report.json");
    write_atomic(
        &path,
        serde_json::to_string_pretty(&report)
            .expect("report serializes")
            .as_bytes(),
    )?;
    Ok(vec![path])
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    config_hash: String,
    seed: u64,
    runs: usize,
    total_success_pct: f64,
    route_totals: Vec<(String, f64)>,
    sketch_totals: Vec<(String, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spearman_ratio_vs_success: Option<f64>,
}

/// Aggregate localize results into the success table and, when a reference
/// map is configured, the ratio-difference series.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let hash = cfg.hash();
    let mut files: Vec<PathBuf> = fs::read_dir(&cfg.eval.results_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", cfg.eval.results_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("result_") && n.ends_with(".json"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!(
            "no result_*.json files under {}",
            cfg.eval.results_dir.display()
        )));
    }

    let sketches = sketch_table(&cfg.eval.sketches, None)?;
    let mut rooms_by_sketch: std::collections::BTreeMap<String, RoomRegions> =
        std::collections::BTreeMap::new();
    for r in &cfg.eval.sketches {
        if let Some(metapath) = &r.metadata {
            let meta = MapMetadata::load(metapath).map_err(CliError::config)?;
            rooms_by_sketch.insert(r.id.clone(), RoomRegions::from(&meta));
        }
    }

    let mut results = Vec::new();
    for path in &files {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let parsed: LocalizeResult = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let run = match rooms_by_sketch.get(&parsed.run.sketch_id) {
            Some(regions) => parsed.run.judge(regions),
            None => parsed.run, // trust the verdict recorded at localize time
        };
        results.push(run);
    }

    let table = success_table(&results).map_err(CliError::config)?;
    let mut csv = format!("# config_hash={hash} seed={}\n", cfg.seed);
    csv.push_str(&table.to_csv());
    let table_csv = cfg.out_dir.join("success_table.csv");
    write_atomic(&table_csv, csv.as_bytes())?;
    let table_json = cfg.out_dir.join("success_table.json");
    write_atomic(
        &table_json,
        serde_json::to_string_pretty(&table)
            .expect("table serializes")
            .as_bytes(),
    )?;

    let mut artifacts = vec![table_csv, table_json];
    let mut rho = None;
    if let Some(ref_map_path) = &cfg.eval.reference_map {
        if sketches.len() >= 2 {
            let ref_meta = match &cfg.eval.reference_metadata {
                Some(p) => MapMetadata::load(p).map_err(CliError::config)?,
                None => MapMetadata::default(),
            };
            let reference = SketchMap::from_file(ref_map_path, &ref_meta)?;
            let items: Vec<(String, &SketchMap, f64)> = sketches
                .iter()
                .map(|(id, map)| {
                    let j = table
                        .sketches
                        .iter()
                        .position(|s| s == id)
                        .map(|j| table.sketch_totals[j])
                        .unwrap_or(0.0);
                    (id.clone(), map, j)
                })
                .collect();
            let (series, r) = ratio_vs_success(&items, &reference).map_err(CliError::config)?;
            rho = Some(r);
            let mut csv = format!("# config_hash={hash} seed={}\n", cfg.seed);
            csv.push_str("sketch_id,ratio_difference,success_pct\n");
            for p in &series {
                let _ = writeln!(
                    csv,
                    "{},{:.6},{:.2}",
                    p.sketch_id, p.ratio_difference, p.success_pct
                );
            }
            let series_path = cfg.out_dir.join("ratio_series.csv");
            write_atomic(&series_path, csv.as_bytes())?;
            artifacts.push(series_path);
        }
    }

    let summary = EvalSummary {
        config_hash: hash,
        seed: cfg.seed,
        runs: results.len(),
        total_success_pct: table.total,
        route_totals: table
            .routes
            .iter()
            .cloned()
            .zip(table.route_totals.iter().copied())
            .collect(),
        sketch_totals: table
            .sketches
            .iter()
            .cloned()
            .zip(table.sketch_totals.iter().copied())
            .collect(),
        spearman_ratio_vs_success: rho,
    };
    let summary_path = cfg.out_dir.join("eval_summary.json");
    write_atomic(
        &summary_path,
        serde_json::to_string_pretty(&summary)
            .expect("summary serializes")
            .as_bytes(),
    )?;
    artifacts.push(summary_path);
    Ok(artifacts)
}

/// Run a subcommand `runs` times with consecutive seeds, optionally on a
/// rayon pool of `parallel` workers. Runs share nothing mutable; per-run
/// artifacts carry the seed in their file names.
pub fn run_batch(
    cfg: &RunConfig,
    runs: usize,
    parallel: usize,
    f: impl Fn(&RunConfig) -> Result<Vec<PathBuf>, CliError> + Sync,
) -> Result<Vec<PathBuf>, CliError> {
    use rayon::prelude::*;
    let configs: Vec<RunConfig> = (0..runs)
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = cfg.seed + i as u64;
            c
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?;
    let results: Vec<Result<Vec<PathBuf>, CliError>> =
        pool.install(|| configs.par_iter().map(&f).collect());
    let mut artifacts = Vec::new();
    for r in results {
        artifacts.extend(r?);
    }
    Ok(artifacts)
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match err {
            CoreError::Io(e) => CliError::Io(e.to_string()),
            CoreError::Image(e) => CliError::Io(format!("image: {e}")),
            CoreError::Csv(e) => CliError::Io(format!("csv: {e}")),
            other => CliError::Config(other.to_string()),
        }
    }
}
