//! Shared harness for the integration and acceptance suites: writes synth
//! sketches to disk, builds run configs, and drives the subcommands.

#![allow(dead_code)]
#![allow(clippy::field_reassign_with_default, clippy::too_many_arguments)]

use std::path::{Path, PathBuf};

use sketchloc::map::{Cell, SketchMap};
use sketchloc::synth::{self, BuiltWorld, RenderedSketch, SketchStyle};
use sketchloc_cli::commands::{self, LocalizeResult};
use sketchloc_cli::config::{RunConfig, SketchRef};

pub fn write_sketch(
    dir: &Path,
    id: &str,
    bw: &BuiltWorld,
    style: &SketchStyle,
) -> (PathBuf, PathBuf, RenderedSketch) {
    std::fs::create_dir_all(dir).unwrap();
    let sketch = synth::sketch_from_world(bw, style);
    let map_path = dir.join(format!("{id}.png"));
    std::fs::write(&map_path, sketch.png_bytes().unwrap()).unwrap();
    let meta_path = dir.join(format!("{id}.meta"));
    std::fs::write(&meta_path, sketch.meta.to_text()).unwrap();
    (map_path, meta_path, sketch)
}

/// Save an occupancy grid as a grayscale PNG (occupied black, free white).
pub fn write_grid_png(grid: &SketchMap, path: &Path) {
    let mut img = image::GrayImage::from_pixel(grid.width(), grid.height(), image::Luma([255u8]));
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            if grid.cell(x, y) == Cell::Occupied {
                img.put_pixel(x, y, image::Luma([0u8]));
            }
        }
    }
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    img.save(path).unwrap();
}

pub fn sim_config(
    out_dir: &Path,
    world: &str,
    waypoints: &[(f64, f64)],
    seed: u64,
) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.out_dir = out_dir.to_path_buf();
    cfg.sim.world = world.to_string();
    cfg.sim.waypoints = waypoints.iter().map(|&(x, y)| [x, y]).collect();
    cfg
}

pub struct LocalizeSetup<'a> {
    pub map_path: &'a Path,
    pub meta_path: &'a Path,
    pub log_path: &'a Path,
    pub out_dir: &'a Path,
    pub init_center_px: (f64, f64),
    pub seed: u64,
    pub route: String,
    pub sketch_id: String,
    pub target_room: Option<String>,
}

pub fn localize_config(s: &LocalizeSetup) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = s.seed;
    cfg.out_dir = s.out_dir.to_path_buf();
    cfg.map.path = s.map_path.to_path_buf();
    cfg.map.metadata = Some(s.meta_path.to_path_buf());
    cfg.log.path = s.log_path.to_path_buf();
    cfg.init.center = Some([s.init_center_px.0, s.init_center_px.1]);
    cfg.init.half_extent = 75.0;
    cfg.localize.route = s.route.clone();
    cfg.localize.sketch_id = s.sketch_id.clone();
    cfg.localize.target_room = s.target_room.clone();
    cfg
}

/// Simulate one run and replay it: returns the parsed localize result.
pub fn simulate_and_localize(
    root: &Path,
    world: &str,
    waypoints: &[(f64, f64)],
    sketch: &RenderedSketch,
    map_path: &Path,
    meta_path: &Path,
    results_dir: &Path,
    seed: u64,
    route: &str,
    sketch_id: &str,
    target_room: Option<&str>,
) -> LocalizeResult {
    let log_dir = root.join("logs").join(format!("{route}_{seed}"));
    let sim_cfg = sim_config(&log_dir, world, waypoints, seed);
    let artifacts = commands::cmd_simulate(&sim_cfg).unwrap();
    let log_path = artifacts[0].clone();

    let start = waypoints[0];
    let center = sketch.world_to_px(start.0, start.1);
    let cfg = localize_config(&LocalizeSetup {
        map_path,
        meta_path,
        log_path: &log_path,
        out_dir: results_dir,
        init_center_px: center,
        seed,
        route: route.to_string(),
        sketch_id: sketch_id.to_string(),
        target_room: target_room.map(|s| s.to_string()),
    });
    let artifacts = commands::cmd_localize(&cfg).unwrap();
    let json = std::fs::read_to_string(&artifacts[1]).unwrap();
    serde_json::from_str(&json).unwrap()
}

pub fn sketch_ref(id: &str, map: &Path, meta: &Path) -> SketchRef {
    SketchRef {
        id: id.to_string(),
        map: map.to_path_buf(),
        metadata: Some(meta.to_path_buf()),
    }
}
