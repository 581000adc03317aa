//! Raster sketch maps: occupancy classification and ray casting in pixel
//! coordinates.
//!
//! A sketch is whatever raster the user produced (scanned pen drawing,
//! exported occupancy grid); we only assume darker pixels mean obstacles.
//! All queries work in continuous pixel coordinates so particles are not
//! snapped to the grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Occupancy class of one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Occupied,
    Free,
    Unknown,
}

/// Axis-aligned rectangle in pixel coordinates, half-open on the far edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelRect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite()) {
            return Err(Error::validation("rectangle coordinates must be finite"));
        }
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::validation(format!(
                "degenerate rectangle ({x0},{y0})-({x1},{y1})"
            )));
        }
        Ok(PixelRect { x0, y0, x1, y1 })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

/// Raster occupancy map in pixel units: the localization frame.
#[derive(Debug, Clone)]
pub struct SketchMap {
    width: u32,
    height: u32,
    cells: Vec<Cell>,
    occupied_threshold: u8,
    /// Treat `Unknown` cells as obstacles for rays. Off by default: the white
    /// paper around a sketch is free space, but occupancy-grid replays may
    /// want unexplored cells to block.
    pub unknown_blocks_rays: bool,
}

/// Default binarization level; pen strokes are near-black.
pub const DEFAULT_OCCUPIED_THRESHOLD: u8 = 127;

/// Classify raster bytes (PGM P5 or PNG, color converted to luma) into a
/// sketch map. A pixel is `Occupied` iff its gray level is at or below
/// `occupied_threshold` and outside the optional `unknown_levels` band.
pub fn load_map(
    image_bytes: &[u8],
    occupied_threshold: u8,
    unknown_levels: Option<(u8, u8)>,
) -> Result<SketchMap> {
    let img = image::load_from_memory(image_bytes)?;
    let gray = img.to_luma8();
    SketchMap::from_gray(
        gray.width(),
        gray.height(),
        gray.as_raw(),
        occupied_threshold,
        unknown_levels,
    )
}

impl SketchMap {
    pub fn from_gray(
        width: u32,
        height: u32,
        gray: &[u8],
        occupied_threshold: u8,
        unknown_levels: Option<(u8, u8)>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("map must have non-zero dimensions"));
        }
        if gray.len() != (width as usize) * (height as usize) {
            return Err(Error::validation(format!(
                "pixel buffer length {} does not match {}x{}",
                gray.len(),
                width,
                height
            )));
        }
        let cells = gray
            .iter()
            .map(|&g| classify(g, occupied_threshold, unknown_levels))
            .collect();
        Ok(SketchMap {
            width,
            height,
            cells,
            occupied_threshold,
            unknown_blocks_rays: false,
        })
    }

    /// Build directly from cells (synthetic worlds, tests).
    pub fn from_cells(width: u32, height: u32, cells: Vec<Cell>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("map must have non-zero dimensions"));
        }
        if cells.len() != (width as usize) * (height as usize) {
            return Err(Error::validation("cell buffer does not match dimensions"));
        }
        Ok(SketchMap {
            width,
            height,
            cells,
            occupied_threshold: DEFAULT_OCCUPIED_THRESHOLD,
            unknown_blocks_rays: false,
        })
    }

    pub fn from_file(path: impl AsRef<Path>, meta: &MapMetadata) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut map = load_map(&bytes, meta.occupied_threshold, meta.unknown_levels)?;
        map.unknown_blocks_rays = meta.unknown_blocks_rays;
        Ok(map)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn occupied_threshold(&self) -> u8 {
        self.occupied_threshold
    }

    pub fn cell(&self, x: u32, y: u32) -> Cell {
        self.cells[y as usize * self.width as usize + x as usize]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == Cell::Occupied).count()
    }

    pub fn in_bounds(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }

    fn blocks(&self, ix: i64, iy: i64) -> bool {
        let c = self.cells[iy as usize * self.width as usize + ix as usize];
        c == Cell::Occupied || (self.unknown_blocks_rays && c == Cell::Unknown)
    }

    /// Distance in pixels from `origin` along `angle` to the first blocking
    /// cell, or `max_range` if the ray leaves the map or exceeds the range.
    ///
    /// Grid traversal (DDA) with a continuous origin; the returned value is
    /// the fractional entry distance into the blocking cell.
    pub fn raycast(&self, origin: (f64, f64), angle: f64, max_range: f64) -> Result<f64> {
        let (ox, oy) = origin;
        if !self.in_bounds(ox, oy) {
            return Err(Error::OutOfBounds {
                x: ox,
                y: oy,
                width: self.width,
                height: self.height,
            });
        }
        debug_assert!(max_range > 0.0);
        let mut ix = ox.floor() as i64;
        let mut iy = oy.floor() as i64;
        if self.blocks(ix, iy) {
            return Ok(0.0);
        }
        let (dy, dx) = angle.sin_cos();
        let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
        let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
        let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
        let mut t_max_x = if dx > 0.0 {
            ((ix + 1) as f64 - ox) / dx
        } else if dx < 0.0 {
            (ix as f64 - ox) / dx
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if dy > 0.0 {
            ((iy + 1) as f64 - oy) / dy
        } else if dy < 0.0 {
            (iy as f64 - oy) / dy
        } else {
            f64::INFINITY
        };

        loop {
            let t;
            if t_max_x <= t_max_y {
                t = t_max_x;
                ix += step_x;
                t_max_x += t_delta_x;
            } else {
                t = t_max_y;
                iy += step_y;
                t_max_y += t_delta_y;
            }
            if t > max_range {
                return Ok(max_range);
            }
            if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
                return Ok(max_range);
            }
            if self.blocks(ix, iy) {
                return Ok(t);
            }
        }
    }

    /// Length/width ratio (>= 1) of the tight bounding box of occupied cells.
    pub fn aspect_ratio(&self) -> Result<f64> {
        let mut min_x = u32::MAX;
        let mut min_y = u32::MAX;
        let mut max_x = 0u32;
        let mut max_y = 0u32;
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.cell(x, y) == Cell::Occupied {
                    any = true;
                    min_x = min_x.min(x);
                    min_y = min_y.min(y);
                    max_x = max_x.max(x);
                    max_y = max_y.max(y);
                }
            }
        }
        if !any {
            return Err(Error::EmptyMap);
        }
        let w = (max_x - min_x + 1) as f64;
        let h = (max_y - min_y + 1) as f64;
        Ok(if w >= h { w / h } else { h / w })
    }
}

fn classify(gray: u8, threshold: u8, unknown: Option<(u8, u8)>) -> Cell {
    if let Some((lo, hi)) = unknown {
        if gray >= lo && gray <= hi {
            return Cell::Unknown;
        }
    }
    if gray <= threshold {
        Cell::Occupied
    } else {
        Cell::Free
    }
}

/// Free-function alias mirroring `SketchMap::aspect_ratio`.
pub fn map_aspect_ratio(map: &SketchMap) -> Result<f64> {
    map.aspect_ratio()
}

/// Plain key-value sidecar describing how to interpret a map image and,
/// optionally, the room rectangles used for evaluation:
///
/// ```text
/// occupied_threshold = 127
/// unknown_levels = 200,210
/// room.1 = 10,10,120,180
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct MapMetadata {
    pub occupied_threshold: u8,
    pub unknown_levels: Option<(u8, u8)>,
    pub unknown_blocks_rays: bool,
    pub rooms: BTreeMap<String, PixelRect>,
}

impl Default for MapMetadata {
    fn default() -> Self {
        MapMetadata {
            occupied_threshold: DEFAULT_OCCUPIED_THRESHOLD,
            unknown_levels: None,
            unknown_blocks_rays: false,
            rooms: BTreeMap::new(),
        }
    }
}

impl MapMetadata {
    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = MapMetadata::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Metadata(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Metadata(format!("line {}: {}", lineno + 1, what));
            if let Some(room_id) = key.strip_prefix("room.") {
                let nums: Vec<f64> = value
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("room rectangle must be x0,y0,x1,y1"))?;
                if nums.len() != 4 {
                    return Err(bad("room rectangle must have 4 coordinates"));
                }
                let rect = PixelRect::new(nums[0], nums[1], nums[2], nums[3])?;
                meta.rooms.insert(room_id.trim().to_string(), rect);
            } else {
                match key {
                    "occupied_threshold" => {
                        meta.occupied_threshold =
                            value.parse().map_err(|_| bad("bad occupied_threshold"))?;
                    }
                    "unknown_levels" => {
                        let parts: Vec<u8> = value
                            .split(',')
                            .map(|v| v.trim().parse::<u8>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| bad("unknown_levels must be lo,hi"))?;
                        if parts.len() != 2 || parts[0] > parts[1] {
                            return Err(bad("unknown_levels must be lo,hi with lo <= hi"));
                        }
                        meta.unknown_levels = Some((parts[0], parts[1]));
                    }
                    "unknown_blocks_rays" => {
                        meta.unknown_blocks_rays =
                            value.parse().map_err(|_| bad("bad unknown_blocks_rays"))?;
                    }
                    _ => return Err(bad(&format!("unknown key '{key}'"))),
                }
            }
        }
        Ok(meta)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "occupied_threshold = {}", self.occupied_threshold);
        if let Some((lo, hi)) = self.unknown_levels {
            let _ = writeln!(out, "unknown_levels = {lo},{hi}");
        }
        if self.unknown_blocks_rays {
            let _ = writeln!(out, "unknown_blocks_rays = true");
        }
        for (id, r) in &self.rooms {
            let _ = writeln!(out, "room.{id} = {},{},{},{}", r.x0, r.y0, r.x1, r.y1);
        }
        out
    }
}
