//! Built-in synthetic environments and hand-drawn-style sketch rendering.
//!
//! Two environments mirror the experimental setup: a single room with a few
//! interior features, and a five-room apartment joined by a hallway. The
//! sketch renderer re-draws a world's walls as pen strokes with a chosen
//! anisotropic stretch, standing in for a human's distorted drawing of the
//! same space.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::map::{Cell, MapMetadata, PixelRect, SketchMap};
use crate::sim::{MetricRect, WorldMap};

/// Door waypoints of one room: a point inside the room in front of its
/// door, and the matching point out in the hallway.
#[derive(Debug, Clone, Copy)]
pub struct DoorAnchors {
    pub inside: (f64, f64),
    pub hall: (f64, f64),
}

/// A synthetic world plus everything the evaluation protocol needs to know
/// about it: room rectangles (metric) and per-room route anchor points.
#[derive(Debug, Clone)]
pub struct BuiltWorld {
    pub world: WorldMap,
    pub rooms: BTreeMap<String, MetricRect>,
    /// Rooms of the single-room world have no doors.
    pub door_anchors: BTreeMap<String, DoorAnchors>,
    /// Representative free point inside each room.
    pub room_centers: BTreeMap<String, (f64, f64)>,
    /// Suggested start position (metric).
    pub start_hint: (f64, f64),
}

struct GridBuilder {
    width: u32,
    height: u32,
    resolution: f64,
    cells: Vec<Cell>,
}

impl GridBuilder {
    fn new(w_m: f64, h_m: f64, resolution: f64) -> Self {
        let width = (w_m / resolution).round() as u32;
        let height = (h_m / resolution).round() as u32;
        GridBuilder {
            width,
            height,
            resolution,
            cells: vec![Cell::Free; (width * height) as usize],
        }
    }

    /// Fill a metric rectangle with occupied cells.
    fn block(&mut self, x0: f64, y0: f64, x1: f64, y1: f64) {
        let cx0 = (x0 / self.resolution).floor().max(0.0) as u32;
        let cy0 = (y0 / self.resolution).floor().max(0.0) as u32;
        let cx1 = ((x1 / self.resolution).ceil() as u32).min(self.width);
        let cy1 = ((y1 / self.resolution).ceil() as u32).min(self.height);
        for y in cy0..cy1 {
            for x in cx0..cx1 {
                self.cells[(y * self.width + x) as usize] = Cell::Occupied;
            }
        }
    }

    fn border(&mut self, thickness: f64) {
        let w = self.width as f64 * self.resolution;
        let h = self.height as f64 * self.resolution;
        self.block(0.0, 0.0, w, thickness);
        self.block(0.0, h - thickness, w, h);
        self.block(0.0, 0.0, thickness, h);
        self.block(w - thickness, 0.0, w, h);
    }

    fn build(self) -> WorldMap {
        let grid = SketchMap::from_cells(self.width, self.height, self.cells)
            .expect("builder produces a valid grid");
        WorldMap::new(grid, self.resolution, (0.0, 0.0)).expect("positive resolution")
    }
}

const WALL: f64 = 0.1;

/// Single 10 x 8 m room with a pillar and two wall stubs; the proof-of-
/// concept environment. One room region covering the interior.
pub fn room_world() -> BuiltWorld {
    let res = 0.05;
    let mut g = GridBuilder::new(10.0, 8.0, res);
    g.border(WALL);
    // pillar
    g.block(2.8, 2.4, 3.4, 3.0);
    // stub from the south wall
    g.block(6.4, 0.0, 6.5, 2.5);
    // stub from the east wall
    g.block(7.0, 5.4, 10.0, 5.5);
    let world = g.build();

    let mut rooms = BTreeMap::new();
    rooms.insert(
        "room".to_string(),
        MetricRect {
            x0: 0.1,
            y0: 0.1,
            x1: 9.9,
            y1: 7.9,
        },
    );
    let mut room_centers = BTreeMap::new();
    room_centers.insert("room".to_string(), (5.0, 4.0));
    BuiltWorld {
        world,
        rooms,
        door_anchors: BTreeMap::new(),
        room_centers,
        start_hint: (8.6, 1.2),
    }
}

/// The four proof-of-concept paths through the room, all starting at the
/// lower-right corner.
pub fn room_paths() -> Vec<Vec<(f64, f64)>> {
    let s = (8.6, 1.2);
    vec![
        vec![s, (8.6, 4.2), (1.2, 4.2), (1.2, 1.2)],
        vec![s, (8.6, 4.2), (4.8, 4.2), (4.8, 6.8), (1.2, 6.8)],
        vec![s, (8.6, 4.2), (1.5, 6.5)],
        vec![s, (8.6, 3.2), (5.0, 3.2), (5.0, 6.8), (8.3, 6.8)],
    ]
}

/// Five-room apartment (16 x 10 m): three rooms south of a central hallway,
/// two north, each with a door onto the hallway and a distinguishing box of
/// furniture in some rooms.
pub fn apartment_world() -> BuiltWorld {
    let res = 0.05;
    let mut g = GridBuilder::new(16.0, 10.0, res);
    g.border(WALL);

    // hallway walls with door gaps; hallway band is y in (4.3, 5.7)
    let door = |c: f64| (c - 0.4, c + 0.4);
    let south_doors = [2.8, 8.1, 13.4];
    let north_doors = [4.1, 12.1];
    let mut x = 0.0;
    for &c in &south_doors {
        let (lo, hi) = door(c);
        g.block(x, 4.2, lo, 4.3);
        x = hi;
    }
    g.block(x, 4.2, 16.0, 4.3);
    x = 0.0;
    for &c in &north_doors {
        let (lo, hi) = door(c);
        g.block(x, 5.7, lo, 5.8);
        x = hi;
    }
    g.block(x, 5.7, 16.0, 5.8);

    // room dividers
    g.block(5.3, 0.0, 5.4, 4.3); // rooms 1|2
    g.block(10.6, 0.0, 10.7, 4.3); // rooms 2|3
    g.block(7.9, 5.7, 8.1, 10.0); // rooms 4|5

    // furniture boxes to break symmetry
    g.block(1.0, 1.0, 1.6, 1.6);
    g.block(14.0, 2.6, 14.6, 3.2);
    g.block(9.0, 8.0, 9.6, 8.6);

    let world = g.build();

    let mut rooms = BTreeMap::new();
    let mut centers = BTreeMap::new();
    let mut anchors = BTreeMap::new();
    let mut add = |id: &str,
                   rect: MetricRect,
                   center: (f64, f64),
                   inside: (f64, f64),
                   hall: (f64, f64)| {
        rooms.insert(id.to_string(), rect);
        centers.insert(id.to_string(), center);
        anchors.insert(id.to_string(), DoorAnchors { inside, hall });
    };
    add(
        "1",
        MetricRect { x0: 0.1, y0: 0.1, x1: 5.3, y1: 4.2 },
        (2.6, 2.0),
        (2.8, 3.6),
        (2.8, 5.0),
    );
    add(
        "2",
        MetricRect { x0: 5.4, y0: 0.1, x1: 10.6, y1: 4.2 },
        (8.0, 2.0),
        (8.1, 3.6),
        (8.1, 5.0),
    );
    add(
        "3",
        MetricRect { x0: 10.7, y0: 0.1, x1: 15.9, y1: 4.2 },
        (13.4, 2.0),
        (13.4, 3.6),
        (13.4, 5.0),
    );
    add(
        "4",
        MetricRect { x0: 0.1, y0: 5.8, x1: 7.9, y1: 9.9 },
        (4.1, 7.8),
        (4.1, 6.4),
        (4.1, 5.0),
    );
    add(
        "5",
        MetricRect { x0: 8.1, y0: 5.8, x1: 15.9, y1: 9.9 },
        (12.1, 7.8),
        (12.1, 6.4),
        (12.1, 5.0),
    );

    BuiltWorld {
        world,
        rooms,
        door_anchors: anchors,
        room_centers: centers,
        start_hint: (2.6, 2.0),
    }
}

/// Waypoints for a room-to-room navigation task: room center, through the
/// door, along the hallway, through the target door, to the target center.
pub fn route_waypoints(bw: &BuiltWorld, from: &str, to: &str) -> Result<Vec<(f64, f64)>> {
    let center_a = bw
        .room_centers
        .get(from)
        .ok_or_else(|| Error::validation(format!("unknown room '{from}'")))?;
    let center_b = bw
        .room_centers
        .get(to)
        .ok_or_else(|| Error::validation(format!("unknown room '{to}'")))?;
    let a = bw
        .door_anchors
        .get(from)
        .ok_or_else(|| Error::validation(format!("room '{from}' has no door")))?;
    let b = bw
        .door_anchors
        .get(to)
        .ok_or_else(|| Error::validation(format!("room '{to}' has no door")))?;
    Ok(vec![*center_a, a.inside, a.hall, b.hall, b.inside, *center_b])
}

/// How a sketch is drawn from a world: anisotropic stretch (the deliberate
/// deformation), pen stroke radius and page margin.
#[derive(Debug, Clone, Copy)]
pub struct SketchStyle {
    /// Pixels per world cell along x.
    pub stretch_x: f64,
    /// Pixels per world cell along y.
    pub stretch_y: f64,
    pub stroke_radius: f64,
    pub margin_px: u32,
}

impl Default for SketchStyle {
    fn default() -> Self {
        SketchStyle {
            stretch_x: 1.0,
            stretch_y: 1.0,
            stroke_radius: 1.2,
            margin_px: 12,
        }
    }
}

/// A rendered sketch: the grayscale page, its metadata sidecar (rooms mapped
/// into pixel coordinates), and the world-to-pixel transform used to draw it.
#[derive(Debug, Clone)]
pub struct RenderedSketch {
    pub image: image::GrayImage,
    pub meta: MapMetadata,
    resolution: f64,
    style: SketchStyle,
}

impl RenderedSketch {
    pub fn world_to_px(&self, x_m: f64, y_m: f64) -> (f64, f64) {
        (
            x_m / self.resolution * self.style.stretch_x + self.style.margin_px as f64,
            y_m / self.resolution * self.style.stretch_y + self.style.margin_px as f64,
        )
    }

    /// True meters-per-pixel along x and y (they differ under anisotropic
    /// stretch; a perfect scale estimate lies between them).
    pub fn true_scales(&self) -> (f64, f64) {
        (
            self.resolution / self.style.stretch_x,
            self.resolution / self.style.stretch_y,
        )
    }

    pub fn sketch_map(&self) -> Result<SketchMap> {
        let mut map = SketchMap::from_gray(
            self.image.width(),
            self.image.height(),
            self.image.as_raw(),
            self.meta.occupied_threshold,
            self.meta.unknown_levels,
        )?;
        map.unknown_blocks_rays = self.meta.unknown_blocks_rays;
        Ok(map)
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.image
            .write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)?;
        Ok(buf)
    }
}

/// Redraw a world's occupied cells as pen strokes under the given stretch.
pub fn sketch_from_world(bw: &BuiltWorld, style: &SketchStyle) -> RenderedSketch {
    let grid = &bw.world.grid;
    let m = style.margin_px as f64;
    let width = (grid.width() as f64 * style.stretch_x + 2.0 * m).ceil() as u32;
    let height = (grid.height() as f64 * style.stretch_y + 2.0 * m).ceil() as u32;
    let mut image = image::GrayImage::from_pixel(width, height, image::Luma([255u8]));

    let r = style.stroke_radius;
    let ri = r.ceil() as i64;
    for cy in 0..grid.height() {
        for cx in 0..grid.width() {
            if grid.cell(cx, cy) != Cell::Occupied {
                continue;
            }
            let px = (cx as f64 + 0.5) * style.stretch_x + m;
            let py = (cy as f64 + 0.5) * style.stretch_y + m;
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    if (dx * dx + dy * dy) as f64 > r * r {
                        continue;
                    }
                    let x = px.round() as i64 + dx;
                    let y = py.round() as i64 + dy;
                    if x >= 0 && y >= 0 && (x as u32) < width && (y as u32) < height {
                        image.put_pixel(x as u32, y as u32, image::Luma([0u8]));
                    }
                }
            }
        }
    }

    let mut meta = MapMetadata::default();
    let to_px = |x_m: f64, y_m: f64| {
        (
            x_m / bw.world.resolution * style.stretch_x + m,
            y_m / bw.world.resolution * style.stretch_y + m,
        )
    };
    for (id, rect) in &bw.rooms {
        let (x0, y0) = to_px(rect.x0, rect.y0);
        let (x1, y1) = to_px(rect.x1, rect.y1);
        meta.rooms.insert(
            id.clone(),
            PixelRect::new(x0, y0, x1, y1).expect("room rectangles are non-degenerate"),
        );
    }

    RenderedSketch {
        image,
        meta,
        resolution: bw.world.resolution,
        style: *style,
    }
}
