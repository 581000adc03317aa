//! Overlay frames: sketch pixels, particle cloud and the current estimate.

use std::path::Path;

use image::{Rgb, RgbImage};

use sketchloc::filter::ParticleSet;
use sketchloc::map::{Cell, SketchMap};
use sketchloc::se2::Pose2D;

use crate::CliError;

const PARTICLE: Rgb<u8> = Rgb([220, 40, 40]);
const ESTIMATE: Rgb<u8> = Rgb([20, 160, 40]);

/// Draw the map with particles (red) and the estimate (green cross with a
/// heading tick).
pub fn overlay(map: &SketchMap, particles: &ParticleSet, estimate: &Pose2D) -> RgbImage {
    let (w, h) = (map.width(), map.height());
    let mut img = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let shade = match map.cell(x, y) {
                Cell::Occupied => Rgb([0, 0, 0]),
                Cell::Free => Rgb([255, 255, 255]),
                Cell::Unknown => Rgb([190, 190, 190]),
            };
            img.put_pixel(x, y, shade);
        }
    }
    for p in &particles.particles {
        put(&mut img, p.pose.x, p.pose.y, PARTICLE);
    }
    for d in -4i32..=4 {
        put(&mut img, estimate.x + d as f64, estimate.y, ESTIMATE);
        put(&mut img, estimate.x, estimate.y + d as f64, ESTIMATE);
    }
    let (sin, cos) = estimate.theta.sin_cos();
    for t in 0..10 {
        put(
            &mut img,
            estimate.x + cos * t as f64,
            estimate.y + sin * t as f64,
            ESTIMATE,
        );
    }
    img
}

fn put(img: &mut RgbImage, x: f64, y: f64, color: Rgb<u8>) {
    if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
    }
    img.save(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
