//! Room-level evaluation: success tables over (route, sketch) groups and the
//! aspect-ratio-difference analysis.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{MapMetadata, PixelRect, SketchMap};
use crate::se2::Pose2D;

/// Named room rectangles on a sketch, in pixel coordinates. Overlaps are
/// permitted; lookups resolve to the lowest id in sort order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoomRegions {
    pub rooms: BTreeMap<String, PixelRect>,
}

impl From<&MapMetadata> for RoomRegions {
    fn from(meta: &MapMetadata) -> Self {
        RoomRegions {
            rooms: meta.rooms.clone(),
        }
    }
}

/// The room containing (x, y), if any; ties resolve by sorted room id.
pub fn locate_room<'a>(pose: &Pose2D, regions: &'a RoomRegions) -> Option<&'a str> {
    regions
        .rooms
        .iter()
        .find(|(_, rect)| rect.contains(pose.x, pose.y))
        .map(|(id, _)| id.as_str())
}

/// Outcome of one localization run, as consumed by the evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub route: String,
    pub sketch_id: String,
    pub target_room: String,
    pub final_pose: Pose2D,
    pub final_scale: f64,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<Pose2D>>,
}

impl RunResult {
    /// Judge success: the final estimate must locate in the target room.
    pub fn judge(mut self, regions: &RoomRegions) -> Self {
        self.success = locate_room(&self.final_pose, regions) == Some(self.target_room.as_str());
        self
    }
}

/// Route-by-sketch success matrix with weighted totals.
#[derive(Debug, Clone, Serialize)]
pub struct SuccessTable {
    pub routes: Vec<String>,
    pub sketches: Vec<String>,
    /// counts[route][sketch] = (successes, runs)
    pub counts: Vec<Vec<(u32, u32)>>,
    /// per-sketch success percentage, weighted by run counts
    pub sketch_totals: Vec<f64>,
    /// per-route success percentage over all sketches
    pub route_totals: Vec<f64>,
    /// overall success percentage, runs-weighted
    pub total: f64,
}

/// Aggregate run results into per-route percentages and weighted totals.
pub fn success_table(results: &[RunResult]) -> Result<SuccessTable> {
    if results.is_empty() {
        return Err(Error::validation("success_table needs at least one run"));
    }
    let mut routes: Vec<String> = results.iter().map(|r| r.route.clone()).collect();
    routes.sort();
    routes.dedup();
    let mut sketches: Vec<String> = results.iter().map(|r| r.sketch_id.clone()).collect();
    sketches.sort();
    sketches.dedup();

    let mut counts = vec![vec![(0u32, 0u32); sketches.len()]; routes.len()];
    for r in results {
        let i = routes.binary_search(&r.route).expect("route present");
        let j = sketches.binary_search(&r.sketch_id).expect("sketch present");
        counts[i][j].1 += 1;
        if r.success {
            counts[i][j].0 += 1;
        }
    }

    let pct = |succ: u32, runs: u32| 100.0 * succ as f64 / runs as f64;
    let sketch_totals: Vec<f64> = (0..sketches.len())
        .map(|j| {
            let (s, n) = counts
                .iter()
                .fold((0u32, 0u32), |acc, row| (acc.0 + row[j].0, acc.1 + row[j].1));
            if n > 0 {
                pct(s, n)
            } else {
                0.0
            }
        })
        .collect();
    let route_totals: Vec<f64> = counts
        .iter()
        .map(|row| {
            let (s, n) = row
                .iter()
                .fold((0u32, 0u32), |acc, c| (acc.0 + c.0, acc.1 + c.1));
            if n > 0 {
                pct(s, n)
            } else {
                0.0
            }
        })
        .collect();
    let (s, n) = counts.iter().flatten().fold((0u32, 0u32), |acc, c| {
        (acc.0 + c.0, acc.1 + c.1)
    });
    Ok(SuccessTable {
        routes,
        sketches,
        counts,
        sketch_totals,
        route_totals,
        total: pct(s, n),
    })
}

impl SuccessTable {
    /// CSV in the route-by-sketch layout: one row per route, one column per
    /// sketch, a totals row and a per-route totals column.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "route");
        for s in &self.sketches {
            let _ = write!(out, ",{s}");
        }
        let _ = writeln!(out, ",route_total");
        for (i, route) in self.routes.iter().enumerate() {
            let _ = write!(out, "{route}");
            for j in 0..self.sketches.len() {
                let (succ, runs) = self.counts[i][j];
                if runs == 0 {
                    let _ = write!(out, ",");
                } else {
                    let _ = write!(out, ",{:.1}", 100.0 * succ as f64 / runs as f64);
                }
            }
            let _ = writeln!(out, ",{:.1}", self.route_totals[i]);
        }
        let _ = write!(out, "total");
        for t in &self.sketch_totals {
            let _ = write!(out, ",{t:.1}");
        }
        let _ = writeln!(out, ",{:.1}", self.total);
        out
    }
}

/// One sketch's distance from the reference map in bounding-box aspect
/// ratio, paired with its observed success rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioPoint {
    pub sketch_id: String,
    pub ratio_difference: f64,
    pub success_pct: f64,
}

/// Compute |aspect(sketch) - aspect(reference)| per sketch and the Spearman
/// rank correlation between ratio difference and success rate. The series
/// comes back sorted by ratio difference.
pub fn ratio_vs_success(
    sketches: &[(String, &SketchMap, f64)],
    reference: &SketchMap,
) -> Result<(Vec<RatioPoint>, f64)> {
    if sketches.len() < 2 {
        return Err(Error::validation("ratio analysis needs at least 2 sketches"));
    }
    let ref_ratio = reference.aspect_ratio()?;
    let mut series: Vec<RatioPoint> = sketches
        .iter()
        .map(|(id, map, success)| {
            Ok(RatioPoint {
                sketch_id: id.clone(),
                ratio_difference: (map.aspect_ratio()? - ref_ratio).abs(),
                success_pct: *success,
            })
        })
        .collect::<Result<_>>()?;
    series.sort_by(|a, b| a.ratio_difference.partial_cmp(&b.ratio_difference).unwrap());
    let xs: Vec<f64> = series.iter().map(|p| p.ratio_difference).collect();
    let ys: Vec<f64> = series.iter().map(|p| p.success_pct).collect();
    Ok((series, spearman(&xs, &ys)))
}

/// Average ranks (ties share the mean rank).
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks; tie-safe).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx <= 0.0 || vy <= 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::Cell;

    fn regions(rects: &[(&str, [f64; 4])]) -> RoomRegions {
        RoomRegions {
            rooms: rects
                .iter()
                .map(|(id, r)| (id.to_string(), PixelRect::new(r[0], r[1], r[2], r[3]).unwrap()))
                .collect(),
        }
    }

    #[test]
    fn locate_room_center_and_outside() {
        let rr = regions(&[("a", [0.0, 0.0, 10.0, 10.0]), ("b", [20.0, 0.0, 30.0, 10.0])]);
        assert_eq!(locate_room(&Pose2D::new(5.0, 5.0, 0.0), &rr), Some("a"));
        assert_eq!(locate_room(&Pose2D::new(25.0, 5.0, 0.0), &rr), Some("b"));
        assert_eq!(locate_room(&Pose2D::new(15.0, 5.0, 0.0), &rr), None);
    }

    #[test]
    fn locate_room_overlap_tie_rule() {
        let rr = regions(&[
            ("7", [0.0, 0.0, 20.0, 20.0]),
            ("3", [10.0, 10.0, 30.0, 30.0]),
        ]);
        // (15, 15) is inside both; sorted id "3" wins
        assert_eq!(locate_room(&Pose2D::new(15.0, 15.0, 0.0), &rr), Some("3"));
    }

    fn run(route: &str, seed: u64, success: bool) -> RunResult {
        RunResult {
            seed,
            route: route.to_string(),
            sketch_id: "s0".to_string(),
            target_room: "1".to_string(),
            final_pose: Pose2D::new(0.0, 0.0, 0.0),
            final_scale: 0.05,
            success,
            trace: None,
        }
    }

    #[test]
    fn table_all_successful() {
        let mut results = Vec::new();
        for r in 0..10 {
            for s in 0..10 {
                results.push(run(&format!("r{r:02}"), s, true));
            }
        }
        let table = success_table(&results).unwrap();
        assert_eq!(table.total, 100.0);
        assert!(table.route_totals.iter().all(|&t| t == 100.0));
    }

    #[test]
    fn table_matches_reference_layout_total() {
        // ten routes of 10 runs; three routes at 7/10, 8/10, 8/10 -> 93%
        let per_route = [10, 10, 10, 10, 10, 10, 10, 7, 8, 8];
        let mut results = Vec::new();
        for (r, &succ) in per_route.iter().enumerate() {
            for s in 0..10 {
                results.push(run(&format!("r{r:02}"), s as u64, (s as u32) < succ));
            }
        }
        let table = success_table(&results).unwrap();
        assert!((table.total - 93.0).abs() < 1e-9, "total {}", table.total);
    }

    #[test]
    fn table_single_route_failure() {
        let results: Vec<RunResult> = (0..10).map(|s| run("r0", s, false)).collect();
        let table = success_table(&results).unwrap();
        assert_eq!(table.total, 0.0);
        let csv = table.to_csv();
        assert!(csv.starts_with("route,s0,route_total"));
        assert!(csv.contains("total,0.0"));
    }

    #[test]
    fn judge_uses_target_room() {
        let rr = regions(&[("1", [0.0, 0.0, 10.0, 10.0]), ("2", [10.0, 0.0, 20.0, 10.0])]);
        let inside = RunResult {
            final_pose: Pose2D::new(4.0, 4.0, 0.0),
            ..run("r", 0, false)
        }
        .judge(&rr);
        assert!(inside.success);
        let wrong_room = RunResult {
            final_pose: Pose2D::new(14.0, 4.0, 0.0),
            ..run("r", 0, true)
        }
        .judge(&rr);
        assert!(!wrong_room.success);
    }

    fn box_sketch(w: usize, h: usize) -> SketchMap {
        let mut cells = vec![Cell::Free; 400 * 300];
        cells[400 + 1] = Cell::Occupied;
        cells[h * 400 + w] = Cell::Occupied;
        SketchMap::from_cells(400, 300, cells).unwrap()
    }

    #[test]
    fn ratio_series_constructed_pair() {
        let reference = box_sketch(300, 150); // ratio 2.0
        let same = box_sketch(300, 150);
        let other = box_sketch(240, 200); // ratio 1.2
        let items = vec![
            ("same".to_string(), &same, 90.0),
            ("other".to_string(), &other, 40.0),
        ];
        let (series, _) = ratio_vs_success(&items, &reference).unwrap();
        assert_eq!(series[0].sketch_id, "same");
        assert!(series[0].ratio_difference.abs() < 1e-12);
        assert!((series[1].ratio_difference - 0.8).abs() < 1e-12);
    }

    #[test]
    fn declining_success_gives_negative_spearman() {
        let reference = box_sketch(300, 150);
        let sketches: Vec<SketchMap> = [(300, 150), (280, 160), (260, 180), (240, 200), (220, 210)]
            .iter()
            .map(|&(w, h)| box_sketch(w, h))
            .collect();
        let success = [95.0, 85.0, 60.0, 30.0, 10.0];
        let items: Vec<(String, &SketchMap, f64)> = sketches
            .iter()
            .enumerate()
            .map(|(i, m)| (format!("v{i}"), m, success[i]))
            .collect();
        let (series, rho) = ratio_vs_success(&items, &reference).unwrap();
        assert!(rho <= -0.99, "spearman {rho}");
        for w in series.windows(2) {
            assert!(w[0].ratio_difference <= w[1].ratio_difference);
        }
    }

    #[test]
    fn spearman_handles_ties() {
        let xs = [1.0, 2.0, 2.0, 3.0];
        let ys = [4.0, 3.0, 2.0, 1.0];
        let rho = spearman(&xs, &ys);
        assert!((-1.0..-0.9).contains(&rho), "rho {rho}");
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
    }
}
