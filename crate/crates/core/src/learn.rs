//! Learning the beam-model parameters from paired (measured, expected)
//! ranges: grid search for the best per-sketch scale, then EM over the
//! four-component mixture.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::beam::{beam_density, gaussian_pdf, texp_pdf, BeamModelParams};
use crate::error::{Error, Result};
use crate::map::SketchMap;
use crate::se2::Pose2D;

/// One calibration measurement: a metric range `z` taken at a known pose on
/// a sketch, with the ray-cast expected range in pixels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub sketch_id: String,
    pub pose: Pose2D,
    pub beam_angle: f64,
    pub z: f64,
    pub z_hat_px: f64,
}

/// Raw CSV row: `sketch_id,pose_x,pose_y,pose_theta,beam_angle,z`.
#[derive(Debug, Clone, Deserialize)]
pub struct CalibrationRow {
    pub sketch_id: String,
    pub pose_x: f64,
    pub pose_y: f64,
    pub pose_theta: f64,
    pub beam_angle: f64,
    pub z: f64,
}

pub fn read_calibration_csv(reader: impl Read) -> Result<Vec<CalibrationRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for row in rdr.deserialize() {
        let row: CalibrationRow = row?;
        if row.z < 0.0 || !row.z.is_finite() {
            return Err(Error::validation("calibration range must be finite and >= 0"));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_calibration_csv_file(path: impl AsRef<Path>) -> Result<Vec<CalibrationRow>> {
    read_calibration_csv(std::fs::File::open(path)?)
}

/// Fill in expected ranges by casting each row's beam on its sketch.
/// `max_range_px` caps the raycast (typically `z_max / s_guess`).
pub fn attach_expected_ranges<'a>(
    rows: &[CalibrationRow],
    map_for: impl Fn(&str) -> Option<&'a SketchMap>,
    max_range_px: f64,
) -> Result<Vec<CalibrationSample>> {
    rows.iter()
        .map(|row| {
            let map = map_for(&row.sketch_id).ok_or_else(|| {
                Error::validation(format!("no sketch map for id '{}'", row.sketch_id))
            })?;
            let pose = Pose2D::new(row.pose_x, row.pose_y, row.pose_theta);
            let z_hat_px =
                map.raycast((pose.x, pose.y), pose.theta + row.beam_angle, max_range_px)?;
            Ok(CalibrationSample {
                sketch_id: row.sketch_id.clone(),
                pose,
                beam_angle: row.beam_angle,
                z: row.z,
                z_hat_px,
            })
        })
        .collect()
}

/// Grid search for the scale that maximizes the joint beam likelihood of the
/// samples. Ties resolve to the smallest scale.
pub fn best_scale_grid(
    samples: &[CalibrationSample],
    grid: &[f64],
    p0: &BeamModelParams,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::validation("best_scale_grid needs samples"));
    }
    if grid.is_empty() {
        return Err(Error::validation("best_scale_grid needs a non-empty grid"));
    }
    if grid.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::validation("scale grid values must be > 0"));
    }
    let mut best_s = f64::NAN;
    let mut best_ll = f64::NEG_INFINITY;
    for &s in grid {
        let pp = p0.in_pixel_units(s);
        let ll: f64 = samples
            .iter()
            .map(|c| beam_density(c.z / s, c.z_hat_px, &pp).max(1e-300).ln())
            .sum();
        if ll > best_ll || (ll == best_ll && s < best_s) {
            best_ll = ll;
            best_s = s;
        }
    }
    Ok(best_s)
}

/// Outcome of an EM fit: the parameters plus the per-iteration
/// log-likelihood trace and any anomalies encountered.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub params: BeamModelParams,
    pub iterations: usize,
    pub log_likelihood: Vec<f64>,
    pub warnings: Vec<String>,
    pub n_samples: usize,
}

impl FitReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit report serializes")
    }
}

const WEIGHT_FLOOR: f64 = 1e-6;
const SIGMA_FLOOR: f64 = 1e-4;
const MAX_ITERS: usize = 200;
const LL_GAIN_TOL: f64 = 1e-6;

/// Maximum-likelihood mixture fit by EM on `(z, z_hat)` pairs, both in
/// meters (pixel expectations multiplied by the sketch scale beforehand).
///
/// Per iteration: component responsibilities (E), then closed-form weight
/// and sigma updates and a 1D Newton solve for the truncated-exponential
/// rate (M). `delta` and `z_max` are sensor constants and stay fixed.
pub fn fit_beam_params(samples: &[(f64, f64)], init: &BeamModelParams) -> Result<FitReport> {
    if samples.is_empty() {
        return Err(Error::validation("fit_beam_params needs samples"));
    }
    let n = samples.len();
    let mut warnings = Vec::new();
    if n < 100 {
        warnings.push(format!("only {n} samples; fits below 100 are unreliable"));
    }

    let mut p = *init;
    let mut history: Vec<f64> = Vec::new();
    let mut responsibilities = vec![[0.0f64; 4]; n];
    let mut iterations = 0;

    for iter in 0..MAX_ITERS {
        iterations = iter + 1;
        // E step
        let mut ll = 0.0;
        for (i, &(z, z_hat)) in samples.iter().enumerate() {
            let f = [
                p.w_hit * gaussian_pdf(z, z_hat, p.sigma_z),
                p.w_dyn * texp_pdf(z, p.lambda, z_hat),
                if (0.0..=p.z_max).contains(&z) {
                    p.w_max / p.z_max
                } else {
                    0.0
                },
                if z >= p.z_max - p.delta && z <= p.z_max + p.delta {
                    p.w_rnd / (2.0 * p.delta)
                } else {
                    0.0
                },
            ];
            let total: f64 = f.iter().sum::<f64>().max(1e-300);
            for k in 0..4 {
                responsibilities[i][k] = f[k] / total;
            }
            ll += total.ln();
        }
        let converged = history
            .last()
            .map(|prev| ll - prev < LL_GAIN_TOL)
            .unwrap_or(false);
        history.push(ll);
        if converged {
            break;
        }

        // M step: weights
        let mut nk = [0.0f64; 4];
        for r in &responsibilities {
            for k in 0..4 {
                nk[k] += r[k];
            }
        }
        let mut w = [0.0f64; 4];
        for k in 0..4 {
            w[k] = nk[k] / n as f64;
            if w[k] < WEIGHT_FLOOR {
                let name = ["hit", "dyn", "max", "rnd"][k];
                let msg = format!("component '{name}' starved; weight floored");
                if !warnings.contains(&msg) {
                    warnings.push(msg);
                }
                w[k] = WEIGHT_FLOOR;
            }
        }
        let wsum: f64 = w.iter().sum();

        // M step: sigma of the hit component
        let r_hit_sum = nk[0];
        let sigma = if r_hit_sum > 0.0 {
            let ssq: f64 = samples
                .iter()
                .zip(&responsibilities)
                .map(|(&(z, z_hat), r)| r[0] * (z - z_hat).powi(2))
                .sum();
            (ssq / r_hit_sum).sqrt().max(SIGMA_FLOOR)
        } else {
            p.sigma_z
        };

        // M step: truncated-exponential rate
        let lambda = fit_truncated_exp_rate(
            samples,
            responsibilities.iter().map(|r| r[1]),
            p.lambda,
        )
        .unwrap_or(p.lambda);

        p = BeamModelParams {
            sigma_z: sigma,
            lambda,
            w_hit: w[0] / wsum,
            w_dyn: w[1] / wsum,
            w_max: w[2] / wsum,
            w_rnd: w[3] / wsum,
            ..p
        };
    }

    Ok(FitReport {
        params: p,
        iterations,
        log_likelihood: history,
        warnings,
        n_samples: n,
    })
}

/// Responsibility-weighted ML estimate of the truncated-exponential rate:
/// safeguarded Newton on the score
/// `g'(l) = sum r_i [1/l - z_i - a_i e^{-l a_i} / (1 - e^{-l a_i})]`.
fn fit_truncated_exp_rate(
    samples: &[(f64, f64)],
    resp: impl Iterator<Item = f64>,
    init: f64,
) -> Option<f64> {
    let data: Vec<(f64, f64, f64)> = samples
        .iter()
        .zip(resp)
        .filter(|(&(z, a), r)| *r > 0.0 && a > 0.0 && z <= a)
        .map(|(&(z, a), r)| (z, a, r))
        .collect();
    let total_r: f64 = data.iter().map(|d| d.2).sum();
    if total_r < 1e-12 {
        return None;
    }

    let score = |l: f64| -> (f64, f64) {
        let mut g = 0.0;
        let mut h = 0.0;
        for &(z, a, r) in &data {
            let e = (-l * a).exp();
            let denom = -(-l * a).exp_m1(); // 1 - e^{-l a}
            g += r * (1.0 / l - z - a * e / denom);
            h += r * (-1.0 / (l * l) + a * a * e / (denom * denom));
        }
        (g, h)
    };

    let (mut lo, mut hi) = (1e-8, 1e8);
    let mut l = init.clamp(lo, hi);
    for _ in 0..100 {
        let (g, h) = score(l);
        if g.abs() < 1e-10 * total_r {
            return Some(l);
        }
        if g > 0.0 {
            lo = l;
        } else {
            hi = l;
        }
        let newton = if h < 0.0 { l - g / h } else { f64::NAN };
        l = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_pose() -> Pose2D {
        Pose2D::new(0.0, 0.0, 0.0)
    }

    fn synthetic_scale_samples(true_s: f64, n: usize) -> Vec<CalibrationSample> {
        // expected pixel ranges spread over the sensor's useful band
        (0..n)
            .map(|i| {
                let z_hat_px = 40.0 + 160.0 * (i as f64 / n as f64);
                CalibrationSample {
                    sketch_id: "s0".into(),
                    pose: sample_pose(),
                    beam_angle: 0.0,
                    z: z_hat_px * true_s,
                    z_hat_px,
                }
            })
            .collect()
    }

    fn tight_params() -> BeamModelParams {
        BeamModelParams::new(0.02, 0.1, 0.01, 20.0, [0.005, 0.5, 0.3, 0.4], 10).unwrap()
    }

    #[test]
    fn grid_search_recovers_generating_scale() {
        let samples = synthetic_scale_samples(0.1, 60);
        let grid: Vec<f64> = (0..=30).map(|i| 0.05 + 0.005 * i as f64).collect();
        let best = best_scale_grid(&samples, &grid, &tight_params()).unwrap();
        assert!((best - 0.1).abs() < 1e-12, "best scale {best}");
    }

    #[test]
    fn single_sample_single_grid_value() {
        let samples = synthetic_scale_samples(0.2, 1);
        assert_eq!(
            best_scale_grid(&samples, &[0.37], &tight_params()).unwrap(),
            0.37
        );
    }

    #[test]
    fn argmax_index_equivariant_under_joint_rescaling() {
        let samples = synthetic_scale_samples(0.1, 40);
        let grid: Vec<f64> = (0..=30).map(|i| 0.05 + 0.005 * i as f64).collect();
        let p0 = tight_params();
        let best = best_scale_grid(&samples, &grid, &p0).unwrap();
        let idx = grid.iter().position(|&s| s == best).unwrap();

        let doubled: Vec<CalibrationSample> = samples
            .iter()
            .map(|c| CalibrationSample {
                z: 2.0 * c.z,
                ..c.clone()
            })
            .collect();
        let grid2: Vec<f64> = grid.iter().map(|s| 2.0 * s).collect();
        let best2 = best_scale_grid(&doubled, &grid2, &p0).unwrap();
        let idx2 = grid2.iter().position(|&s| s == best2).unwrap();
        assert_eq!(idx, idx2);
    }

    #[test]
    fn grid_search_invariant_to_weight_scaling() {
        // the constructor normalizes, so uniformly scaled raw weights give
        // the same distribution and the same argmax
        let samples = synthetic_scale_samples(0.1, 40);
        let grid: Vec<f64> = (0..=30).map(|i| 0.05 + 0.005 * i as f64).collect();
        let a = BeamModelParams::new(0.02, 0.1, 0.01, 20.0, [0.005, 0.5, 0.3, 0.4], 10).unwrap();
        let b = BeamModelParams::new(0.02, 0.1, 0.01, 20.0, [0.015, 1.5, 0.9, 1.2], 10).unwrap();
        assert_eq!(
            best_scale_grid(&samples, &grid, &a).unwrap(),
            best_scale_grid(&samples, &grid, &b).unwrap()
        );
    }

    #[test]
    fn rejects_empty_inputs() {
        assert!(best_scale_grid(&[], &[0.1], &tight_params()).is_err());
        assert!(
            best_scale_grid(&synthetic_scale_samples(0.1, 5), &[], &tight_params()).is_err()
        );
        assert!(fit_beam_params(&[], &tight_params()).is_err());
    }

    /// Draw (z, z_hat) pairs from the mixture itself (generative oracle).
    fn draw_mixture(p: &BeamModelParams, n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z_hat = rng.gen_range(2.0..15.0);
                let u: f64 = rng.gen();
                let z = if u < p.w_hit {
                    loop {
                        let z = z_hat + p.sigma_z * rng.sample::<f64, _>(rand_distr::StandardNormal);
                        if z >= 0.0 {
                            break z;
                        }
                    }
                } else if u < p.w_hit + p.w_dyn {
                    // inverse CDF of the truncated exponential on [0, z_hat]
                    let v: f64 = rng.gen();
                    -(1.0 - v * (1.0 - (-p.lambda * z_hat).exp())).ln() / p.lambda
                } else if u < p.w_hit + p.w_dyn + p.w_max {
                    rng.gen_range(0.0..p.z_max)
                } else {
                    rng.gen_range(p.z_max - p.delta..p.z_max + p.delta)
                };
                (z, z_hat)
            })
            .collect()
    }

    #[test]
    fn em_roundtrip_recovers_generating_parameters() {
        let truth = BeamModelParams::reference();
        let samples = draw_mixture(&truth, 10_000, 77);
        let init = BeamModelParams::new(0.3, 0.3, truth.delta, truth.z_max, [1.0; 4], 10).unwrap();
        let report = fit_beam_params(&samples, &init).unwrap();
        let p = report.params;

        let got = p.weights();
        let want = truth.weights();
        for k in 0..4 {
            assert!(
                (got[k] - want[k]).abs() <= 0.05,
                "weight {k}: got {}, want {}",
                got[k],
                want[k]
            );
        }
        assert!(
            (p.sigma_z - truth.sigma_z).abs() / truth.sigma_z <= 0.2,
            "sigma_z {} vs {}",
            p.sigma_z,
            truth.sigma_z
        );
        assert!(
            (p.lambda - truth.lambda).abs() / truth.lambda <= 0.2,
            "lambda {} vs {}",
            p.lambda,
            truth.lambda
        );
        let wsum: f64 = p.weights().iter().sum();
        assert!((wsum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn em_log_likelihood_is_monotone() {
        let truth = BeamModelParams::reference();
        let samples = draw_mixture(&truth, 3_000, 5);
        let init = BeamModelParams::new(0.5, 0.5, truth.delta, truth.z_max, [1.0; 4], 10).unwrap();
        let report = fit_beam_params(&samples, &init).unwrap();
        for pair in report.log_likelihood.windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-9,
                "log-likelihood decreased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn pure_hit_data_concentrates_on_hit_component() {
        let samples: Vec<(f64, f64)> = (0..500)
            .map(|i| {
                let z_hat = 2.0 + 0.02 * i as f64;
                (z_hat, z_hat)
            })
            .collect();
        let init = BeamModelParams::reference();
        let report = fit_beam_params(&samples, &init).unwrap();
        assert!(
            report.params.w_hit > 0.95,
            "w_hit = {}",
            report.params.w_hit
        );
        assert!(report.params.sigma_z <= 1e-3, "sigma_z = {}", report.params.sigma_z);
        assert!(!report.warnings.is_empty(), "starvation should be flagged");
    }

    #[test]
    fn small_sample_warning() {
        let truth = BeamModelParams::reference();
        let samples = draw_mixture(&truth, 20, 9);
        let report = fit_beam_params(&samples, &truth).unwrap();
        assert!(report.warnings.iter().any(|w| w.contains("20 samples")));
    }

    #[test]
    fn csv_roundtrip_and_expected_ranges() {
        let csv_text = "\
sketch_id,pose_x,pose_y,pose_theta,beam_angle,z
s0,32.0,32.0,0.0,0.0,1.5
s0,32.0,32.0,0.0,1.5707963,0.9
";
        let rows = read_calibration_csv(csv_text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);

        // a 64x64 box map: wall cells at the border
        let mut cells = vec![crate::map::Cell::Free; 64 * 64];
        for i in 0..64 {
            cells[i] = crate::map::Cell::Occupied;
            cells[63 * 64 + i] = crate::map::Cell::Occupied;
            cells[i * 64] = crate::map::Cell::Occupied;
            cells[i * 64 + 63] = crate::map::Cell::Occupied;
        }
        let map = SketchMap::from_cells(64, 64, cells).unwrap();
        let samples =
            attach_expected_ranges(&rows, |id| (id == "s0").then_some(&map), 200.0).unwrap();
        assert!((samples[0].z_hat_px - 31.0).abs() < 1e-9);
        assert!((samples[1].z_hat_px - 31.0).abs() < 1e-9);
        assert!(
            attach_expected_ranges(&rows, |_| None::<&SketchMap>, 200.0).is_err()
        );
    }
}
