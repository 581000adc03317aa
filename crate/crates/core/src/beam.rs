//! Beam-based range likelihood with rescaling into the pixel frame.
//!
//! Each beam is scored by a four-component mixture: a Gaussian around the
//! expected (ray-cast) range, a truncated exponential for unexpected
//! obstacles, a uniform over the full sensor range, and a narrow uniform
//! window around the maximum range. Measured ranges are metric; dividing by
//! the particle scale `s` projects them onto the sketch, and the mixture's
//! length parameters are reinterpreted in pixels the same way.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::SketchMap;
use crate::se2::Pose2D;

/// Mixture and sensor parameters of the beam model, in metric units.
///
/// Weights are normalized to sum to one at construction; the raw values may
/// be handed in unnormalized (the reference operating point 0.005/0.5/0.3/0.4
/// sums to 1.205 and is rescaled, preserving ratios).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BeamModelParams {
    pub sigma_z: f64,
    pub lambda: f64,
    pub delta: f64,
    pub z_max: f64,
    pub w_hit: f64,
    pub w_dyn: f64,
    pub w_max: f64,
    pub w_rnd: f64,
    pub beams_per_scan: usize,
    /// Log-likelihood assigned to particles outside the map. Very low but
    /// finite so a stray particle set can still be renormalized.
    pub out_of_map_log_likelihood: f64,
    /// Apply the change-of-variables factor 1/s per beam when weighting
    /// particles. Evaluating densities in pixel units multiplies each beam
    /// by s (a pure unit factor), which otherwise hands large-scale
    /// particles an s^beams weight advantage and sends the joint filter
    /// into scale runaway.
    pub scale_units_correction: bool,
}

impl BeamModelParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sigma_z: f64,
        lambda: f64,
        delta: f64,
        z_max: f64,
        weights: [f64; 4],
        beams_per_scan: usize,
    ) -> Result<Self> {
        if !sigma_z.is_finite() || sigma_z <= 0.0 {
            return Err(Error::validation("sigma_z must be > 0"));
        }
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::validation("lambda must be > 0"));
        }
        if !(delta > 0.0 && delta < z_max) {
            return Err(Error::validation("require 0 < delta < z_max"));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::validation("mixture weights must be >= 0"));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::validation("mixture weights must not all be zero"));
        }
        if beams_per_scan == 0 {
            return Err(Error::validation("beams_per_scan must be >= 1"));
        }
        Ok(BeamModelParams {
            sigma_z,
            lambda,
            delta,
            z_max,
            w_hit: weights[0] / sum,
            w_dyn: weights[1] / sum,
            w_max: weights[2] / sum,
            w_rnd: weights[3] / sum,
            beams_per_scan,
            out_of_map_log_likelihood: -1e4,
            scale_units_correction: true,
        })
    }

    /// The operating point used throughout the experiments: sigma_z 0.1 m,
    /// lambda 0.1, delta 0.01 m, raw weights 0.005/0.5/0.3/0.4, 10 beams.
    pub fn reference() -> Self {
        Self::new(0.1, 0.1, 0.01, 20.0, [0.005, 0.5, 0.3, 0.4], 10).expect("reference params")
    }

    pub fn weights(&self) -> [f64; 4] {
        [self.w_hit, self.w_dyn, self.w_max, self.w_rnd]
    }

    /// Reinterpret all length parameters in pixel units for a given scale:
    /// lengths divide by `s`, the exponential rate multiplies.
    pub fn in_pixel_units(&self, s: f64) -> BeamModelParams {
        BeamModelParams {
            sigma_z: self.sigma_z / s,
            lambda: self.lambda * s,
            delta: self.delta / s,
            z_max: self.z_max / s,
            ..*self
        }
    }
}

/// One range scan: `ranges[i]` was measured along `angles[i]` in the sensor
/// frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeScan {
    pub ranges: Vec<f64>,
    pub angles: Vec<f64>,
    pub timestamp: f64,
}

impl RangeScan {
    pub fn new(ranges: Vec<f64>, angles: Vec<f64>, timestamp: f64) -> Result<Self> {
        if ranges.len() != angles.len() {
            return Err(Error::validation("ranges and angles must have equal length"));
        }
        if ranges.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::validation("ranges must be finite and >= 0"));
        }
        Ok(RangeScan {
            ranges,
            angles,
            timestamp,
        })
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

pub(crate) fn gaussian_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let d = (x - mean) / sigma;
    (-0.5 * d * d).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Truncated exponential density with rate `lambda` on [0, a].
pub(crate) fn texp_pdf(z: f64, lambda: f64, a: f64) -> f64 {
    if a <= 0.0 || z < 0.0 || z > a {
        return 0.0;
    }
    // 1 - exp(-lambda a) via expm1 for small arguments
    let norm = -(-lambda * a).exp_m1();
    if norm <= 0.0 {
        return 0.0;
    }
    lambda * (-lambda * z).exp() / norm
}

/// Mixture density of a single beam: measured `z` against expected `z_hat`,
/// both in the units of `p`.
pub fn beam_density(z: f64, z_hat: f64, p: &BeamModelParams) -> f64 {
    let mut d = 0.0;
    if p.w_hit > 0.0 {
        d += p.w_hit * gaussian_pdf(z, z_hat, p.sigma_z);
    }
    if p.w_dyn > 0.0 {
        d += p.w_dyn * texp_pdf(z, p.lambda, z_hat);
    }
    if p.w_max > 0.0 && (0.0..=p.z_max).contains(&z) {
        d += p.w_max / p.z_max;
    }
    if p.w_rnd > 0.0 && z >= p.z_max - p.delta && z <= p.z_max + p.delta {
        d += p.w_rnd / (2.0 * p.delta);
    }
    d
}

/// Evenly spaced subsample of `beams` indices out of `scan_len`, by index.
/// Deterministic: the same inputs always select the same beams.
pub fn subsample_indices(scan_len: usize, beams: usize) -> Vec<usize> {
    let n = beams.min(scan_len);
    (0..n).map(|i| i * scan_len / n).collect()
}

/// Log-likelihood of a metric scan at a pixel-frame pose with scale `s`.
///
/// Expected ranges come from casting rays on the sketch out to `z_max / s`
/// pixels; measured ranges are divided by `s` and scored with the mixture in
/// pixel units. Densities are floored at 1e-300 so the result stays finite.
/// A pose outside the map gets `p.out_of_map_log_likelihood` rather than an
/// error, letting the filter recover by resampling.
pub fn scan_log_likelihood(
    scan: &RangeScan,
    pose: &Pose2D,
    s: f64,
    map: &SketchMap,
    p: &BeamModelParams,
) -> f64 {
    debug_assert!(s > 0.0);
    if !map.in_bounds(pose.x, pose.y) {
        return p.out_of_map_log_likelihood;
    }
    let pp = p.in_pixel_units(s);
    let mut ll = 0.0;
    for i in subsample_indices(scan.len(), p.beams_per_scan) {
        let z_hat = map
            .raycast((pose.x, pose.y), pose.theta + scan.angles[i], pp.z_max)
            .expect("pose bounds checked above");
        let d = beam_density(scan.ranges[i] / s, z_hat, &pp).max(1e-300);
        ll += d.ln();
    }
    ll
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{Cell, SketchMap};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Piecewise Simpson quadrature of the mixture over [0, z_max + delta],
    /// split at the discontinuities of the uniform and TEXP components.
    fn quadrature_oracle(z_hat: f64, p: &BeamModelParams) -> f64 {
        let hi = p.z_max + p.delta;
        let mut cuts = vec![0.0, z_hat, p.z_max - p.delta, p.z_max, hi];
        cuts.retain(|c| (0.0..=hi).contains(c));
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        let mut total = 0.0;
        for seg in cuts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            if b - a < 1e-15 {
                continue;
            }
            let m = 2000;
            let h = (b - a) / m as f64;
            // open evaluation just inside the segment avoids boundary spikes
            let f = |x: f64| beam_density(x.clamp(a + 1e-12, b - 1e-12), z_hat, p);
            let mut sum = f(a) + f(b);
            for i in 1..m {
                let x = a + i as f64 * h;
                sum += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
            }
            total += sum * h / 3.0;
        }
        total
    }

    #[test]
    fn pure_uniform_component() {
        let p = BeamModelParams::new(0.1, 0.1, 0.01, 20.0, [0.0, 0.0, 1.0, 0.0], 10).unwrap();
        for z in [0.0, 3.7, 19.99, 20.0] {
            assert!((beam_density(z, 5.0, &p) - 0.05).abs() < 1e-12);
        }
        assert_eq!(beam_density(20.5, 5.0, &p), 0.0);
    }

    #[test]
    fn texp_support_ends_at_expected_range() {
        let p = BeamModelParams::new(0.1, 0.1, 0.01, 20.0, [0.0, 1.0, 0.0, 0.0], 10).unwrap();
        assert_eq!(beam_density(12.0, 10.0, &p), 0.0);
        assert!(beam_density(8.0, 10.0, &p) > 0.0);
        // degenerate expected range disables the component entirely
        assert_eq!(beam_density(0.0, 0.0, &p), 0.0);
    }

    #[test]
    fn reference_weights_are_normalized() {
        let p = BeamModelParams::reference();
        let sum: f64 = p.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((p.w_hit - 0.005 / 1.205).abs() < 1e-12);
        assert!((p.w_rnd - 0.4 / 1.205).abs() < 1e-12);
    }

    #[test]
    fn reference_params_integrate_to_one() {
        let p = BeamModelParams::reference();
        let integral = quadrature_oracle(10.0, &p);
        assert!(
            (integral - 1.0).abs() <= 0.02,
            "mixture integral = {integral}"
        );
    }

    #[test]
    fn random_valid_params_integrate_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20 {
            let z_max = rng.gen_range(5.0..30.0);
            let sigma_z = rng.gen_range(0.02..0.3);
            let p = BeamModelParams::new(
                sigma_z,
                rng.gen_range(0.01..1.0),
                rng.gen_range(0.005..z_max / 20.0),
                z_max,
                [
                    rng.gen_range(0.01..1.0),
                    rng.gen_range(0.01..1.0),
                    rng.gen_range(0.01..1.0),
                    rng.gen_range(0.01..1.0),
                ],
                10,
            )
            .unwrap();
            // keep the Gaussian mass well inside the integration window
            let z_hat = rng.gen_range(5.0 * sigma_z..z_max - 5.0 * sigma_z);
            let integral = quadrature_oracle(z_hat, &p);
            assert!(
                (integral - 1.0).abs() <= 0.02,
                "trial {trial}: integral = {integral}"
            );
        }
    }

    #[test]
    fn density_is_nonnegative_everywhere() {
        let p = BeamModelParams::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let z = rng.gen_range(0.0..25.0);
            let z_hat = rng.gen_range(0.0..25.0);
            let d = beam_density(z, z_hat, &p);
            assert!(d >= 0.0 && d.is_finite());
        }
    }

    proptest! {
        #[test]
        fn density_nonnegative_for_random_params(
            sigma in 0.01f64..0.5,
            lambda in 0.01f64..2.0,
            zmax in 5.0f64..40.0,
            z in 0.0f64..45.0,
            zhat in 0.0f64..45.0,
            w0 in 0.0f64..1.0,
            w1 in 0.0f64..1.0,
            w2 in 0.0f64..1.0,
            w3 in 0.01f64..1.0,
        ) {
            let p = BeamModelParams::new(sigma, lambda, 0.01, zmax, [w0, w1, w2, w3], 5).unwrap();
            let d = beam_density(z, zhat, &p);
            prop_assert!(d >= 0.0);
            prop_assert!(d.is_finite());
        }
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(BeamModelParams::new(0.0, 0.1, 0.01, 20.0, [1.0; 4], 10).is_err());
        assert!(BeamModelParams::new(0.1, 0.0, 0.01, 20.0, [1.0; 4], 10).is_err());
        assert!(BeamModelParams::new(0.1, 0.1, 25.0, 20.0, [1.0; 4], 10).is_err());
        assert!(BeamModelParams::new(0.1, 0.1, 0.01, 20.0, [0.0; 4], 10).is_err());
        assert!(BeamModelParams::new(0.1, 0.1, 0.01, 20.0, [-0.1, 1.0, 1.0, 1.0], 10).is_err());
    }

    #[test]
    fn subsampling_is_even_and_deterministic() {
        let idx = subsample_indices(360, 10);
        assert_eq!(idx, vec![0, 36, 72, 108, 144, 180, 216, 252, 288, 324]);
        assert_eq!(subsample_indices(360, 10), idx);
        assert_eq!(subsample_indices(5, 10), vec![0, 1, 2, 3, 4]);
        assert_eq!(subsample_indices(0, 10), Vec::<usize>::new());
    }

    fn empty_map(w: u32, h: u32) -> SketchMap {
        SketchMap::from_cells(w, h, vec![Cell::Free; (w * h) as usize]).unwrap()
    }

    #[test]
    fn homogeneous_max_range_beams() {
        let map = empty_map(100, 100);
        let p = BeamModelParams::reference();
        let s = 0.5;
        let n_beams = 36;
        let angles: Vec<f64> = (0..n_beams)
            .map(|i| -1.5 + i as f64 * 3.0 / (n_beams - 1) as f64)
            .collect();
        let scan = RangeScan::new(vec![p.z_max; n_beams], angles, 0.0).unwrap();
        let pose = Pose2D::new(50.0, 50.0, 0.3);
        let ll = scan_log_likelihood(&scan, &pose, s, &map, &p);
        let pp = p.in_pixel_units(s);
        let per_beam = beam_density(p.z_max / s, pp.z_max, &pp).max(1e-300).ln();
        let expected = p.beams_per_scan as f64 * per_beam;
        assert!(
            (ll - expected).abs() < 1e-9,
            "ll = {ll}, expected {expected}"
        );
    }

    /// Render a noise-free scan from the map itself (independent of the
    /// likelihood path: plain raycasts, no mixture involved).
    fn render_scan(map: &SketchMap, pose: &Pose2D, s: f64, z_max: f64, n: usize) -> RangeScan {
        let angles: Vec<f64> = (0..n)
            .map(|i| -std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::PI / n as f64)
            .collect();
        let ranges = angles
            .iter()
            .map(|a| {
                let px = map
                    .raycast((pose.x, pose.y), pose.theta + a, z_max / s)
                    .unwrap();
                px * s
            })
            .collect();
        RangeScan::new(ranges, angles, 0.0).unwrap()
    }

    fn boxed_map(w: u32, h: u32) -> SketchMap {
        let mut cells = vec![Cell::Free; (w * h) as usize];
        for x in 0..w {
            cells[x as usize] = Cell::Occupied;
            cells[((h - 1) * w + x) as usize] = Cell::Occupied;
        }
        for y in 0..h {
            cells[(y * w) as usize] = Cell::Occupied;
            cells[(y * w + w - 1) as usize] = Cell::Occupied;
        }
        SketchMap::from_cells(w, h, cells).unwrap()
    }

    #[test]
    fn true_pose_beats_perturbed_pose() {
        let map = boxed_map(80, 60);
        let p = BeamModelParams::reference();
        let s = 1.0;
        let pose = Pose2D::new(30.0, 25.0, 0.4);
        let scan = render_scan(&map, &pose, s, p.z_max, 60);
        let ll_true = scan_log_likelihood(&scan, &pose, s, &map, &p);
        let shifted = Pose2D::new(pose.x + 5.0 * p.sigma_z / s, pose.y, pose.theta);
        let ll_shifted = scan_log_likelihood(&scan, &shifted, s, &map, &p);
        assert!(
            ll_true >= ll_shifted,
            "true {ll_true} < shifted {ll_shifted}"
        );
    }

    #[test]
    fn scale_equivariance_preserves_argmax() {
        let map = boxed_map(80, 60);
        let p = BeamModelParams::reference();
        let s = 0.1;
        let true_pose = Pose2D::new(42.0, 31.0, -0.7);
        let scan = render_scan(&map, &true_pose, s, p.z_max, 60);

        let grid: Vec<Pose2D> = (0..10)
            .flat_map(|ix| {
                (0..8).map(move |iy| {
                    Pose2D::new(10.0 + 7.0 * ix as f64, 5.0 + 7.0 * iy as f64, -0.7)
                })
            })
            .collect();
        let argmax = |scan: &RangeScan, s: f64| {
            grid.iter()
                .enumerate()
                .map(|(i, q)| (i, scan_log_likelihood(scan, q, s, &map, &p)))
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap()
                .0
        };
        let base = argmax(&scan, s);

        let c = 2.5;
        let scaled = RangeScan::new(
            scan.ranges.iter().map(|r| r * c).collect(),
            scan.angles.clone(),
            scan.timestamp,
        )
        .unwrap();
        let rescaled = argmax(&scaled, s * c);
        assert_eq!(base, rescaled, "argmax moved under joint range/scale scaling");
    }

    #[test]
    fn out_of_map_pose_gets_floor() {
        let map = empty_map(10, 10);
        let p = BeamModelParams::reference();
        let scan = RangeScan::new(vec![1.0; 10], vec![0.0; 10], 0.0).unwrap();
        let ll = scan_log_likelihood(&scan, &Pose2D::new(-5.0, 3.0, 0.0), 0.1, &map, &p);
        assert_eq!(ll, p.out_of_map_log_likelihood);
    }

    #[test]
    fn scan_requires_matching_lengths() {
        assert!(RangeScan::new(vec![1.0, 2.0], vec![0.0], 0.0).is_err());
        assert!(RangeScan::new(vec![-1.0], vec![0.0], 0.0).is_err());
    }
}
