//! Sequential importance resampling over (pose, scale) with KLD-adaptive
//! particle counts.
//!
//! Weights are kept in log space throughout: a scan multiplies ten or more
//! beam densities together and linear weights underflow long before the set
//! degenerates in any meaningful sense.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::beam::{scan_log_likelihood, BeamModelParams, RangeScan};
use crate::error::{Error, Result};
use crate::map::{PixelRect, SketchMap};
use crate::se2::{propagate, sample_scale, wrap_angle, MotionNoiseParams, OdomIncrement, Pose2D};

/// One hypothesis: a pixel-frame pose, a local scale in meters/pixel, and a
/// log-domain importance weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledParticle {
    pub pose: Pose2D,
    pub scale: f64,
    pub log_weight: f64,
}

/// A weighted particle set. `normalized` means exp(log_weight) sums to one.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub particles: Vec<ScaledParticle>,
    pub normalized: bool,
}

impl ParticleSet {
    pub fn new(particles: Vec<ScaledParticle>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::validation("particle set must be non-empty"));
        }
        Ok(ParticleSet {
            particles,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Shift log weights so the linear weights sum to one.
    pub fn normalize(&mut self) -> Result<()> {
        let lse = log_sum_exp(self.particles.iter().map(|p| p.log_weight));
        if !lse.is_finite() {
            let max = self
                .particles
                .iter()
                .map(|p| p.log_weight)
                .fold(f64::NEG_INFINITY, f64::max);
            return Err(Error::DegenerateParticleSet {
                diagnostics: format!(
                    "all {} weights underflowed (max log weight {max:.3e})",
                    self.particles.len()
                ),
            });
        }
        for p in &mut self.particles {
            p.log_weight -= lse;
        }
        self.normalized = true;
        Ok(())
    }

    /// Linear weights (only meaningful on a normalized set).
    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight.exp()).collect()
    }

    /// Effective sample size 1 / sum(w^2) of a normalized set.
    pub fn effective_sample_size(&self) -> f64 {
        debug_assert!(self.normalized);
        let sum_sq: f64 = self
            .particles
            .iter()
            .map(|p| p.log_weight.exp().powi(2))
            .sum();
        if sum_sq > 0.0 {
            1.0 / sum_sq
        } else {
            0.0
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Uniform initialization region: a pixel rectangle, a heading interval and
/// a scale interval. Zero-width angle/scale intervals collapse to a point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InitRegion {
    pub rect: PixelRect,
    pub theta_range: (f64, f64),
    pub scale_range: (f64, f64),
}

impl InitRegion {
    pub fn validate(&self) -> Result<()> {
        if self.theta_range.1 < self.theta_range.0 {
            return Err(Error::validation("theta range must have lo <= hi"));
        }
        if !(self.scale_range.0 > 0.0 && self.scale_range.1 >= self.scale_range.0) {
            return Err(Error::validation("scale range must satisfy 0 < lo <= hi"));
        }
        Ok(())
    }

    pub fn validate_against(&self, map: &SketchMap) -> Result<()> {
        self.validate()?;
        let r = &self.rect;
        if r.x0 < 0.0 || r.y0 < 0.0 || r.x1 > map.width() as f64 || r.y1 > map.height() as f64 {
            return Err(Error::validation(format!(
                "init region ({},{})-({},{}) exceeds map bounds {}x{}",
                r.x0,
                r.y0,
                r.x1,
                r.y1,
                map.width(),
                map.height()
            )));
        }
        Ok(())
    }
}

/// Draw `n` equally weighted particles uniformly over the region.
pub fn initialize<R: Rng + ?Sized>(
    region: &InitRegion,
    n: usize,
    rng: &mut R,
) -> Result<ParticleSet> {
    region.validate()?;
    if n == 0 {
        return Err(Error::validation("particle count must be >= 1"));
    }
    let w = -(n as f64).ln();
    let particles = (0..n)
        .map(|_| {
            let x = rng.gen_range(region.rect.x0..region.rect.x1);
            let y = rng.gen_range(region.rect.y0..region.rect.y1);
            let theta = if region.theta_range.1 > region.theta_range.0 {
                rng.gen_range(region.theta_range.0..region.theta_range.1)
            } else {
                region.theta_range.0
            };
            let scale = if region.scale_range.1 > region.scale_range.0 {
                rng.gen_range(region.scale_range.0..region.scale_range.1)
            } else {
                region.scale_range.0
            };
            ScaledParticle {
                pose: Pose2D::new(x, y, theta),
                scale,
                log_weight: w,
            }
        })
        .collect();
    let mut set = ParticleSet::new(particles)?;
    set.normalized = true;
    Ok(set)
}

/// Advance every particle: one Brownian scale step, then the motion proposal
/// using the particle's pre-update scale. Weights are untouched.
pub fn predict<R: Rng + ?Sized>(
    set: &mut ParticleSet,
    u: &OdomIncrement,
    mp: &MotionNoiseParams,
    rng: &mut R,
) -> Result<()> {
    for p in &mut set.particles {
        let s_old = p.scale;
        p.scale = sample_scale(s_old, mp.sigma_s, mp.s_min, mp.s_max, rng);
        p.pose = propagate(&p.pose, s_old, u, mp, rng)?;
    }
    Ok(())
}

/// Score every particle against a scan and renormalize.
///
/// The importance weight is the scan log-likelihood; with
/// `bp.scale_units_correction` it additionally carries the per-beam 1/s
/// change-of-variables factor so particles with different scales compete in
/// consistent units.
pub fn update_weights(
    set: &mut ParticleSet,
    scan: &RangeScan,
    map: &SketchMap,
    bp: &BeamModelParams,
) -> Result<()> {
    let n_beams = crate::beam::subsample_indices(scan.len(), bp.beams_per_scan).len() as f64;
    for p in &mut set.particles {
        p.log_weight += scan_log_likelihood(scan, &p.pose, p.scale, map, bp);
        if bp.scale_units_correction {
            p.log_weight -= n_beams * p.scale.ln();
        }
    }
    set.normalized = false;
    set.normalize()
}

/// Systematic (low-variance) resampling: same count out, equal weights, and
/// every input particle receives floor/ceil of `n * w` copies.
pub fn resample_low_variance<R: Rng + ?Sized>(set: &ParticleSet, rng: &mut R) -> ParticleSet {
    assert!(set.normalized, "resampling requires a normalized set");
    let n = set.len();
    let weights = set.weights();
    let step = 1.0 / n as f64;
    let mut u = rng.gen_range(0.0..step);
    let mut cum = weights[0];
    let mut i = 0;
    let w_out = -(n as f64).ln();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        while u > cum && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        out.push(ScaledParticle {
            log_weight: w_out,
            ..set.particles[i]
        });
        u += step;
    }
    ParticleSet {
        particles: out,
        normalized: true,
    }
}

/// KLD-sampling configuration: state-space bin sizes and the bound on the
/// divergence between the sampled and the discretized target distribution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KldConfig {
    /// Bin extents (x px, y px, theta rad, scale m/px).
    pub bin_size: (f64, f64, f64, f64),
    pub epsilon: f64,
    pub z_quantile: f64,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for KldConfig {
    fn default() -> Self {
        KldConfig {
            bin_size: (10.0, 10.0, 0.35, 0.05),
            epsilon: 0.05,
            z_quantile: 2.326,
            n_min: 100,
            n_max: 5000,
        }
    }
}

impl KldConfig {
    pub fn validate(&self) -> Result<()> {
        let (bx, by, bt, bs) = self.bin_size;
        if !(bx > 0.0 && by > 0.0 && bt > 0.0 && bs > 0.0) {
            return Err(Error::validation("KLD bin sizes must be positive"));
        }
        if !(self.epsilon > 0.0 && self.z_quantile > 0.0) {
            return Err(Error::validation("KLD epsilon and z must be positive"));
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(Error::validation("require 1 <= n_min <= n_max"));
        }
        Ok(())
    }
}

/// Number of samples needed so the KL divergence of the binned sample
/// distribution from the target stays below epsilon with the configured
/// confidence, given `k` occupied bins. Clamped to `[n_min, n_max]`.
pub fn kld_required_n(k: usize, cfg: &KldConfig) -> usize {
    if k <= 1 {
        return cfg.n_min;
    }
    let km1 = (k - 1) as f64;
    let x = 2.0 / (9.0 * km1);
    let bound = km1 / (2.0 * cfg.epsilon) * (1.0 - x + x.sqrt() * cfg.z_quantile).powi(3);
    (bound.ceil() as usize).clamp(cfg.n_min, cfg.n_max)
}

fn bin_key(p: &ScaledParticle, cfg: &KldConfig) -> (i64, i64, i64, i64) {
    let (bx, by, bt, bs) = cfg.bin_size;
    (
        (p.pose.x / bx).floor() as i64,
        (p.pose.y / by).floor() as i64,
        (p.pose.theta / bt).floor() as i64,
        (p.scale / bs).floor() as i64,
    )
}

/// Weight-proportional resampling that stops as soon as the drawn count
/// covers the KLD bound for the number of occupied bins seen so far.
pub fn kld_resample<R: Rng + ?Sized>(
    set: &ParticleSet,
    cfg: &KldConfig,
    rng: &mut R,
) -> ParticleSet {
    assert!(set.normalized, "resampling requires a normalized set");
    let weights = set.weights();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let total = acc.max(f64::MIN_POSITIVE);

    let mut bins: HashSet<(i64, i64, i64, i64)> = HashSet::new();
    let mut out = Vec::with_capacity(cfg.n_min);
    loop {
        let u = rng.gen_range(0.0..total);
        let idx = match cumulative.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => (i + 1).min(weights.len() - 1),
            Err(i) => i.min(weights.len() - 1),
        };
        let p = set.particles[idx];
        bins.insert(bin_key(&p, cfg));
        out.push(p);
        let required = kld_required_n(bins.len(), cfg);
        if out.len() >= required {
            break;
        }
    }
    let w_out = -(out.len() as f64).ln();
    for p in &mut out {
        p.log_weight = w_out;
    }
    ParticleSet {
        particles: out,
        normalized: true,
    }
}

/// Covariance diagnostics of the weighted state estimate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CovSummary {
    pub var_x: f64,
    pub var_y: f64,
    pub cov_xy: f64,
    pub theta_circ_std: f64,
    pub var_scale: f64,
}

/// Weighted state estimate of a normalized particle set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Estimate {
    pub pose: Pose2D,
    pub scale: f64,
    pub cov: CovSummary,
    pub ess: f64,
    pub n_particles: usize,
}

/// Weighted mean over x, y and scale, circular weighted mean over theta.
pub fn estimate(set: &ParticleSet) -> Estimate {
    assert!(set.normalized, "estimate requires a normalized set");
    let mut mx = 0.0;
    let mut my = 0.0;
    let mut ms = 0.0;
    let mut sin = 0.0;
    let mut cos = 0.0;
    for p in &set.particles {
        let w = p.log_weight.exp();
        mx += w * p.pose.x;
        my += w * p.pose.y;
        ms += w * p.scale;
        sin += w * p.pose.theta.sin();
        cos += w * p.pose.theta.cos();
    }
    let theta = sin.atan2(cos);
    let resultant = (sin * sin + cos * cos).sqrt().min(1.0);
    let theta_circ_std = if resultant > 0.0 {
        (-2.0 * resultant.ln()).sqrt()
    } else {
        f64::INFINITY
    };
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    let mut cov_xy = 0.0;
    let mut var_s = 0.0;
    for p in &set.particles {
        let w = p.log_weight.exp();
        var_x += w * (p.pose.x - mx).powi(2);
        var_y += w * (p.pose.y - my).powi(2);
        cov_xy += w * (p.pose.x - mx) * (p.pose.y - my);
        var_s += w * (p.scale - ms).powi(2);
    }
    Estimate {
        pose: Pose2D::new(mx, my, theta),
        scale: ms,
        cov: CovSummary {
            var_x,
            var_y,
            cov_xy,
            theta_circ_std,
            var_scale: var_s,
        },
        ess: set.effective_sample_size(),
        n_particles: set.len(),
    }
}

/// Highest-weight particle (alternative room-test estimator).
pub fn max_weight_particle(set: &ParticleSet) -> &ScaledParticle {
    set.particles
        .iter()
        .max_by(|a, b| a.log_weight.partial_cmp(&b.log_weight).unwrap())
        .expect("non-empty set")
}

/// When and how the filter resamples.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FilterConfig {
    pub motion: MotionNoiseParams,
    pub beam: BeamModelParams,
    pub kld: KldConfig,
    pub initial_particles: usize,
    /// Resample after every weight update (reference behavior). When false,
    /// resampling triggers only once ESS drops below
    /// `ess_threshold_ratio * n`.
    pub resample_every_update: bool,
    pub ess_threshold_ratio: f64,
    /// Adaptive KLD resampling; fixed-size low-variance resampling when off.
    pub use_kld: bool,
    /// On a fully degenerate weight update, reinitialize around the last
    /// estimate instead of failing the run.
    pub reinit_on_degenerate: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            motion: MotionNoiseParams::default(),
            beam: BeamModelParams::reference(),
            kld: KldConfig::default(),
            initial_particles: 5000,
            resample_every_update: true,
            ess_threshold_ratio: 0.5,
            use_kld: true,
            reinit_on_degenerate: true,
        }
    }
}

/// Per-scan output of the filter.
#[derive(Debug, Clone, Copy)]
pub struct StepSummary {
    pub estimate: Estimate,
    /// Particle count after resampling (the count carried to the next step).
    pub n_particles: usize,
    /// ESS of the weighted set before resampling.
    pub ess: f64,
    pub degenerate: bool,
}

/// The localization loop: accumulate odometry, then predict / weight /
/// estimate / resample on every scan.
pub struct McLocalizer {
    pub cfg: FilterConfig,
    set: ParticleSet,
    rng: ChaCha8Rng,
    pending: OdomIncrement,
    init_region: InitRegion,
    last_estimate: Option<Estimate>,
    pub degenerate_events: usize,
}

impl McLocalizer {
    pub fn new(cfg: FilterConfig, region: InitRegion, map: &SketchMap, seed: u64) -> Result<Self> {
        cfg.motion.validate()?;
        cfg.kld.validate()?;
        region.validate_against(map)?;
        if region.scale_range.0 < cfg.motion.s_min || region.scale_range.1 > cfg.motion.s_max {
            return Err(Error::validation(format!(
                "init scale range [{}, {}] exceeds clamp bounds [{}, {}]",
                region.scale_range.0, region.scale_range.1, cfg.motion.s_min, cfg.motion.s_max
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = initialize(&region, cfg.initial_particles, &mut rng)?;
        Ok(McLocalizer {
            cfg,
            set,
            rng,
            pending: OdomIncrement::ZERO,
            init_region: region,
            last_estimate: None,
            degenerate_events: 0,
        })
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.set
    }

    pub fn last_estimate(&self) -> Option<&Estimate> {
        self.last_estimate.as_ref()
    }

    /// Accumulate an odometry increment until the next scan arrives.
    pub fn on_odometry(&mut self, u: &OdomIncrement) {
        self.pending = self.pending.compose(u);
    }

    /// Run one full SIR iteration against `scan`.
    pub fn on_scan(&mut self, scan: &RangeScan, map: &SketchMap) -> Result<StepSummary> {
        let u = self.pending;
        self.pending = OdomIncrement::ZERO;
        predict(&mut self.set, &u, &self.cfg.motion, &mut self.rng)?;

        let mut degenerate = false;
        if let Err(err) = update_weights(&mut self.set, scan, map, &self.cfg.beam) {
            if !(self.cfg.reinit_on_degenerate
                && matches!(err, Error::DegenerateParticleSet { .. }))
            {
                return Err(err);
            }
            degenerate = true;
            self.degenerate_events += 1;
            self.reinitialize(map)?;
        }

        let est = estimate(&self.set);
        self.last_estimate = Some(est);
        let ess = est.ess;

        let want_resample = self.cfg.resample_every_update
            || ess < self.cfg.ess_threshold_ratio * self.set.len() as f64;
        if want_resample {
            self.set = if self.cfg.use_kld {
                kld_resample(&self.set, &self.cfg.kld, &mut self.rng)
            } else {
                resample_low_variance(&self.set, &mut self.rng)
            };
        }

        Ok(StepSummary {
            estimate: est,
            n_particles: self.set.len(),
            ess,
            degenerate,
        })
    }

    /// Recovery after weight collapse: respawn around the last estimate, or
    /// over the original region when no estimate exists yet.
    fn reinitialize(&mut self, map: &SketchMap) -> Result<()> {
        let region = match &self.last_estimate {
            Some(est) => {
                let half = 0.25 * self.init_region.rect.width().max(20.0);
                let x0 = (est.pose.x - half).max(0.0);
                let y0 = (est.pose.y - half).max(0.0);
                let x1 = (est.pose.x + half).min(map.width() as f64);
                let y1 = (est.pose.y + half).min(map.height() as f64);
                let (s_lo, s_hi) = (
                    (est.scale * 0.8).max(self.cfg.motion.s_min),
                    (est.scale * 1.2).min(self.cfg.motion.s_max),
                );
                InitRegion {
                    rect: PixelRect::new(x0, y0, x1.max(x0 + 1.0), y1.max(y0 + 1.0))?,
                    theta_range: (
                        wrap_angle(est.pose.theta) - 0.5,
                        wrap_angle(est.pose.theta) + 0.5,
                    ),
                    scale_range: (s_lo, s_hi.max(s_lo)),
                }
            }
            None => self.init_region,
        };
        self.set = initialize(&region, self.cfg.initial_particles, &mut self.rng)?;
        Ok(())
    }
}
