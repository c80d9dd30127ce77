//! Planar Monte Carlo localization with a distance field as the
//! observation model.

use crate::field::DistanceField;
use crate::geom::{Aabb, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MclError {
    #[error("invalid localization setting: {0}")]
    InvalidConfig(String),
    #[error("{poses} ground-truth poses but {scans} scans")]
    LengthMismatch { poses: usize, scans: usize },
    #[error("trajectory is empty")]
    EmptyTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    /// Applies a motion expressed in this pose's frame.
    pub fn compose(&self, d: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2 {
            x: self.x + c * d.x - s * d.y,
            y: self.y + s * d.x + c * d.y,
            theta: wrap_angle(self.theta + d.theta),
        }
    }

    /// Motion that takes `self` to `other`, in `self`'s frame.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (other.x - self.x, other.y - self.y);
        Pose2 {
            x: c * dx + s * dy,
            y: -s * dx + c * dy,
            theta: wrap_angle(other.theta - self.theta),
        }
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        let (s, c) = self.theta.sin_cos();
        Vec3::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y, 0.0)
    }
}

/// Wraps to `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pose: Pose2,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryNoise {
    pub trans_abs: f64,
    pub trans_rel: f64,
    pub rot_abs: f64,
    pub rot_rel: f64,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        Self {
            trans_abs: 0.01,
            trans_rel: 0.01,
            rot_abs: 0.002,
            rot_rel: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MclConfig {
    pub n_particles: usize,
    pub convergence_std: f64,
    pub gate_translation: f64,
    pub gate_rotation: f64,
    pub sigma_z: f64,
    pub odometry: OdometryNoise,
    /// At most this many beam endpoints enter each likelihood (evenly strided).
    pub max_beams: usize,
    pub seed: u64,
    pub runs: usize,
}

impl Default for MclConfig {
    fn default() -> Self {
        Self {
            n_particles: 10_000,
            convergence_std: 0.30,
            gate_translation: 0.05,
            gate_rotation: 0.1,
            sigma_z: 0.1,
            odometry: OdometryNoise::default(),
            max_beams: 64,
            seed: 0,
            runs: 5,
        }
    }
}

impl MclConfig {
    pub fn validate(&self) -> Result<(), MclError> {
        let positive = [
            self.convergence_std,
            self.gate_translation,
            self.gate_rotation,
            self.sigma_z,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(MclError::InvalidConfig("thresholds, gates and sigma must be positive".into()));
        }
        let o = &self.odometry;
        if [o.trans_abs, o.trans_rel, o.rot_abs, o.rot_rel].iter().any(|v| !(*v >= 0.0)) {
            return Err(MclError::InvalidConfig("odometry noise must be non-negative".into()));
        }
        if self.n_particles == 0 || self.runs == 0 || self.max_beams == 0 {
            return Err(MclError::InvalidConfig("particle, run and beam counts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    moved_translation: f64,
    moved_rotation: f64,
    rng: ChaCha8Rng,
}

/// Uniform particles over the box footprint with headings in `[-pi, pi)`.
pub fn init_uniform(aabb: &Aabb, n: usize, seed: u64) -> ParticleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (aabb.min(), aabb.max());
    let w = 1.0 / n as f64;
    let particles = (0..n)
        .map(|_| Particle {
            pose: Pose2::new(
                lo.x + (hi.x - lo.x) * rng.random::<f64>(),
                lo.y + (hi.y - lo.y) * rng.random::<f64>(),
                -PI + 2.0 * PI * rng.random::<f64>(),
            ),
            weight: w,
        })
        .collect();
    ParticleSet {
        particles,
        moved_translation: 0.0,
        moved_rotation: 0.0,
        rng,
    }
}

impl ParticleSet {
    pub fn from_particles(particles: Vec<Particle>, seed: u64) -> Self {
        Self {
            particles,
            moved_translation: 0.0,
            moved_rotation: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

/// Sum over beams of `-D(endpoint)^2 / (2 sigma^2)`.
pub fn log_likelihood(field: &dyn DistanceField, pose: &Pose2, beams: &[Vec3], sigma_z: f64) -> f64 {
    let world: Vec<Vec3> = beams.iter().map(|b| pose.transform(b)).collect();
    let inv = 1.0 / (2.0 * sigma_z * sigma_z);
    -field.distance_batch(&world).iter().map(|d| d * d * inv).sum::<f64>()
}

/// Systematic resampling; returns indices of the survivors.
pub fn low_variance_indices(weights: &[f64], u0: f64) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut c = weights[0];
    let mut i = 0;
    for m in 0..n {
        let u = (u0 + m as f64) * step;
        while u > c && i < n - 1 {
            i += 1;
            c += weights[i];
        }
        out.push(i);
    }
    out
}

fn stride_beams(beams: &[Vec3], max: usize) -> Vec<Vec3> {
    if beams.len() <= max {
        return beams.to_vec();
    }
    (0..max).map(|k| beams[k * beams.len() / max]).collect()
}

/// Motion update, then (when either gate has been reached since the last
/// correction) reweighting against `beams` and resampling. Returns whether
/// a correction happened.
pub fn step(set: &mut ParticleSet, odom: &Pose2, beams: &[Vec3], field: &dyn DistanceField, cfg: &MclConfig) -> bool {
    let noise = &cfg.odometry;
    let trans = odom.x.hypot(odom.y);
    let st = noise.trans_abs + noise.trans_rel * trans;
    let sr = noise.rot_abs + noise.rot_rel * odom.theta.abs();
    let nt = Normal::new(0.0, st).expect("finite sigma");
    let nr = Normal::new(0.0, sr).expect("finite sigma");
    for p in &mut set.particles {
        let noisy = Pose2::new(
            odom.x + nt.sample(&mut set.rng),
            odom.y + nt.sample(&mut set.rng),
            odom.theta + nr.sample(&mut set.rng),
        );
        p.pose = p.pose.compose(&noisy);
    }
    set.moved_translation += trans;
    set.moved_rotation += odom.theta.abs();
    if set.moved_translation < cfg.gate_translation && set.moved_rotation < cfg.gate_rotation {
        return false;
    }
    set.moved_translation = 0.0;
    set.moved_rotation = 0.0;

    let beams = stride_beams(beams, cfg.max_beams);
    let logs: Vec<f64> = set
        .particles
        .iter()
        .map(|p| p.weight.ln() + log_likelihood(field, &p.pose, &beams, cfg.sigma_z))
        .collect();
    let max = logs.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let n = set.particles.len();
    let mut weights: Vec<f64> = if max.is_finite() {
        logs.iter().map(|l| if l.is_finite() { (l - max).exp() } else { 0.0 }).collect()
    } else {
        log::warn!("every particle has zero likelihood; reweighting uniformly");
        vec![1.0; n]
    };
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let u0 = set.rng.random::<f64>();
    let picks = low_variance_indices(&weights, u0);
    let w = 1.0 / n as f64;
    set.particles = picks
        .into_iter()
        .map(|i| Particle {
            pose: set.particles[i].pose,
            weight: w,
        })
        .collect();
    true
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub pose: Pose2,
    pub std: f64,
    pub converged: bool,
}

/// Weighted mean position, circular mean heading and positional spread.
pub fn estimate(set: &ParticleSet, convergence_std: f64) -> Estimate {
    let total: f64 = set.particles.iter().map(|p| p.weight).sum();
    let (mut mx, mut my, mut ms, mut mc) = (0.0, 0.0, 0.0, 0.0);
    for p in &set.particles {
        let w = p.weight / total;
        mx += w * p.pose.x;
        my += w * p.pose.y;
        ms += w * p.pose.theta.sin();
        mc += w * p.pose.theta.cos();
    }
    let var: f64 = set
        .particles
        .iter()
        .map(|p| p.weight / total * ((p.pose.x - mx).powi(2) + (p.pose.y - my).powi(2)))
        .sum();
    let std = var.sqrt();
    Estimate {
        pose: Pose2::new(mx, my, ms.atan2(mc)),
        std,
        converged: std < convergence_std,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub converged_runs: usize,
    pub runs: usize,
}

/// Positional RMSE and MAE after each run's first converged estimate,
/// averaged over the runs that converged; `None` if none did.
pub fn run_metrics(truth: &[Pose2], runs: &[Vec<Estimate>]) -> Option<Metrics> {
    let mut per_run = Vec::new();
    for est in runs {
        let Some(start) = est.iter().position(|e| e.converged) else {
            continue;
        };
        let errs: Vec<f64> = est[start..]
            .iter()
            .zip(&truth[start..])
            .map(|(e, t)| (e.pose.x - t.x).hypot(e.pose.y - t.y))
            .collect();
        let n = errs.len() as f64;
        let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
        let mae = errs.iter().sum::<f64>() / n;
        per_run.push((rmse, mae));
    }
    if per_run.is_empty() {
        return None;
    }
    let k = per_run.len() as f64;
    Some(Metrics {
        rmse: per_run.iter().map(|r| r.0).sum::<f64>() / k,
        mae: per_run.iter().map(|r| r.1).sum::<f64>() / k,
        converged_runs: per_run.len(),
        runs: runs.len(),
    })
}

/// Runs `cfg.runs` global localizations along `truth`, feeding odometry
/// from consecutive ground-truth poses and `scans[i]` (sensor-frame
/// endpoints) at step `i`. Run `r` is seeded with `cfg.seed + r`.
pub fn localize(
    field: &dyn DistanceField,
    map: &Aabb,
    truth: &[Pose2],
    scans: &[Vec<Vec3>],
    cfg: &MclConfig,
) -> Result<Vec<Vec<Estimate>>, MclError> {
    cfg.validate()?;
    if truth.len() != scans.len() {
        return Err(MclError::LengthMismatch {
            poses: truth.len(),
            scans: scans.len(),
        });
    }
    if truth.is_empty() {
        return Err(MclError::EmptyTrajectory);
    }
    let mut all = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs {
        let mut set = init_uniform(map, cfg.n_particles, cfg.seed.wrapping_add(r as u64));
        let mut est = Vec::with_capacity(truth.len());
        // The first scan is integrated as if the gates were crossed.
        let first = Pose2::new(0.0, 0.0, 0.0);
        set.moved_translation = cfg.gate_translation;
        step(&mut set, &first, &scans[0], field, cfg);
        est.push(estimate(&set, cfg.convergence_std));
        for i in 1..truth.len() {
            let odom = truth[i - 1].between(&truth[i]);
            step(&mut set, &odom, &scans[i], field, cfg);
            est.push(estimate(&set, cfg.convergence_std));
        }
        all.push(est);
    }
    Ok(all)
}
