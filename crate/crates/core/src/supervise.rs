//! Signed-distance targets for ray samples.
//!
//! Three modes share one interface:
//!
//! * [`SupervisionMode::RayDistance`]: distance to the beam endpoint.
//! * [`SupervisionMode::ClosestNormal`]: that vector projected onto the
//!   unit direction towards the closest surface, `n = -grad D / |grad D|`.
//! * [`SupervisionMode::CurvatureConstrained`]: the isoline through the
//!   query point is treated as a circle of radius `R = 1/kappa` concentric
//!   with the surface; the cosine rule in the triangle (query, endpoint,
//!   center of curvature) gives the surface radius `r`, and the target is
//!   `R - r`.
//!
//! Curvature of the isoline is the divergence of the unit gradient divided
//! by `m - 1`, which makes the radius exact for spheres (3D) and circles
//! (2D) alike. Targets are constants during optimization and truncated to
//! `[0, tau]`.

use crate::field_net::FieldJet;
use crate::geom::{Dim, Ray, Vec3};
use thiserror::Error;

/// Gradient norms below this are treated as degenerate.
pub const GRADIENT_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SuperviseError {
    #[error("gradient norm {0:e} is below the degeneracy threshold")]
    DegenerateGradient(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SupervisionMode {
    RayDistance,
    ClosestNormal,
    CurvatureConstrained,
}

impl SupervisionMode {
    pub const ALL: [SupervisionMode; 3] = [
        SupervisionMode::RayDistance,
        SupervisionMode::ClosestNormal,
        SupervisionMode::CurvatureConstrained,
    ];

    /// Short name used on the command line and in tables.
    pub fn as_str(self) -> &'static str {
        match self {
            SupervisionMode::RayDistance => "ray",
            SupervisionMode::ClosestNormal => "dcn",
            SupervisionMode::CurvatureConstrained => "curvature",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ray" => Some(SupervisionMode::RayDistance),
            "dcn" => Some(SupervisionMode::ClosestNormal),
            "curvature" => Some(SupervisionMode::CurvatureConstrained),
            _ => None,
        }
    }

    pub fn needs_hessian(self) -> bool {
        self == SupervisionMode::CurvatureConstrained
    }
}

impl std::fmt::Display for SupervisionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Bounds on the radius of curvature, canonical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusLimits {
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for RadiusLimits {
    fn default() -> Self {
        Self {
            r_min: 1e-3,
            r_max: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceEstimate {
    /// Truncated target signed distance.
    pub d_hat: f64,
    pub weight: f64,
    /// Radius of curvature of the isoline through the query point.
    pub roc_query: f64,
    /// Estimated radius of curvature at the closest surface point.
    pub roc_surface: f64,
    pub normal_unit: Vec3,
    /// Mode actually used (degenerate gradients fall back to ray distance).
    pub mode: SupervisionMode,
}

/// Unit direction towards the closest surface.
pub fn normal_dir(gradient: &Vec3) -> Result<Vec3, SuperviseError> {
    let norm = gradient.norm();
    if !(norm >= GRADIENT_EPS) {
        return Err(SuperviseError::DegenerateGradient(norm));
    }
    Ok(-gradient / norm)
}

/// Divergence of the unit gradient, `tr(H)/|g| - g'Hg/|g|^3`.
pub fn unit_gradient_divergence(jet: &FieldJet) -> Result<f64, SuperviseError> {
    let g = &jet.gradient;
    let norm = g.norm();
    if !(norm >= GRADIENT_EPS) {
        return Err(SuperviseError::DegenerateGradient(norm));
    }
    let ghg = g.dot(&(jet.hessian * g));
    Ok(jet.hessian.trace() / norm - ghg / norm.powi(3))
}

/// The Hessian-form mean curvature `(g'Hg - |g|^2 tr(H)) / (2|g|^3)`.
pub fn mean_curvature_hessian_form(jet: &FieldJet) -> Result<f64, SuperviseError> {
    let g = &jet.gradient;
    let norm = g.norm();
    if !(norm >= GRADIENT_EPS) {
        return Err(SuperviseError::DegenerateGradient(norm));
    }
    let ghg = g.dot(&(jet.hessian * g));
    Ok((ghg - norm * norm * jet.hessian.trace()) / (2.0 * norm.powi(3)))
}

/// Isoline curvature `kappa >= 0` and its clamped radius.
pub fn iso_curvature(jet: &FieldJet, dim: Dim, limits: &RadiusLimits) -> Result<(f64, f64), SuperviseError> {
    let kappa = unit_gradient_divergence(jet)?.abs() / (dim.m() - 1) as f64;
    let radius = if kappa > 0.0 {
        (1.0 / kappa).clamp(limits.r_min, limits.r_max)
    } else {
        limits.r_max
    };
    Ok((kappa, radius))
}

/// Projection of the vector to the endpoint onto the closest-surface direction.
pub fn dcn_distance(n_unit: &Vec3, ray: &Ray, x: &Vec3) -> f64 {
    n_unit.dot(&(ray.endpoint() - x))
}

/// `R - sqrt(d^2 + R^2 - 2 R p)` evaluated as `(2Rp - d^2) / (R + r)`,
/// which avoids cancellation when `R` is large.
pub fn curvature_distance(radius: f64, ray: &Ray, x: &Vec3, n_unit: &Vec3) -> f64 {
    let to_end = ray.endpoint() - x;
    let d2 = to_end.norm_squared();
    let p = n_unit.dot(&to_end);
    let r = surface_radius(radius, d2, p);
    (2.0 * radius * p - d2) / (radius + r)
}

fn surface_radius(radius: f64, d2: f64, p: f64) -> f64 {
    (d2 + radius * radius - 2.0 * radius * p).max(0.0).sqrt()
}

/// `(max(0, d_max - |D|))^gamma`.
pub fn sample_weight(d_pred_abs: f64, d_max: f64, gamma: f64) -> f64 {
    (d_max - d_pred_abs).max(0.0).powf(gamma)
}

/// Settings shared by all target computations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSettings {
    pub truncation: f64,
    pub gamma: f64,
    pub limits: RadiusLimits,
}

/// Target for one sample. `jet` must carry a Hessian when `mode` is
/// curvature-constrained. The returned weight is left at 1; batch weights
/// are filled in by [`assign_weights`].
pub fn estimate(
    mode: SupervisionMode,
    jet: &FieldJet,
    ray: &Ray,
    x: &Vec3,
    dim: Dim,
    settings: &TargetSettings,
) -> DistanceEstimate {
    let ray_distance = (ray.endpoint() - x).norm();
    let fallback = |normal_unit: Vec3| DistanceEstimate {
        d_hat: ray_distance.clamp(0.0, settings.truncation),
        weight: 1.0,
        roc_query: settings.limits.r_max,
        roc_surface: settings.limits.r_max,
        normal_unit,
        mode: SupervisionMode::RayDistance,
    };
    let normal = match normal_dir(&jet.gradient) {
        Ok(n) => n,
        Err(_) => return fallback(Vec3::zeros()),
    };
    match mode {
        SupervisionMode::RayDistance => fallback(normal),
        SupervisionMode::ClosestNormal => DistanceEstimate {
            d_hat: dcn_distance(&normal, ray, x).clamp(0.0, settings.truncation),
            mode,
            ..fallback(normal)
        },
        SupervisionMode::CurvatureConstrained => {
            let Ok((_, radius)) = iso_curvature(jet, dim, &settings.limits) else {
                return fallback(normal);
            };
            let to_end = ray.endpoint() - x;
            // Free-space samples have positive distance. A non-positive
            // estimate means the predicted normal disagrees with the observed
            // hit; the ray distance is used rather than pulling the field to zero.
            let d = curvature_distance(radius, ray, x, &normal);
            if !(d > 0.0) {
                return fallback(normal);
            }
            DistanceEstimate {
                d_hat: d.clamp(0.0, settings.truncation),
                weight: 1.0,
                roc_query: radius,
                roc_surface: surface_radius(radius, to_end.norm_squared(), normal.dot(&to_end)),
                normal_unit: normal,
                mode,
            }
        }
    }
}

/// Fills in `w = (d_max - |D|)^gamma` with `d_max` the largest `|D|` in the batch.
pub fn assign_weights(estimates: &mut [DistanceEstimate], predicted: &[f64], gamma: f64) {
    let d_max = predicted.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    for (est, d) in estimates.iter_mut().zip(predicted) {
        est.weight = sample_weight(d.abs(), d_max, gamma);
    }
}
