//! Geometric primitives shared across the pipeline.
//!
//! Points are stored as [`Vec3`] in both 2D and 3D runs. A 2D run keeps the
//! third coordinate at zero and uses rotations about the z axis, so the same
//! arithmetic serves both dimensions; [`Dim`] records which one is active.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("non-finite point at index {0}")]
    NonFinitePoint(usize),
    #[error("scan contains no points")]
    EmptyScan,
    #[error("ray has zero length")]
    ZeroLengthRay,
    #[error("rotation is not orthonormal with determinant +1")]
    InvalidRotation,
    #[error("non-finite translation")]
    NonFiniteTranslation,
    #[error("bounding box min must be strictly below max on every axis")]
    InvalidBox,
    #[error("no rays remain inside the bounding box ({dropped} dropped)")]
    EmptyAfterFilter { dropped: usize },
}

/// Spatial dimension of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    pub fn m(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }

    pub fn from_m(m: usize) -> Option<Dim> {
        match m {
            2 => Some(Dim::Two),
            3 => Some(Dim::Three),
            _ => None,
        }
    }

    /// Zeroes the coordinates that do not exist in this dimension.
    pub fn project(self, v: &Vec3) -> Vec3 {
        match self {
            Dim::Two => Vec3::new(v.x, v.y, 0.0),
            Dim::Three => *v,
        }
    }
}

pub fn is_finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Rigid transform taking sensor-frame points to the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeomError> {
        if !rotation.iter().all(|c| c.is_finite()) {
            return Err(GeomError::InvalidRotation);
        }
        let gram = rotation.transpose() * rotation - Mat3::identity();
        if gram.amax() > ORTHO_TOL || (rotation.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(GeomError::InvalidRotation);
        }
        if !is_finite(&translation) {
            return Err(GeomError::NonFiniteTranslation);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Planar pose: rotation by `theta` about z, translation `(x, y, 0)`.
    pub fn planar(x: f64, y: f64, theta: f64) -> Self {
        Self {
            rotation: rot_z(theta),
            translation: Vec3::new(x, y, 0.0),
        }
    }

    /// Pose whose sensor +x axis points along `forward`.
    pub fn looking_along(origin: Vec3, forward: &Vec3) -> Result<Self, GeomError> {
        let fwd = forward.try_normalize(1e-12).ok_or(GeomError::InvalidRotation)?;
        let helper = if fwd.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
        let left = helper.cross(&fwd).normalize();
        let up = fwd.cross(&left);
        Pose::new(Mat3::from_columns(&[fwd, left, up]), origin)
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Heading of the sensor x axis projected onto the xy plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self, GeomError> {
        let rotation = Mat3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Pose::new(rotation, Vec3::new(v[3], v[7], v[11]))
    }
}

pub fn rot_z(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// A sensor beam from its origin to the surface point it hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    origin: Vec3,
    endpoint: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, endpoint: Vec3) -> Result<Self, GeomError> {
        if !is_finite(&origin) {
            return Err(GeomError::NonFinitePoint(0));
        }
        if !is_finite(&endpoint) {
            return Err(GeomError::NonFinitePoint(1));
        }
        if (endpoint - origin).norm() <= 0.0 {
            return Err(GeomError::ZeroLengthRay);
        }
        Ok(Self { origin, endpoint })
    }

    pub fn origin(&self) -> &Vec3 {
        &self.origin
    }

    pub fn endpoint(&self) -> &Vec3 {
        &self.endpoint
    }

    pub fn length(&self) -> f64 {
        (self.endpoint - self.origin).norm()
    }

    pub fn direction(&self) -> Vec3 {
        (self.endpoint - self.origin) / self.length()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pose: Pose,
    points: Vec<Vec3>,
}

impl Scan {
    pub fn new(pose: Pose, points: Vec<Vec3>) -> Result<Self, GeomError> {
        if points.is_empty() {
            return Err(GeomError::EmptyScan);
        }
        if let Some(i) = points.iter().position(|p| !is_finite(p)) {
            return Err(GeomError::NonFinitePoint(i));
        }
        Ok(Self { pose, points })
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }
}

/// Converts a scan into world-frame rays from the sensor origin.
pub fn to_world(scan: &Scan) -> Result<Vec<Ray>, GeomError> {
    let origin = *scan.pose.translation();
    scan.points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !is_finite(p) {
                return Err(GeomError::NonFinitePoint(i));
            }
            let end = scan.pose.transform_point(p);
            Ray::new(origin, end).map_err(|e| match e {
                GeomError::NonFinitePoint(_) => GeomError::NonFinitePoint(i),
                other => other,
            })
        })
        .collect()
}

/// Axis-aligned box. In 2D only x and y are checked and the z range is ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    min: Vec3,
    max: Vec3,
    dim: Dim,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3, dim: Dim) -> Result<Self, GeomError> {
        let (min, max) = (dim.project(&min), dim.project(&max));
        if !is_finite(&min) || !is_finite(&max) {
            return Err(GeomError::InvalidBox);
        }
        if (0..dim.m()).any(|k| min[k] >= max[k]) {
            return Err(GeomError::InvalidBox);
        }
        Ok(Self { min, max, dim })
    }

    pub fn cube(center: Vec3, size: f64, dim: Dim) -> Result<Self, GeomError> {
        let half = Vec3::repeat(0.5 * size);
        Aabb::new(center - half, center + half, dim)
    }

    pub fn min(&self) -> &Vec3 {
        &self.min
    }

    pub fn max(&self) -> &Vec3 {
        &self.max
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn center(&self) -> Vec3 {
        0.5 * (self.min + self.max)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn max_extent(&self) -> f64 {
        (0..self.dim.m()).map(|k| self.max[k] - self.min[k]).fold(0.0, f64::max)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..self.dim.m()).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

/// Uniform scale and offset taking world coordinates into the canonical cube.
///
/// A single scale factor is used for all axes so signed distances stay
/// isotropic: `canonical = (world - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneTransform {
    pub center: Vec3,
    pub scale: f64,
}

impl SceneTransform {
    pub fn identity() -> Self {
        Self {
            center: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn for_box(aabb: &Aabb) -> Self {
        Self {
            center: aabb.center(),
            scale: 2.0 / aabb.max_extent(),
        }
    }

    pub fn normalize(&self, p: &Vec3) -> Vec3 {
        (p - self.center) * self.scale
    }

    pub fn denormalize(&self, p: &Vec3) -> Vec3 {
        p / self.scale + self.center
    }

    /// Converts a canonical-unit distance to world units.
    pub fn distance_to_world(&self, d: f64) -> f64 {
        d / self.scale
    }

    pub fn distance_to_canonical(&self, d: f64) -> f64 {
        d * self.scale
    }
}

#[derive(Debug, Clone)]
pub struct NormalizedRays {
    pub rays: Vec<Ray>,
    pub transform: SceneTransform,
    pub dropped: usize,
}

/// Maps rays into the canonical cube of `aabb`, dropping rays whose endpoint
/// lies outside the box. Origins are kept wherever they land.
pub fn normalize_scene(rays: &[Ray], aabb: &Aabb) -> Result<NormalizedRays, GeomError> {
    let transform = SceneTransform::for_box(aabb);
    let mut kept = Vec::with_capacity(rays.len());
    let mut dropped = 0;
    for ray in rays {
        if !aabb.contains(ray.endpoint()) {
            dropped += 1;
            continue;
        }
        kept.push(Ray::new(
            transform.normalize(ray.origin()),
            transform.normalize(ray.endpoint()),
        )?);
    }
    if kept.is_empty() {
        return Err(GeomError::EmptyAfterFilter { dropped });
    }
    Ok(NormalizedRays {
        rays: kept,
        transform,
        dropped,
    })
}

/// Centroid of the scan origins, the default anchor of the training box.
pub fn origin_centroid(scans: &[Scan]) -> Vec3 {
    if scans.is_empty() {
        return Vec3::zeros();
    }
    let sum: Vec3 = scans.iter().map(|s| *s.pose().translation()).sum();
    sum / scans.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_pose_maps_point_directly() {
        let scan = Scan::new(Pose::identity(), vec![Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        let rays = to_world(&scan).unwrap();
        assert_eq!(*rays[0].origin(), Vec3::zeros());
        assert_eq!(*rays[0].endpoint(), Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let pose = Pose::new(rot_z(FRAC_PI_2), Vec3::zeros()).unwrap();
        let scan = Scan::new(pose, vec![Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        let end = *to_world(&scan).unwrap()[0].endpoint();
        assert_relative_eq!(end, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn translation_is_additive() {
        let pose = Pose::new(Mat3::identity(), Vec3::new(5.0, 0.0, 0.0)).unwrap();
        let scan = Scan::new(pose, vec![Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        let ray = to_world(&scan).unwrap()[0];
        assert_eq!(*ray.origin(), Vec3::new(5.0, 0.0, 0.0));
        assert_eq!(*ray.endpoint(), Vec3::new(6.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_non_finite_points_with_index() {
        let pts = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(f64::NAN, 0.0, 0.0)];
        assert_eq!(
            Scan::new(Pose::identity(), pts).unwrap_err(),
            GeomError::NonFinitePoint(1)
        );
        assert_eq!(
            Scan::new(Pose::identity(), vec![]).unwrap_err(),
            GeomError::EmptyScan
        );
    }

    #[test]
    fn rejects_reflections_and_skew() {
        let reflect = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(reflect, Vec3::zeros()).is_err());
        let skew = Mat3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(skew, Vec3::zeros()).is_err());
    }

    #[test]
    fn row_major_round_trip() {
        let pose = Pose::planar(1.5, -2.0, 0.3);
        let back = Pose::from_row_major(&pose.to_row_major()).unwrap();
        assert_eq!(pose, back);
        let ident = Pose::from_row_major(&[1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1., 0.]).unwrap();
        assert_eq!(ident, Pose::identity());
    }

    #[test]
    fn looking_along_sets_forward_axis() {
        let fwd = Vec3::new(-1.0, 2.0, 0.5);
        let pose = Pose::looking_along(Vec3::new(1.0, 1.0, 1.0), &fwd).unwrap();
        let got = pose.rotation() * Vec3::x();
        assert_relative_eq!(got, fwd.normalize(), epsilon = 1e-12);
    }

    #[test]
    fn corner_and_center_of_canonical_cube() {
        let aabb = Aabb::cube(Vec3::zeros(), 50.0, Dim::Three).unwrap();
        let t = SceneTransform::for_box(&aabb);
        assert_eq!(t.normalize(&Vec3::repeat(25.0)), Vec3::repeat(1.0));
        assert_eq!(t.normalize(&Vec3::zeros()), Vec3::zeros());
    }

    #[test]
    fn normalize_drops_outside_endpoints() {
        let aabb = Aabb::cube(Vec3::zeros(), 4.0, Dim::Three).unwrap();
        let rays = vec![
            Ray::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)).unwrap(),
            Ray::new(Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0)).unwrap(),
        ];
        let out = normalize_scene(&rays, &aabb).unwrap();
        assert_eq!(out.rays.len(), 1);
        assert_eq!(out.dropped, 1);
        assert_eq!(*out.rays[0].endpoint(), Vec3::new(0.5, 0.0, 0.0));
        for r in &out.rays {
            assert!(r.endpoint().amax() <= 1.0);
        }

        let far = vec![Ray::new(Vec3::zeros(), Vec3::new(9.0, 0.0, 0.0)).unwrap()];
        assert_eq!(
            normalize_scene(&far, &aabb).unwrap_err(),
            GeomError::EmptyAfterFilter { dropped: 1 }
        );
    }

    #[test]
    fn normalize_round_trip_is_exact_enough() {
        let aabb = Aabb::new(Vec3::new(-3.0, 1.0, -7.0), Vec3::new(20.0, 9.0, 4.0), Dim::Three).unwrap();
        let t = SceneTransform::for_box(&aabb);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = Vec3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
            );
            let back = t.denormalize(&t.normalize(&p));
            assert!((back - p).amax() < 1e-12);
        }
    }

    #[test]
    fn rigid_transform_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let axis = nalgebra::Unit::new_normalize(Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let rot = nalgebra::Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0));
            let pose = Pose::new(*rot.matrix(), Vec3::new(1.0, -2.0, 3.0)).unwrap();
            let a = Vec3::new(rng.random(), rng.random(), rng.random()) * 10.0;
            let b = Vec3::new(rng.random(), rng.random(), rng.random()) * 10.0;
            let d0 = (a - b).norm();
            let d1 = (pose.transform_point(&a) - pose.transform_point(&b)).norm();
            assert!((d0 - d1).abs() < 1e-9);
        }
    }

    #[test]
    fn box_validation() {
        assert!(Aabb::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0), Dim::Three).is_err());
        // z is irrelevant in 2D
        assert!(Aabb::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 0.0), Dim::Two).is_ok());
    }
}
