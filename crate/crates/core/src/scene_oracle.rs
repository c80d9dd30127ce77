//! Analytic scenes with exact signed distance, gradient and Hessian, and a
//! sphere-tracing range scanner that turns them into scans.
//!
//! Scenes are an implicit union of primitives. Derivatives at points where
//! two primitives tie use the lowest-index primitive; box edges and corners
//! use the derivatives of the nearest feature (edge line or corner point).

use crate::field::DistanceField;
use crate::field_net::FieldJet;
use crate::geom::{Dim, Mat3, Pose, Scan, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("scene has no primitives")]
    Empty,
    #[error("scene mixes 2D and 3D primitives")]
    MixedDimensions,
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
    #[error("sensor origin is not in free space (sdf = {0})")]
    OriginNotFree(f64),
    #[error("no beam hit any surface")]
    EmptyScan,
    #[error("invalid scanner configuration: {0}")]
    InvalidScanner(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64 },
    /// Half-space boundary `n . x = offset` with unit `n`; positive side along `n`.
    Plane { normal: Vec3, offset: f64 },
    Box { center: Vec3, half: Vec3 },
    Circle { center: Vec3, radius: f64 },
    /// Counter-clockwise convex polygon in the xy plane.
    Polygon { vertices: Vec<Vec3> },
    /// Axis-aligned rectangle in the xy plane.
    Rect { center: Vec3, half: Vec3 },
    /// 2D line `n . x = offset`.
    Line { normal: Vec3, offset: f64 },
}

impl Primitive {
    pub fn dim(&self) -> Dim {
        match self {
            Primitive::Sphere { .. } | Primitive::Plane { .. } | Primitive::Box { .. } => Dim::Three,
            _ => Dim::Two,
        }
    }

    pub fn sdf(&self, x: &Vec3) -> f64 {
        self.jet_inner(x, false).value
    }

    pub fn jet(&self, x: &Vec3) -> FieldJet {
        self.jet_inner(x, true)
    }

    fn jet_inner(&self, x: &Vec3, derivs: bool) -> FieldJet {
        match self {
            Primitive::Sphere { center, radius } => radial_jet(x - center, *radius, Dim::Three),
            Primitive::Circle { center, radius } => radial_jet(Dim::Two.project(&(x - center)), *radius, Dim::Two),
            Primitive::Plane { normal, offset } | Primitive::Line { normal, offset } => FieldJet {
                value: normal.dot(x) - offset,
                gradient: *normal,
                hessian: Mat3::zeros(),
            },
            Primitive::Box { center, half } => box_jet(x - center, half, Dim::Three),
            Primitive::Rect { center, half } => box_jet(Dim::Two.project(&(x - center)), half, Dim::Two),
            Primitive::Polygon { vertices } => polygon_jet(&Dim::Two.project(x), vertices, derivs),
        }
    }
}

fn projector(dim: Dim) -> Mat3 {
    match dim {
        Dim::Two => Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 0.0)),
        Dim::Three => Mat3::identity(),
    }
}

/// Distance to a point (or to a circle/sphere when `radius > 0`).
fn radial_jet(rel: Vec3, radius: f64, dim: Dim) -> FieldJet {
    let rho = rel.norm();
    if rho == 0.0 {
        return FieldJet {
            value: -radius,
            gradient: Vec3::x(),
            hessian: Mat3::zeros(),
        };
    }
    let u = rel / rho;
    FieldJet {
        value: rho - radius,
        gradient: u,
        hessian: (projector(dim) - u * u.transpose()) / rho,
    }
}

fn box_jet(rel: Vec3, half: &Vec3, dim: Dim) -> FieldJet {
    let m = dim.m();
    let mut q = Vec3::zeros();
    for a in 0..m {
        q[a] = rel[a].abs() - half[a];
    }
    let outside: Vec<usize> = (0..m).filter(|&a| q[a] > 0.0).collect();
    if outside.is_empty() {
        // Interior: distance to the nearest face, lowest axis on ties.
        let mut best = 0;
        for a in 1..m {
            if q[a] > q[best] {
                best = a;
            }
        }
        let mut g = Vec3::zeros();
        g[best] = if rel[best] >= 0.0 { 1.0 } else { -1.0 };
        return FieldJet {
            value: q[best],
            gradient: g,
            hessian: Mat3::zeros(),
        };
    }
    let mut v = Vec3::zeros();
    let mut proj = Mat3::zeros();
    for &a in &outside {
        v[a] = q[a] * rel[a].signum();
        proj[(a, a)] = 1.0;
    }
    let dist = v.norm();
    let u = v / dist;
    FieldJet {
        value: dist,
        gradient: u,
        hessian: (proj - u * u.transpose()) / dist,
    }
}

fn polygon_jet(x: &Vec3, verts: &[Vec3], _derivs: bool) -> FieldJet {
    let n = verts.len();
    let mut inside = true;
    let mut best_edge = (f64::INFINITY, Vec3::zeros(), Vec3::zeros(), false);
    let mut max_face = (f64::NEG_INFINITY, Vec3::zeros());
    for i in 0..n {
        let (a, b) = (verts[i], verts[(i + 1) % n]);
        let edge = b - a;
        let outward = Vec3::new(edge.y, -edge.x, 0.0).normalize();
        let signed = outward.dot(&(x - a));
        if signed > 0.0 {
            inside = false;
        }
        if signed > max_face.0 {
            max_face = (signed, outward);
        }
        let t = ((x - a).dot(&edge) / edge.norm_squared()).clamp(0.0, 1.0);
        let closest = a + t * edge;
        let d = (x - closest).norm();
        let at_vertex = t <= 0.0 || t >= 1.0;
        if d < best_edge.0 {
            best_edge = (d, closest, outward, at_vertex);
        }
    }
    if inside {
        return FieldJet {
            value: max_face.0,
            gradient: max_face.1,
            hessian: Mat3::zeros(),
        };
    }
    let (d, closest, outward, at_vertex) = best_edge;
    if at_vertex {
        radial_jet(x - closest, 0.0, Dim::Two)
    } else {
        FieldJet {
            value: d,
            gradient: outward,
            hessian: Mat3::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticScene {
    dim: Dim,
    primitives: Vec<Primitive>,
}

impl AnalyticScene {
    pub fn new(primitives: Vec<Primitive>) -> Result<Self, SceneError> {
        let first = primitives.first().ok_or(SceneError::Empty)?.dim();
        if primitives.iter().any(|p| p.dim() != first) {
            return Err(SceneError::MixedDimensions);
        }
        for p in &primitives {
            validate(p)?;
        }
        let primitives = primitives.into_iter().map(canonicalize).collect();
        Ok(Self {
            dim: first,
            primitives,
        })
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    /// Index of the primitive realizing the union minimum.
    pub fn active(&self, x: &Vec3) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.primitives.iter().enumerate() {
            let d = p.sdf(x);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    pub fn sdf(&self, x: &Vec3) -> f64 {
        self.primitives
            .iter()
            .map(|p| p.sdf(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn jet(&self, x: &Vec3) -> FieldJet {
        self.primitives[self.active(x)].jet(x)
    }

    /// Parses the line-oriented scene format; primitives form an implicit union.
    ///
    /// ```text
    /// sphere cx cy cz r
    /// box cx cy cz hx hy hz
    /// plane nx ny nz d
    /// circle cx cy r
    /// rect cx cy hx hy
    /// line nx ny d
    /// polygon x1 y1 x2 y2 x3 y3 ...
    /// ```
    pub fn parse(text: &str) -> Result<Self, SceneError> {
        let mut prims = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let kind = parts.next().unwrap();
            let nums: Vec<f64> = parts
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| SceneError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            let want = |n: usize| -> Result<(), SceneError> {
                if nums.len() != n {
                    return Err(SceneError::Parse {
                        line: i + 1,
                        msg: format!("{kind} expects {n} numbers, got {}", nums.len()),
                    });
                }
                Ok(())
            };
            let prim = match kind {
                "sphere" => {
                    want(4)?;
                    Primitive::Sphere {
                        center: Vec3::new(nums[0], nums[1], nums[2]),
                        radius: nums[3],
                    }
                }
                "box" => {
                    want(6)?;
                    Primitive::Box {
                        center: Vec3::new(nums[0], nums[1], nums[2]),
                        half: Vec3::new(nums[3], nums[4], nums[5]),
                    }
                }
                "plane" => {
                    want(4)?;
                    Primitive::Plane {
                        normal: Vec3::new(nums[0], nums[1], nums[2]),
                        offset: nums[3],
                    }
                }
                "circle" => {
                    want(3)?;
                    Primitive::Circle {
                        center: Vec3::new(nums[0], nums[1], 0.0),
                        radius: nums[2],
                    }
                }
                "rect" => {
                    want(4)?;
                    Primitive::Rect {
                        center: Vec3::new(nums[0], nums[1], 0.0),
                        half: Vec3::new(nums[2], nums[3], 0.0),
                    }
                }
                "line" => {
                    want(3)?;
                    Primitive::Line {
                        normal: Vec3::new(nums[0], nums[1], 0.0),
                        offset: nums[2],
                    }
                }
                "polygon" => {
                    if nums.len() < 6 || nums.len() % 2 != 0 {
                        return Err(SceneError::Parse {
                            line: i + 1,
                            msg: "polygon expects at least 3 x y pairs".into(),
                        });
                    }
                    Primitive::Polygon {
                        vertices: nums.chunks(2).map(|c| Vec3::new(c[0], c[1], 0.0)).collect(),
                    }
                }
                other => {
                    return Err(SceneError::Parse {
                        line: i + 1,
                        msg: format!("unknown primitive '{other}'"),
                    })
                }
            };
            prims.push(prim);
        }
        AnalyticScene::new(prims)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.primitives {
            let line = match p {
                Primitive::Sphere { center: c, radius } => format!("sphere {} {} {} {}", c.x, c.y, c.z, radius),
                Primitive::Box { center: c, half: h } => {
                    format!("box {} {} {} {} {} {}", c.x, c.y, c.z, h.x, h.y, h.z)
                }
                Primitive::Plane { normal: n, offset } => format!("plane {} {} {} {}", n.x, n.y, n.z, offset),
                Primitive::Circle { center: c, radius } => format!("circle {} {} {}", c.x, c.y, radius),
                Primitive::Rect { center: c, half: h } => format!("rect {} {} {} {}", c.x, c.y, h.x, h.y),
                Primitive::Line { normal: n, offset } => format!("line {} {} {}", n.x, n.y, offset),
                Primitive::Polygon { vertices } => {
                    let coords: Vec<String> = vertices.iter().map(|v| format!("{} {}", v.x, v.y)).collect();
                    format!("polygon {}", coords.join(" "))
                }
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

fn validate(p: &Primitive) -> Result<(), SceneError> {
    let bad = |msg: &str| Err(SceneError::InvalidPrimitive(msg.to_string()));
    match p {
        Primitive::Sphere { radius, .. } | Primitive::Circle { radius, .. } if !(*radius > 0.0) => bad("radius must be positive"),
        Primitive::Box { half, .. } if !(half.x > 0.0 && half.y > 0.0 && half.z > 0.0) => bad("half extents must be positive"),
        Primitive::Rect { half, .. } if !(half.x > 0.0 && half.y > 0.0) => bad("half extents must be positive"),
        Primitive::Plane { normal, .. } | Primitive::Line { normal, .. } if !(normal.norm() > 0.0) => bad("normal must be non-zero"),
        Primitive::Polygon { vertices } => {
            let n = vertices.len();
            let signs: Vec<f64> = (0..n)
                .map(|i| {
                    let (a, b, c) = (vertices[i], vertices[(i + 1) % n], vertices[(i + 2) % n]);
                    (b - a).cross(&(c - b)).z
                })
                .collect();
            let convex = signs.iter().all(|s| *s > 0.0) || signs.iter().all(|s| *s < 0.0);
            if n < 3 || !convex {
                bad("polygon must be strictly convex")
            } else {
                Ok(())
            }
        }
        _ => Ok(()),
    }
}

/// Normalizes plane normals and orients polygons counter-clockwise.
fn canonicalize(p: Primitive) -> Primitive {
    match p {
        Primitive::Plane { normal, offset } => {
            let n = normal.norm();
            Primitive::Plane {
                normal: normal / n,
                offset: offset / n,
            }
        }
        Primitive::Line { normal, offset } => {
            let n = normal.norm();
            Primitive::Line {
                normal: normal / n,
                offset: offset / n,
            }
        }
        Primitive::Polygon { mut vertices } => {
            let area: f64 = (0..vertices.len())
                .map(|i| {
                    let (a, b) = (vertices[i], vertices[(i + 1) % vertices.len()]);
                    a.x * b.y - b.x * a.y
                })
                .sum();
            if area < 0.0 {
                vertices.reverse();
            }
            Primitive::Polygon { vertices }
        }
        other => other,
    }
}

impl DistanceField for AnalyticScene {
    fn dim(&self) -> Dim {
        self.dim
    }

    fn distance(&self, x: &Vec3) -> f64 {
        self.sdf(x)
    }
}

impl AnalyticScene {
    pub fn dim(&self) -> Dim {
        self.dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScannerConfig {
    pub beams: usize,
    /// Full angular field of view in radians: a planar fan in 2D, a cone
    /// about the sensor +x axis in 3D (values >= 2*pi cover the sphere).
    pub fov: f64,
    pub max_range: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for ScannerConfig {
    fn default() -> Self {
        Self {
            beams: 64,
            fov: 2.0 * PI,
            max_range: 30.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

pub const TRACE_SAFETY: f64 = 0.99;
pub const TRACE_MAX_STEPS: usize = 10_000;
pub const HIT_EPS: f64 = 1e-6;

/// Beam directions in the sensor frame.
pub fn beam_directions(dim: Dim, cfg: &ScannerConfig) -> Vec<Vec3> {
    let n = cfg.beams;
    match dim {
        Dim::Two => {
            let full = cfg.fov >= 2.0 * PI - 1e-12;
            (0..n)
                .map(|k| {
                    let a = if full {
                        -PI + 2.0 * PI * k as f64 / n as f64
                    } else if n == 1 {
                        0.0
                    } else {
                        -0.5 * cfg.fov + cfg.fov * k as f64 / (n - 1) as f64
                    };
                    Vec3::new(a.cos(), a.sin(), 0.0)
                })
                .collect()
        }
        Dim::Three => {
            // Golden-angle spiral over the spherical cap of half-angle fov/2.
            let half = (0.5 * cfg.fov).min(PI);
            let cos_min = half.cos();
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let c = 1.0 - (1.0 - cos_min) * (k as f64 + 0.5) / n as f64;
                    let s = (1.0 - c * c).max(0.0).sqrt();
                    let phi = golden * k as f64;
                    Vec3::new(c, s * phi.cos(), s * phi.sin())
                })
                .collect()
        }
    }
}

/// Marches from `origin` along unit `dir`; returns the hit range.
pub fn sphere_trace(scene: &AnalyticScene, origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<f64> {
    let mut t = 0.0;
    for _ in 0..TRACE_MAX_STEPS {
        let d = scene.sdf(&(origin + t * dir));
        if d.abs() < HIT_EPS {
            return Some(t);
        }
        t += TRACE_SAFETY * d;
        if t > max_range || t < 0.0 {
            return None;
        }
    }
    None
}

/// Simulated range scan from `pose`. Beams that miss are dropped.
pub fn simulate_scan(scene: &AnalyticScene, pose: &Pose, cfg: &ScannerConfig) -> Result<Scan, SceneError> {
    if cfg.beams == 0 {
        return Err(SceneError::InvalidScanner("beam count must be at least 1".into()));
    }
    if !(cfg.max_range > 0.0) {
        return Err(SceneError::InvalidScanner("max range must be positive".into()));
    }
    let origin = *pose.translation();
    let d0 = scene.sdf(&origin);
    if !(d0 > 0.0) {
        return Err(SceneError::OriginNotFree(d0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("positive sigma"));
    let mut points = Vec::new();
    for dir in beam_directions(scene.dim(), cfg) {
        let world_dir = pose.rotation() * dir;
        if let Some(range) = sphere_trace(scene, &origin, &world_dir, cfg.max_range) {
            let r = match &noise {
                Some(n) => range + n.sample(&mut rng),
                None => range,
            };
            if r > 0.0 {
                points.push(dir * r);
            }
        }
    }
    Scan::new(*pose, points).map_err(|_| SceneError::EmptyScan)
}
