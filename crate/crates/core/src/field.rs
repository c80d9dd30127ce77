//! World-frame distance fields consumed by meshing, evaluation and localization.

use crate::field_net::{FieldJet, FieldNet};
use crate::geom::{Aabb, Dim, SceneTransform, Vec3};

/// Signed distance queried in world coordinates.
pub trait DistanceField: Sync {
    fn dim(&self) -> Dim;

    fn distance(&self, x: &Vec3) -> f64;

    fn distance_batch(&self, xs: &[Vec3]) -> Vec<f64> {
        xs.iter().map(|x| self.distance(x)).collect()
    }
}

/// A trained network together with the transform into its canonical cube.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralField {
    pub net: FieldNet,
    pub transform: SceneTransform,
}

const BATCH_CHUNK: usize = 4096;

impl NeuralField {
    pub fn new(net: FieldNet, transform: SceneTransform) -> Self {
        Self { net, transform }
    }

    /// Jet in world units: gradients are scale-free, Hessians scale by `s`.
    pub fn jet(&self, x: &Vec3) -> FieldJet {
        let s = self.transform.scale;
        let j = self.net.eval_jet(&self.transform.normalize(x));
        FieldJet {
            value: j.value / s,
            gradient: j.gradient,
            hessian: j.hessian * s,
        }
    }

    pub fn jet_batch(&self, xs: &[Vec3]) -> Vec<FieldJet> {
        let s = self.transform.scale;
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(BATCH_CHUNK) {
            let local: Vec<Vec3> = chunk.iter().map(|x| self.transform.normalize(x)).collect();
            let (jets, _) = self.net.forward_batch(&local, false, false);
            for (v, g) in jets.values.iter().zip(&jets.gradients) {
                out.push(FieldJet {
                    value: v / s,
                    gradient: *g,
                    hessian: Default::default(),
                });
            }
        }
        out
    }
}

impl DistanceField for NeuralField {
    fn dim(&self) -> Dim {
        self.net.dim()
    }

    fn distance(&self, x: &Vec3) -> f64 {
        self.transform
            .distance_to_world(self.net.eval(&self.transform.normalize(x)))
    }

    fn distance_batch(&self, xs: &[Vec3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(BATCH_CHUNK) {
            let local: Vec<Vec3> = chunk.iter().map(|x| self.transform.normalize(x)).collect();
            out.extend(
                self.net
                    .eval_batch(&local)
                    .into_iter()
                    .map(|d| self.transform.distance_to_world(d)),
            );
        }
        out
    }
}

/// A field sampled on a regular grid and interpolated (bi/trilinearly).
///
/// Queries outside the grid are clamped to its boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    aabb: Aabb,
    res: [usize; 3],
    values: Vec<f64>,
}

impl GridField {
    /// Samples `field` at `res` points per axis (x fastest).
    pub fn sample(field: &dyn DistanceField, aabb: &Aabb, res: usize) -> Self {
        let res = res.max(2);
        let dims = grid_dims(aabb.dim(), res);
        let points = grid_points(aabb, dims);
        Self {
            aabb: *aabb,
            res: dims,
            values: field.distance_batch(&points),
        }
    }

    pub fn from_values(aabb: Aabb, res: [usize; 3], values: Vec<f64>) -> Option<Self> {
        (res.iter().product::<usize>() == values.len()).then_some(Self { aabb, res, values })
    }

    pub fn aabb(&self) -> &Aabb {
        &self.aabb
    }

    pub fn res(&self) -> [usize; 3] {
        self.res
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[i + self.res[0] * (j + self.res[1] * k)]
    }
}

pub(crate) fn grid_dims(dim: Dim, res: usize) -> [usize; 3] {
    match dim {
        Dim::Two => [res, res, 1],
        Dim::Three => [res, res, res],
    }
}

/// Grid node positions, x fastest.
pub(crate) fn grid_points(aabb: &Aabb, dims: [usize; 3]) -> Vec<Vec3> {
    let ext = aabb.extent();
    let step = |a: usize| if dims[a] > 1 { ext[a] / (dims[a] - 1) as f64 } else { 0.0 };
    let (sx, sy, sz) = (step(0), step(1), step(2));
    let min = aabb.min();
    let mut pts = Vec::with_capacity(dims.iter().product());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                pts.push(Vec3::new(
                    min.x + i as f64 * sx,
                    min.y + j as f64 * sy,
                    if dims[2] > 1 { min.z + k as f64 * sz } else { 0.0 },
                ));
            }
        }
    }
    pts
}

impl DistanceField for GridField {
    fn dim(&self) -> Dim {
        self.aabb.dim()
    }

    fn distance(&self, x: &Vec3) -> f64 {
        let mut idx = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.res[a];
            if n < 2 {
                continue;
            }
            let (lo, hi) = (self.aabb.min()[a], self.aabb.max()[a]);
            let u = ((x[a] - lo) / (hi - lo)).clamp(0.0, 1.0) * (n - 1) as f64;
            let i = (u.floor() as usize).min(n - 2);
            idx[a] = i;
            frac[a] = u - i as f64;
        }
        let [i, j, k] = idx;
        let [fx, fy, fz] = frac;
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let plane = |k: usize| {
            let x0 = lerp(self.at(i, j, k), self.at(i + 1, j, k), fx);
            let x1 = lerp(self.at(i, j + 1, k), self.at(i + 1, j + 1, k), fx);
            lerp(x0, x1, fy)
        };
        if self.res[2] < 2 {
            plane(0)
        } else {
            lerp(plane(k), plane(k + 1), fz)
        }
    }
}
